"""Building blocks of the trajectory refiner network.

Everything runs in double precision.  Attention is written out explicitly
(no fused kernels) so that weight rows can be inspected in tests and the
whole stack is differentiable end to end with plain autograd.

Masking convention: boolean key masks mark *usable* positions.  Scores of
masked-out keys are shifted by a large negative constant rather than -inf;
the shift underflows to an exact zero weight after softmax while keeping
rows whose keys are all masked finite (they degrade to a uniform mix, and
callers discard those rows).
"""

import math

import torch
from torch import nn

# finite stand-in for -inf: exp(-1e30 - max) underflows to exactly 0.0
_MASK_SHIFT = -1e30


def sinusoidal_encoding(length: int, d: int, dtype=torch.float64) -> torch.Tensor:
    """Standard sine/cosine positional table, shape (length, d)."""
    pos = torch.arange(length, dtype=dtype)[:, None]
    i = torch.arange(0, d, 2, dtype=dtype)[None, :]
    ang = pos / torch.pow(torch.tensor(10000.0, dtype=dtype), i / d)
    pe = torch.zeros(length, d, dtype=dtype)
    pe[:, 0::2] = torch.sin(ang)
    pe[:, 1::2] = torch.cos(ang[:, : d // 2])
    return pe


def _linear(d_in: int, d_out: int) -> nn.Linear:
    return nn.Linear(d_in, d_out, dtype=torch.float64)


def seeded_init_(module: nn.Module, generator: torch.Generator) -> None:
    """Re-initialize every Linear in `module` from `generator`.

    Mirrors the default Linear init (uniform +-1/sqrt(fan_in)) but draws
    from an explicit generator so construction is reproducible regardless
    of global RNG state.  Iteration order is the registration order of
    named_modules, which is fixed by the architecture.
    """
    for _, sub in module.named_modules():
        if isinstance(sub, nn.Linear):
            bound = 1.0 / math.sqrt(sub.in_features)
            with torch.no_grad():
                sub.weight.uniform_(-bound, bound, generator=generator)
                if sub.bias is not None:
                    sub.bias.uniform_(-bound, bound, generator=generator)


def zero_init_(linear: nn.Linear) -> None:
    with torch.no_grad():
        linear.weight.zero_()
        if linear.bias is not None:
            linear.bias.zero_()


class MultiheadAttention(nn.Module):
    """Plain multi-head attention with separate q/k/v/out projections."""

    def __init__(self, d: int, heads: int):
        super().__init__()
        if d % heads != 0:
            raise ValueError("hidden width must be divisible by the head count")
        self.d = d
        self.heads = heads
        self.head_dim = d // heads
        self.q_proj = _linear(d, d)
        self.k_proj = _linear(d, d)
        self.v_proj = _linear(d, d)
        self.out_proj = _linear(d, d)

    def forward(self, query: torch.Tensor, key_value: torch.Tensor,
                key_mask: torch.Tensor | None = None):
        """query (B,Q,d), key_value (B,S,d), key_mask (B,S) bool (True=usable).

        Returns (output (B,Q,d), attention (B,heads,Q,S)); attention rows
        sum to 1.
        """
        B, Q, _ = query.shape
        S = key_value.shape[1]

        def split(x, n):
            return x.view(B, n, self.heads, self.head_dim).transpose(1, 2)

        q = split(self.q_proj(query), Q)
        k = split(self.k_proj(key_value), S)
        v = split(self.v_proj(key_value), S)
        scores = (q @ k.transpose(-1, -2)) / math.sqrt(self.head_dim)
        if key_mask is not None:
            scores = scores + torch.where(
                key_mask[:, None, None, :], 0.0, _MASK_SHIFT)
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(B, Q, self.d)
        return self.out_proj(out), attn


class FeedForward(nn.Module):
    def __init__(self, d: int, hidden: int | None = None):
        super().__init__()
        self.fc1 = _linear(d, hidden or 4 * d)
        self.fc2 = _linear(hidden or 4 * d, d)

    def forward(self, x):
        return self.fc2(torch.nn.functional.gelu(self.fc1(x)))


class SelfAttentionBlock(nn.Module):
    """Pre-norm residual block: self-attention followed by a feed-forward."""

    def __init__(self, d: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(d, dtype=torch.float64)
        self.attn = MultiheadAttention(d, heads)
        self.norm2 = nn.LayerNorm(d, dtype=torch.float64)
        self.ffn = FeedForward(d)

    def forward(self, x: torch.Tensor, key_mask: torch.Tensor | None = None):
        h = self.norm1(x)
        a, weights = self.attn(h, h, key_mask)
        x = x + a
        x = x + self.ffn(self.norm2(x))
        return x, weights


class BidirectionalCrossAttention(nn.Module):
    """Hand tokens attend to object tokens and vice versa, with residuals."""

    def __init__(self, d: int, heads: int):
        super().__init__()
        self.norm_h = nn.LayerNorm(d, dtype=torch.float64)
        self.norm_o = nn.LayerNorm(d, dtype=torch.float64)
        self.h_from_o = MultiheadAttention(d, heads)
        self.o_from_h = MultiheadAttention(d, heads)

    def forward(self, h: torch.Tensor, o: torch.Tensor,
                h_key_mask: torch.Tensor | None = None,
                o_key_mask: torch.Tensor | None = None):
        """h (B,K_H,d), o (B,K_O,d); key masks select usable tokens.

        Returns (h', o', attn_h_from_o, attn_o_from_h).  Both updates read
        the *input* token sets, so the two directions are symmetric.
        """
        hn, on = self.norm_h(h), self.norm_o(o)
        dh, a_ho = self.h_from_o(hn, on, o_key_mask)
        do, a_oh = self.o_from_h(on, hn, h_key_mask)
        return h + dh, o + do, a_ho, a_oh


class PointTokenEncoder(nn.Module):
    """Shared MLP + max-pool over precomputed point neighborhoods.

    Input features per neighbor: (relative offset to center, center
    position), 6 values.  Max-pooling over the neighbor axis makes the
    token invariant to neighbor order and to duplicate padding.
    """

    def __init__(self, d: int):
        super().__init__()
        self.fc1 = _linear(6, d)
        self.fc2 = _linear(d, d)

    def forward(self, neigh: torch.Tensor) -> torch.Tensor:
        """neigh (..., K, n, 6) -> tokens (..., K, d)."""
        x = torch.relu(self.fc1(neigh))
        x = self.fc2(x)
        return x.amax(dim=-2)
