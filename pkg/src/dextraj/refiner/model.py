"""The trajectory refiner network.

Per frame, the input hand and object clouds are tokenized by a
shared-weight point encoder, exchanged through one bidirectional
cross-attention block, joined by a projected pose token, and fused by a
stack of intra-frame self-attention blocks (no positional encoding, so the
fusion is token-order equivariant).  The fused tokens are mean-pooled to
one vector per frame, given a sinusoidal positional encoding, and run
through a temporal transformer.  Output heads regress per-frame
corrections -- wrist rotation (axis-angle, composed on the left) and
translation, joint angles, object rotation and translation -- which are
added to the input trajectory.

The heads are zero-initialized, making the whole network an exact identity
on trajectories at construction time, and frames marked invalid are passed
through bit-identically at any parameter value.
"""

from dataclasses import dataclass, replace

import torch
from torch import nn

from ..diffgeom import TensorTracks, tq_exp, tq_mul
from ..geometry.mesh import TriangleMesh
from ..hand import HandModel
from ..trajectory import Trajectory
from .features import FrameFeatures, build_neighborhoods, extract_features
from .layers import (
    BidirectionalCrossAttention,
    MultiheadAttention,
    PointTokenEncoder,
    SelfAttentionBlock,
    seeded_init_,
    sinusoidal_encoding,
    zero_init_,
)


@dataclass(frozen=True)
class RefinerConfig:
    """Architecture hyperparameters (defaults: the desk-scale network)."""

    d: int = 64                 # hidden width
    k_hand: int = 16            # hand tokens per frame
    k_obj: int = 16             # object tokens per frame
    heads: int = 4
    fusion_layers: int = 2      # intra-frame self-attention depth
    temporal_layers: int = 2
    t_max: int = 120            # longest admissible clip
    pose_width: int = 34        # 14 pose values + J joint angles
    seed: int = 0
    # input cloud sampling
    n_hand: int = 64
    n_obj: int = 64
    n_neighbors: int = 16
    radius: float = 0.04

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError("d must be divisible by heads")
        if min(self.k_hand, self.k_obj) < 1:
            raise ValueError("token counts must be >= 1")
        if self.t_max < 1:
            raise ValueError("t_max must be >= 1")
        if self.n_hand < self.k_hand or self.n_obj < self.k_obj:
            raise ValueError("cloud sizes must be >= token counts")
        if self.pose_width < 15:
            raise ValueError("pose_width must cover 14 pose values + joints")

    @property
    def num_joints(self) -> int:
        return self.pose_width - 14


class TrajectoryRefiner(nn.Module):
    """Residual trajectory corrector; identity at initialization."""

    def __init__(self, config: RefinerConfig):
        super().__init__()
        self.config = config
        d = config.d
        self.point_encoder = PointTokenEncoder(d)
        self.cross = BidirectionalCrossAttention(d, config.heads)
        self.pose_proj = nn.Linear(config.pose_width, d, dtype=torch.float64)
        self.fusion = nn.ModuleList(
            [SelfAttentionBlock(d, config.heads) for _ in range(config.fusion_layers)])
        self.temporal = nn.ModuleList(
            [SelfAttentionBlock(d, config.heads) for _ in range(config.temporal_layers)])
        self.out_norm = nn.LayerNorm(d, dtype=torch.float64)
        J = config.num_joints
        self.head_wrist = nn.Linear(d, 6, dtype=torch.float64)
        self.head_joints = nn.Linear(d, J, dtype=torch.float64)
        self.head_object = nn.Linear(d, 6, dtype=torch.float64)

        gen = torch.Generator().manual_seed(int(config.seed))
        seeded_init_(self, gen)
        # zero heads: corrections start at exactly zero (identity network)
        for head in (self.head_wrist, self.head_joints, self.head_object):
            zero_init_(head)
        pe = sinusoidal_encoding(config.t_max, d)
        self.register_buffer("positional", pe, persistent=False)

    # -- stages, exposed individually for inspection --------------------------

    def encode_pointclouds(self, hand_cloud, object_cloud):
        """Tokenize two raw clouds (N,3) with the shared encoder -> (K,d) each.

        Single-frame convenience path; training uses precomputed
        neighborhoods from `features.extract_features`.
        """
        cfg = self.config
        hn = build_neighborhoods(hand_cloud, cfg.k_hand, cfg.radius,
                                 cfg.n_neighbors)
        on = build_neighborhoods(object_cloud, cfg.k_obj, cfg.radius,
                                 cfg.n_neighbors)
        h = self.point_encoder(torch.from_numpy(hn))
        o = self.point_encoder(torch.from_numpy(on))
        return h, o

    def cross_attend(self, h: torch.Tensor, o: torch.Tensor,
                     h_key_mask=None, o_key_mask=None):
        """Bidirectional token exchange; returns (h', o', attn_ho, attn_oh)."""
        squeeze = h.ndim == 2
        if squeeze:
            h, o = h[None], o[None]
            if h_key_mask is not None:
                h_key_mask = h_key_mask[None]
            if o_key_mask is not None:
                o_key_mask = o_key_mask[None]
        h2, o2, a_ho, a_oh = self.cross(h, o, h_key_mask, o_key_mask)
        if squeeze:
            return h2[0], o2[0], a_ho[0], a_oh[0]
        return h2, o2, a_ho, a_oh

    def fuse_frame(self, tokens: torch.Tensor):
        """Intra-frame self-attention over (K_H+K_O+1) tokens.

        tokens (..., K_H+K_O+1, d); returns (fused tokens, attention list).
        """
        expect = self.config.k_hand + self.config.k_obj + 1
        if tokens.shape[-2] != expect:
            raise ValueError(f"expected {expect} tokens, got {tokens.shape[-2]}")
        squeeze = tokens.ndim == 2
        x = tokens[None] if squeeze else tokens
        weights = []
        for block in self.fusion:
            x, w = block(x)
            weights.append(w)
        return (x[0] if squeeze else x), weights

    # -- full forward ----------------------------------------------------------

    def corrections(self, feats: FrameFeatures):
        """Per-frame corrections (wrist 6, joints J, object 6) from features."""
        B, T = feats.mask.shape
        if T > self.config.t_max:
            raise ValueError(f"clip length {T} exceeds t_max={self.config.t_max}")
        if feats.pose.shape[-1] != self.config.pose_width:
            raise ValueError(
                f"pose feature width {feats.pose.shape[-1]} != "
                f"configured {self.config.pose_width}")

        h = self.point_encoder(feats.hand_neigh)    # (B,T,K_H,d)
        o = self.point_encoder(feats.obj_neigh)     # (B,T,K_O,d)
        d = self.config.d
        h = h.reshape(B * T, -1, d)
        o = o.reshape(B * T, -1, d)
        h, o, _, _ = self.cross(h, o)
        pose_tok = self.pose_proj(feats.pose).reshape(B * T, 1, d)
        z = torch.cat([h, o, pose_tok], dim=1)
        for block in self.fusion:
            z, _ = block(z)
        z = z.mean(dim=1).reshape(B, T, d)

        z = z + self.positional[:T]
        for block in self.temporal:
            z, _ = block(z, key_mask=feats.mask)
        z = self.out_norm(z)

        return self.head_wrist(z), self.head_joints(z), self.head_object(z)

    def forward(self, tracks: TensorTracks, feats: FrameFeatures) -> TensorTracks:
        """Apply predicted corrections to the input tracks.

        Invalid frames are returned bit-identically.  Under ``no_grad`` (the
        inference path) any field whose correction is exactly zero is also
        passed through bit-identically, hence the exact identity at init.
        The passthrough shortcut is skipped while autograd is recording
        because ``torch.where`` blocks gradients into the unselected branch,
        which would freeze the zero-initialized heads forever.
        """
        dw, dj, do = self.corrections(feats)
        valid = tracks.mask[..., None]
        exact = not torch.is_grad_enabled()

        def apply_pose(quat, trans, delta6):
            rot, dt = delta6[..., 0:3], delta6[..., 3:6]
            q_new = tq_mul(tq_exp(rot), quat)
            t_new = trans + dt
            if exact:
                q_new = torch.where((rot == 0).all(-1, keepdim=True), quat, q_new)
                t_new = torch.where(dt == 0, trans, t_new)
            return (torch.where(valid, q_new, quat),
                    torch.where(valid, t_new, trans))

        wq, wt = apply_pose(tracks.wrist_quat, tracks.wrist_trans, dw)
        oq, ot = apply_pose(tracks.object_quat, tracks.object_trans, do)
        joints = tracks.joints + dj
        if exact:
            joints = torch.where(dj == 0, tracks.joints, joints)
        joints = torch.where(valid, joints, tracks.joints)
        return TensorTracks(wrist_quat=wq, wrist_trans=wt, joints=joints,
                            object_quat=oq, object_trans=ot, mask=tracks.mask)


def refine_trajectory(net: TrajectoryRefiner, traj: Trajectory,
                      mesh: TriangleMesh, model: HandModel,
                      scale: float | None = None) -> Trajectory:
    """Run the refiner on one trajectory and return the corrected copy."""
    if scale is None:
        scale = traj.scale
    feats = extract_features([traj], mesh, net.config, model, scales=[scale])
    tracks = TensorTracks.from_trajectories([traj])
    with torch.no_grad():
        out = net(tracks, feats)
    return out.to_trajectories([traj])[0]
