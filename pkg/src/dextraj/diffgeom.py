"""Differentiable (torch) mirrors of the core pose and kinematics math.

Everything here runs in double precision and is written so that autograd
never sees a NaN: each branch of every `torch.where` is finite on the full
input domain (clamped sqrt arguments, Taylor fallbacks near singularities).
The numpy implementations in `geometry` and `hand` stay the source of truth
for file formats and oracles; these mirrors exist for gradient flow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .hand import HandModel
from .trajectory import Trajectory

_EPS2 = 1e-24  # clamp for squared norms ahead of sqrt


def tq_mul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Hamilton product, scalar-first, broadcasting over leading dims."""
    aw, ax, ay, az = a.unbind(-1)
    bw, bx, by, bz = b.unbind(-1)
    return torch.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        dim=-1,
    )


def tq_conj(q: torch.Tensor) -> torch.Tensor:
    w, x, y, z = q.unbind(-1)
    return torch.stack([w, -x, -y, -z], dim=-1)


def tq_rotate(q: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Rotate vectors by unit quaternions (expanded sandwich product)."""
    w = q[..., 0]
    ux, uy, uz = q[..., 1], q[..., 2], q[..., 3]
    vx, vy, vz = v[..., 0], v[..., 1], v[..., 2]
    tx = 2.0 * (uy * vz - uz * vy)
    ty = 2.0 * (uz * vx - ux * vz)
    tz = 2.0 * (ux * vy - uy * vx)
    return torch.stack(
        [
            vx + w * tx + (uy * tz - uz * ty),
            vy + w * ty + (uz * tx - ux * tz),
            vz + w * tz + (ux * ty - uy * tx),
        ],
        dim=-1,
    )


def tq_exp(rotvec: torch.Tensor) -> torch.Tensor:
    """Axis-angle vector -> unit quaternion, smooth through zero."""
    n2 = (rotvec * rotvec).sum(-1, keepdim=True)
    n = torch.sqrt(torch.clamp(n2, min=_EPS2))
    half = 0.5 * n
    # sin(x/2)/x: Taylor below 1e-4 keeps both where-branches finite
    k_direct = torch.sin(half) / n
    k_taylor = 0.5 - n2 / 48.0
    k = torch.where(n < 1e-4, k_taylor, k_direct)
    w = torch.cos(half)
    return torch.cat([w, rotvec * k], dim=-1)


def tq_log(q: torch.Tensor) -> torch.Tensor:
    """Unit quaternion -> axis-angle vector on the principal branch."""
    w = q[..., :1]
    xyz = q[..., 1:]
    sign = torch.where(w < 0.0, -torch.ones_like(w), torch.ones_like(w))
    w = w * sign
    xyz = xyz * sign
    n2 = (xyz * xyz).sum(-1, keepdim=True)
    n = torch.sqrt(torch.clamp(n2, min=_EPS2))
    angle = 2.0 * torch.atan2(n, w)
    k_direct = angle / n
    w_safe = torch.clamp(w, min=1e-6)
    k_taylor = 2.0 / w_safe - 2.0 * n2 / (3.0 * w_safe**3)
    k = torch.where(n < 1e-4, k_taylor, k_direct)
    return xyz * k


def tq_norm_safe(v: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Euclidean norm whose gradient is finite at zero (clamped sqrt)."""
    return torch.sqrt(torch.clamp((v * v).sum(dim), min=_EPS2))


_MODEL_CONST_CACHE: dict = {}


def _model_constants(model: HandModel) -> dict:
    key = model.content_hash()
    if key not in _MODEL_CONST_CACHE:
        _MODEL_CONST_CACHE[key] = {
            "offsets": torch.from_numpy(np.ascontiguousarray(model._offsets)),
            "axes": torch.from_numpy(np.ascontiguousarray(model._axes)),
            "parent": model._parent_idx.copy(),
            "is_joint": model._is_joint.copy(),
            "joint_of_link": {int(li): k for k, li in enumerate(model._joint_link_idx)},
        }
    return _MODEL_CONST_CACHE[key]


def t_fk(model: HandModel, wrist_quat: torch.Tensor, wrist_trans: torch.Tensor,
         joints: torch.Tensor, scale=1.0):
    """Differentiable forward kinematics; mirrors `HandModel.fk` exactly.

    Link frame = parent frame ∘ translate(offset·scale) ∘ rotate(axis, θ).
    Returns (quats (..., L, 4), trans (..., L, 3)).
    """
    c = _model_constants(model)
    L = model.n_links
    qs: list = [None] * L
    ts: list = [None] * L
    qs[0] = wrist_quat
    ts[0] = wrist_trans
    for i in range(1, L):
        p = int(c["parent"][i])
        off = c["offsets"][i].to(wrist_trans.dtype)
        t_i = ts[p] + tq_rotate(qs[p], off * scale)
        if c["is_joint"][i]:
            k = c["joint_of_link"][i]
            half = 0.5 * joints[..., k]
            axis = c["axes"][k].to(wrist_quat.dtype)
            qj = torch.cat(
                [torch.cos(half)[..., None], torch.sin(half)[..., None] * axis], dim=-1)
            qs[i] = tq_mul(qs[p], qj)
        else:
            qs[i] = qs[p]
        ts[i] = t_i
    return torch.stack(qs, dim=-2), torch.stack(ts, dim=-2)


def t_surface_points(model: HandModel, wrist_quat: torch.Tensor,
                     wrist_trans: torch.Tensor, joints: torch.Tensor,
                     v: int, scale=1.0) -> torch.Tensor:
    """Differentiable skin surface points, index-aligned with the numpy path."""
    link_idx, local = model.surface_pattern(v)
    idx = torch.from_numpy(link_idx.copy())
    q, t = t_fk(model, wrist_quat, wrist_trans, joints, scale=scale)
    lq = q[..., idx, :]
    lt = t[..., idx, :]
    pts = torch.from_numpy(local.copy()).to(wrist_trans.dtype)
    return tq_rotate(lq, pts * scale) + lt


def t_joint_positions(model: HandModel, wrist_quat, wrist_trans, joints, scale=1.0):
    """Differentiable joint-frame origins (the landmark set for hand error)."""
    _, t = t_fk(model, wrist_quat, wrist_trans, joints, scale=scale)
    return t[..., model._joint_link_idx, :]


@dataclass
class TensorTracks:
    """One batch of trajectories as padded double tensors.

    Shapes: wrist_quat (B,T,4), wrist_trans (B,T,3), joints (B,T,J),
    object_quat (B,T,4), object_trans (B,T,3), mask (B,T) bool. Padded
    frames carry identity poses and are masked out.
    """

    wrist_quat: torch.Tensor
    wrist_trans: torch.Tensor
    joints: torch.Tensor
    object_quat: torch.Tensor
    object_trans: torch.Tensor
    mask: torch.Tensor

    @classmethod
    def from_trajectories(cls, trajs: list[Trajectory], pad_to: int | None = None) -> "TensorTracks":
        B = len(trajs)
        J = trajs[0].num_joints
        T = max(t.num_frames for t in trajs)
        if pad_to is not None:
            if T > pad_to:
                raise ValueError(f"clip length {T} exceeds pad_to={pad_to}")
            T = pad_to
        wq = np.zeros((B, T, 4))
        wq[..., 0] = 1.0
        oq = wq.copy()
        wt = np.zeros((B, T, 3))
        ot = np.zeros((B, T, 3))
        jj = np.zeros((B, T, J))
        mask = np.zeros((B, T), dtype=bool)
        for b, tr in enumerate(trajs):
            n = tr.num_frames
            wq[b, :n] = tr.wrist_quat
            wt[b, :n] = tr.wrist_trans
            jj[b, :n] = tr.joints
            oq[b, :n] = tr.object_quat
            ot[b, :n] = tr.object_trans
            mask[b, :n] = tr.valid
        return cls(
            wrist_quat=torch.from_numpy(wq), wrist_trans=torch.from_numpy(wt),
            joints=torch.from_numpy(jj), object_quat=torch.from_numpy(oq),
            object_trans=torch.from_numpy(ot), mask=torch.from_numpy(mask))

    def to_trajectories(self, template: list[Trajectory]) -> list[Trajectory]:
        """Unpad back onto the originals (dt, ids and valid flags kept)."""
        out = []
        for b, tr in enumerate(template):
            n = tr.num_frames
            out.append(tr.replace(
                wrist_quat=_canon(self.wrist_quat[b, :n]),
                wrist_trans=self.wrist_trans[b, :n].detach().numpy().copy(),
                joints=self.joints[b, :n].detach().numpy().copy(),
                object_quat=_canon(self.object_quat[b, :n]),
                object_trans=self.object_trans[b, :n].detach().numpy().copy(),
            ))
        return out


def _canon(q: torch.Tensor) -> np.ndarray:
    arr = q.detach().numpy().copy()
    arr[arr[..., 0] < 0.0] *= -1.0
    return arr
