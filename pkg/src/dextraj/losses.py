"""Training objective for trajectory refinement.

Five ingredients: corresponding-point cloud error for the object and the
hand skin, squared joint-angle error, a directional smoothness hinge on
consecutive relative rotations and velocities, and a penetration hinge on
signed distances of hand skin points into the posed object. All terms are
plain double-precision torch so gradients flow to every pose and joint.

Conventions shared by all terms: masks are per-frame, invalid frames carry
zero weight everywhere, and an all-invalid mask is an error. Cloud terms
normalize by (number of valid frames x points per cloud); the joint term by
valid frames; the smoothness term is a raw sum over valid triples, which
keeps a single direction reversal scoring exactly 1. A length-normalized
smoothness variant is provided for cross-length comparisons but never used
in the trained objective.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
import torch

from .diffgeom import TensorTracks, t_surface_points, tq_conj, tq_log, tq_mul, tq_rotate
from .geometry.mesh import TriangleMesh
from .hand import HandModel


@dataclass(frozen=True)
class LossWeights:
    """Non-negative weights of the combined objective."""

    object_cloud: float = 1.0   # cloud term, object
    hand_cloud: float = 1.0     # cloud term, hand skin
    joint_angle: float = 0.5    # squared joint error inside the recon term
    rec: float = 1.0            # reconstruction block in the total
    smooth: float = 0.1
    pene: float = 10.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{f.name} must be finite and >= 0")


@dataclass(frozen=True)
class LossReport:
    """Scalar values of every term (floats, detached)."""

    object_cloud: float
    hand_cloud: float
    joint_angle: float
    rec: float
    smooth: float
    pene: float
    total: float

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _check_mask(mask: torch.Tensor) -> torch.Tensor:
    if mask.dtype != torch.bool:
        raise TypeError("mask must be boolean")
    if not bool(mask.any()):
        raise ValueError("all frames are masked out")
    return mask.to(torch.float64)


def pc_loss(pred: torch.Tensor, gt: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean distance between corresponding points, masked per frame.

    pred, gt: (B,T,M,3); mask: (B,T) bool. Normalization is by
    (valid frames x M), so a uniform offset of every point by a vector d
    evaluates to ||d||.
    """
    if pred.shape != gt.shape:
        raise ValueError("pred/gt point sets must have identical shapes")
    m = _check_mask(mask)
    diff = pred - gt
    sq = (diff * diff).sum(-1)
    d = torch.sqrt(torch.clamp(sq, min=1e-24))
    d = torch.where(sq > 0, d, torch.zeros_like(d))  # exact 0 on exact match
    return (d * m[..., None]).sum() / (m.sum() * pred.shape[-2])


def ja_loss(pred: torch.Tensor, gt: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Masked mean over frames of the squared joint-vector error (rad^2)."""
    if pred.shape != gt.shape:
        raise ValueError("pred/gt joint tracks must have identical shapes")
    m = _check_mask(mask)
    sq = ((pred - gt) ** 2).sum(-1)
    return (sq * m).sum() / m.sum()


def rec_loss(pred_obj_pts, gt_obj_pts, pred_hand_pts, gt_hand_pts,
             pred_joints, gt_joints, mask, weights: LossWeights):
    """Reconstruction block: weighted object-cloud + hand-cloud + joint terms.

    Returns (total, object_cloud, hand_cloud, joint_angle) tensors.
    """
    lo = pc_loss(pred_obj_pts, gt_obj_pts, mask)
    lh = pc_loss(pred_hand_pts, gt_hand_pts, mask)
    lj = ja_loss(pred_joints, gt_joints, mask)
    total = weights.object_cloud * lo + weights.hand_cloud * lh + weights.joint_angle * lj
    return total, lo, lh, lj


def _track_smooth(quat: torch.Tensor, trans: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    # relative rotation vectors between consecutive frames: (B, T-1, 3)
    rel = tq_log(tq_mul(tq_conj(quat[:, :-1]), quat[:, 1:]))
    alpha = (rel[:, :-1] * rel[:, 1:]).sum(-1)  # (B, T-2)

    v = trans[:, 1:] - trans[:, :-1]
    sq = (v * v).sum(-1)
    n = torch.sqrt(torch.clamp(sq, min=1e-24))
    dot = (v[:, :-1] * v[:, 1:]).sum(-1)
    denom = torch.clamp(n[:, :-1] * n[:, 1:], min=1e-24)
    gamma = dot / denom
    # a velocity under 1e-12 has no meaningful direction: its cosine is 0
    defined = (sq[:, :-1] >= 1e-24) & (sq[:, 1:] >= 1e-24)
    gamma = torch.where(defined, gamma, torch.zeros_like(gamma))

    triple = (mask[:, :-2] & mask[:, 1:-1] & mask[:, 2:]).to(quat.dtype)
    hinge = torch.relu(-alpha) + torch.relu(-gamma)
    return (hinge * triple).sum()


def smooth_loss(tracks: TensorTracks, bodies: str = "both") -> torch.Tensor:
    """Directional smoothness hinge, raw sum over valid frame triples.

    For each pose track and each triple of consecutive valid frames,
    penalizes a negative dot product of the two relative rotation vectors
    and a negative cosine between the two translational velocities.
    `bodies` selects "wrist", "object", or "both" (summed).
    """
    if bodies not in ("wrist", "object", "both"):
        raise ValueError("bodies must be 'wrist', 'object' or 'both'")
    if tracks.wrist_quat.shape[1] < 3:
        return torch.zeros((), dtype=torch.float64)
    total = torch.zeros((), dtype=torch.float64)
    if bodies in ("wrist", "both"):
        total = total + _track_smooth(tracks.wrist_quat, tracks.wrist_trans, tracks.mask)
    if bodies in ("object", "both"):
        total = total + _track_smooth(tracks.object_quat, tracks.object_trans, tracks.mask)
    return total


def smooth_loss_normalized(tracks: TensorTracks, bodies: str = "both") -> torch.Tensor:
    """Smoothness hinge averaged over valid triples (cross-length comparable).

    Not part of the trained objective; the raw sum above is.
    """
    m = tracks.mask
    if m.shape[1] < 3:
        return torch.zeros((), dtype=torch.float64)
    triples = (m[:, :-2] & m[:, 1:-1] & m[:, 2:]).sum()
    if int(triples) == 0:
        return torch.zeros((), dtype=torch.float64)
    return smooth_loss(tracks, bodies) / triples.to(torch.float64)


def pene_loss(hand_points: torch.Tensor, object_quat: torch.Tensor,
              object_trans: torch.Tensor, meshes, mask: torch.Tensor,
              scales=None) -> torch.Tensor:
    """Penetration hinge: mean over (valid frames x points) of max(0, -delta).

    hand_points (B,T,V,3) are world-frame skin points; delta is the signed
    distance of each to the object surface posed per frame. The closest
    surface point and the sign are found without gradients; the returned
    distance differentiates through the query point (exact wherever the
    closest point is unique, the standard envelope argument).

    meshes: one TriangleMesh or a list of B of them, in canonical frame;
    scales: optional (B,) uniform mesh scales.
    """
    m = _check_mask(mask)
    B, T, V, _ = hand_points.shape
    if isinstance(meshes, TriangleMesh):
        meshes = [meshes] * B
    if len(meshes) != B:
        raise ValueError("need one mesh per batch item")
    if scales is None:
        scales = np.ones(B)
    scales = np.asarray(scales, dtype=float)

    local = tq_rotate(tq_conj(object_quat)[:, :, None, :],
                      hand_points - object_trans[:, :, None, :])
    # masked-out frames keep closest == point: zero distance, zero weight
    closest = local.detach().clone()
    sign = torch.ones((B, T, V), dtype=torch.float64)
    with torch.no_grad():
        pts = local.detach().numpy()
        for b in range(B):
            rows = np.flatnonzero(mask[b].numpy())
            if rows.size == 0:
                continue
            q = (pts[b, rows] / scales[b]).reshape(-1, 3)
            cp, sd = meshes[b].signed_closest(q)
            closest[b, rows] = torch.from_numpy(
                (cp * scales[b]).reshape(rows.size, V, 3))
            sign[b, rows] = torch.from_numpy(
                np.where(sd < 0, -1.0, 1.0).reshape(rows.size, V))

    diff = local - closest
    sq = (diff * diff).sum(-1)
    dist = torch.sqrt(torch.clamp(sq, min=1e-24))
    dist = torch.where(sq > 0, dist, torch.zeros_like(dist))
    delta = sign * dist
    return (torch.relu(-delta) * m[..., None]).sum() / (m.sum() * V)


@dataclass(frozen=True)
class LossConfig:
    """Sampling sizes and options for the combined objective."""

    cloud_points: int = 512     # M: correspondence cloud size (object and hand)
    pene_points: int = 256      # V: skin points tested for penetration
    smooth_bodies: str = "both"

    def __post_init__(self):
        if self.cloud_points < 1 or self.pene_points < 1:
            raise ValueError("point counts must be >= 1")


def total_loss(pred: TensorTracks, gt: TensorTracks, model: HandModel, meshes,
               weights: LossWeights | None = None,
               config: LossConfig | None = None, scales=None):
    """Full objective on a batch; returns (scalar tensor, LossReport).

    The mask is the predicted tracks' mask (invalid frames pass through the
    optimizer untouched and must not be scored). Penetration is measured
    between the predicted hand and the predicted object pose, because the
    output trajectory is the one that must be physically consistent.
    """
    weights = weights or LossWeights()
    config = config or LossConfig()
    mask = pred.mask
    if scales is None:
        scales = np.ones(pred.wrist_quat.shape[0])

    B = pred.wrist_quat.shape[0]
    if isinstance(meshes, TriangleMesh):
        meshes = [meshes] * B
    obj_local = [torch.from_numpy(m.canonical_samples(config.cloud_points).copy())
                 for m in meshes]

    # hand skin scale: per-item scale applies to the model too
    def hand_pts(tracks, v):
        if np.all(scales == 1.0):
            return t_surface_points(model, tracks.wrist_quat, tracks.wrist_trans,
                                    tracks.joints, v)
        per = [t_surface_points(model, tracks.wrist_quat[b], tracks.wrist_trans[b],
                                tracks.joints[b], v, scale=float(scales[b]))
               for b in range(B)]
        return torch.stack(per)

    pts = torch.stack([obj_local[b] * float(scales[b]) for b in range(B)])
    pred_obj = tq_rotate(pred.object_quat[:, :, None, :], pts[:, None, :, :]) \
        + pred.object_trans[:, :, None, :]
    gt_obj = tq_rotate(gt.object_quat[:, :, None, :], pts[:, None, :, :]) \
        + gt.object_trans[:, :, None, :]
    pred_hand = hand_pts(pred, config.cloud_points)
    gt_hand = hand_pts(gt, config.cloud_points)

    l_rec, l_obj, l_hand, l_ja = rec_loss(pred_obj, gt_obj, pred_hand, gt_hand,
                                          pred.joints, gt.joints, mask, weights)
    l_smooth = smooth_loss(pred, config.smooth_bodies)
    pene_pts = hand_pts(pred, config.pene_points)
    l_pene = pene_loss(pene_pts, pred.object_quat, pred.object_trans, meshes,
                       mask, scales=scales)
    total = weights.rec * l_rec + weights.smooth * l_smooth + weights.pene * l_pene
    vals = [float(x.detach()) for x in (l_obj, l_hand, l_ja, l_rec, l_smooth, l_pene, total)]
    report = LossReport(object_cloud=vals[0], hand_cloud=vals[1], joint_angle=vals[2],
                        rec=vals[3], smooth=vals[4], pene=vals[5], total=vals[6])
    return total, report
