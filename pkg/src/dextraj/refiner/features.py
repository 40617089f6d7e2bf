"""Per-frame network inputs derived from a trajectory.

The refiner reads, for every frame, a hand skin cloud and an object
surface cloud (both posed by the *input* trajectory) reduced to K local
neighborhoods each, plus a flat pose feature vector.  None of this needs
gradients: inputs are fixed during training, so everything here is plain
numpy, converted to constant tensors at the end.  Features are therefore
safe to compute once per item and reuse across epochs.

All positions are centered on the clip's mean valid object translation so
the network never sees large absolute coordinates; corrections predicted
from centered features are displacement-valued and need no un-centering.
"""

from dataclasses import dataclass

import numpy as np
import torch

from ..geometry.cloud import ball_query, fps
from ..geometry.mesh import TriangleMesh
from ..geometry.rigid import quat_rotate
from ..hand import HandModel
from ..trajectory import Trajectory


@dataclass
class FrameFeatures:
    """Constant network inputs for one batch.

    hand_neigh, obj_neigh: (B, T, K, n_max, 6) float64 — per neighbor the
    offset to its center and the center position, both centered per clip.
    pose: (B, T, 14+J) float64 — wrist quat+trans, joints, object
    quat+trans with centered translations.
    center: (B, 3) — the subtracted reference point.
    mask: (B, T) bool — valid frames (padding is False).
    """

    hand_neigh: torch.Tensor
    obj_neigh: torch.Tensor
    pose: torch.Tensor
    center: torch.Tensor
    mask: torch.Tensor


def build_neighborhoods(cloud: np.ndarray, k: int, radius: float,
                        n_max: int) -> np.ndarray:
    """FPS centers + ball-query neighborhoods as MLP-ready features.

    Returns (k, n_max, 6): columns 0:3 are neighbor offsets from the
    center, 3:6 the center itself.  Neighborhoods shorter than n_max are
    padded by repeating the nearest neighbor (the center point, which is
    always in its own ball), which max-pooling ignores.
    """
    cloud = np.asarray(cloud, dtype=float)
    if cloud.ndim != 2 or cloud.shape[1] != 3:
        raise ValueError("cloud must have shape (N, 3)")
    if cloud.shape[0] < k:
        raise ValueError(f"cloud has {cloud.shape[0]} points, needs >= {k}")
    centers = cloud[fps(cloud, k)]
    out = np.zeros((k, n_max, 6))
    for i, c in enumerate(centers):
        idx = ball_query(c, cloud, radius, n_max)
        take = np.full(n_max, idx[0], dtype=np.int64)
        take[: idx.shape[0]] = idx
        out[i, :, 0:3] = cloud[take] - c
        out[i, :, 3:6] = c
    return out


def _object_cloud(mesh: TriangleMesh, n: int, quat: np.ndarray,
                  trans: np.ndarray, scale: float) -> np.ndarray:
    local = mesh.canonical_samples(n) * scale
    return quat_rotate(quat[None, :], local) + trans


def clip_center(traj: Trajectory) -> np.ndarray:
    """Reference point for centering: mean object translation over valid
    frames (over all frames if none are valid)."""
    if traj.valid.any():
        return traj.object_trans[traj.valid].mean(axis=0)
    return traj.object_trans.mean(axis=0)


def extract_features(trajs: list[Trajectory], meshes, config,
                     model: HandModel, scales=None,
                     pad_to: int | None = None) -> FrameFeatures:
    """Build FrameFeatures for a batch of trajectories.

    `config` is a RefinerConfig (cloud sizes, K, radii, n_max).  `meshes`
    is one TriangleMesh or a list per item; `scales` likewise scalar per
    item (default 1).
    """
    B = len(trajs)
    if isinstance(meshes, TriangleMesh):
        meshes = [meshes] * B
    if scales is None:
        scales = [1.0] * B
    T = max(t.num_frames for t in trajs)
    if pad_to is not None:
        if T > pad_to:
            raise ValueError(f"clip length {T} exceeds pad_to={pad_to}")
        T = pad_to
    J = trajs[0].num_joints

    hand = np.zeros((B, T, config.k_hand, config.n_neighbors, 6))
    obj = np.zeros((B, T, config.k_obj, config.n_neighbors, 6))
    pose = np.zeros((B, T, 14 + J))
    center = np.zeros((B, 3))
    mask = np.zeros((B, T), dtype=bool)

    for b, tr in enumerate(trajs):
        c = clip_center(tr)
        center[b] = c
        skin = model.surface_points(tr.wrist_quat, tr.wrist_trans, tr.joints,
                                    config.n_hand, scale=scales[b])
        for t in range(tr.num_frames):
            hand[b, t] = build_neighborhoods(
                skin[t] - c, config.k_hand, config.radius,
                config.n_neighbors)
            oc = _object_cloud(meshes[b], config.n_obj, tr.object_quat[t],
                               tr.object_trans[t], scales[b])
            obj[b, t] = build_neighborhoods(
                oc - c, config.k_obj, config.radius, config.n_neighbors)
        n = tr.num_frames
        pose[b, :n, 0:4] = tr.wrist_quat
        pose[b, :n, 4:7] = tr.wrist_trans - c
        pose[b, :n, 7:7 + J] = tr.joints
        pose[b, :n, 7 + J:11 + J] = tr.object_quat
        pose[b, :n, 11 + J:14 + J] = tr.object_trans - c
        pose[b, n:, 0] = 1.0
        pose[b, n:, 7 + J] = 1.0
        mask[b, :n] = tr.valid

    return FrameFeatures(
        hand_neigh=torch.from_numpy(hand), obj_neigh=torch.from_numpy(obj),
        pose=torch.from_numpy(pose), center=torch.from_numpy(center),
        mask=torch.from_numpy(mask))
