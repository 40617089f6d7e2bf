"""Label-preserving trajectory augmentations for training.

A rigid world motion, a synchronized spatial scale, and a temporal
resampling. All of them transform clean and corrupted clips consistently,
so they are applied to the clean clip before corruption.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ..geometry.rigid import quat_canonical, quat_mul, quat_rotate, quat_slerp, random_quat
from ..trajectory import Trajectory
from ..validation import as_rng, check_trajectories, check_trajectory


@dataclass(frozen=True)
class AugmentConfig:
    rotate: bool = True                        # uniform random world rotation
    translation_sigma: float = 0.2             # m, gaussian world offset
    scale_range: tuple = (0.8, 1.2)            # synchronized spatial scale
    resample_range: tuple = (0.7, 1.3)         # temporal length factor

    def __post_init__(self):
        if self.translation_sigma < 0:
            raise ValueError("translation_sigma must be non-negative")
        for name in ("scale_range", "resample_range"):
            lo, hi = getattr(self, name)
            if not (0 < lo <= hi):
                raise ValueError(f"{name} must satisfy 0 < lo <= hi")


def resample_time(traj: Trajectory, factor: float) -> Trajectory:
    """Change the clip length by `factor`, keeping dt.

    Rotations are interpolated along geodesics, translations and joints
    linearly, validity by nearest neighbor. Keeping dt means the result is
    the same motion performed slower or faster.
    """
    if factor <= 0:
        raise ValueError("resample factor must be positive")
    T = traj.num_frames
    new_T = max(2, int(round(T * factor)))
    u = np.linspace(0.0, T - 1.0, new_T)
    i0 = np.floor(u).astype(np.int64)
    i1 = np.minimum(i0 + 1, T - 1)
    a = u - i0

    def lerp(arr):
        return arr[i0] + a.reshape(a.shape + (1,) * (arr.ndim - 1)) * (arr[i1] - arr[i0])

    wq = np.stack([quat_slerp(traj.wrist_quat[p], traj.wrist_quat[q], float(t))
                   for p, q, t in zip(i0, i1, a)])
    oq = np.stack([quat_slerp(traj.object_quat[p], traj.object_quat[q], float(t))
                   for p, q, t in zip(i0, i1, a)])
    return traj.replace(
        wrist_quat=quat_canonical(wq),
        wrist_trans=lerp(traj.wrist_trans),
        joints=lerp(traj.joints),
        object_quat=quat_canonical(oq),
        object_trans=lerp(traj.object_trans),
        valid=traj.valid[np.rint(u).astype(np.int64)],
    )


def augment(traj: Trajectory, config: AugmentConfig, seed) -> Trajectory:
    """Apply one random draw of the augmentation family.

    Draw order is fixed (rotation, translation, scale, resample factor)
    regardless of which effects are enabled, so seeds stay comparable
    across configs.
    """
    check_trajectory(traj)
    rng = as_rng(seed)
    g_quat = random_quat(rng)
    g_trans = rng.normal(scale=config.translation_sigma, size=3)
    scale = float(rng.uniform(*config.scale_range))
    factor = float(rng.uniform(*config.resample_range))

    wq, oq = traj.wrist_quat, traj.object_quat
    wt = traj.wrist_trans * scale
    ot = traj.object_trans * scale
    if config.rotate:
        wq = quat_canonical(quat_mul(g_quat, wq))
        oq = quat_canonical(quat_mul(g_quat, oq))
        wt = quat_rotate(g_quat, wt)
        ot = quat_rotate(g_quat, ot)
    out = traj.replace(
        wrist_quat=wq, wrist_trans=wt + g_trans,
        object_quat=oq, object_trans=ot + g_trans,
        scale=traj.scale * scale,
    )
    if factor != 1.0:
        out = resample_time(out, factor)
    return out


class TrajectoryAugmenter(BaseEstimator, TransformerMixin):
    """Stateless transformer drawing one augmentation per item.

    Item i uses the stream seeded by (seed, i), independent of list order.
    """

    def __init__(self, rotate=True, translation_sigma=0.2, scale_lo=0.8,
                 scale_hi=1.2, resample_lo=0.7, resample_hi=1.3, seed=0):
        self.rotate = rotate
        self.translation_sigma = translation_sigma
        self.scale_lo = scale_lo
        self.scale_hi = scale_hi
        self.resample_lo = resample_lo
        self.resample_hi = resample_hi
        self.seed = seed

    def _config(self) -> AugmentConfig:
        return AugmentConfig(rotate=self.rotate,
                             translation_sigma=self.translation_sigma,
                             scale_range=(self.scale_lo, self.scale_hi),
                             resample_range=(self.resample_lo, self.resample_hi))

    def fit(self, X, y=None):
        check_trajectories(X)
        self._config()
        self.n_items_ = len(list(X))
        return self

    def transform(self, X):
        cfg = self._config()
        return [augment(x, cfg, [int(self.seed), i])
                for i, x in enumerate(check_trajectories(X))]
