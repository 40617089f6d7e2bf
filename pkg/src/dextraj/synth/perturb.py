"""Corrupt clean trajectories the way upstream hand tracking does.

Five effects, each independently scaled: per-frame pose noise on wrist and
object, one accumulated random-walk drift shared by both translations (a
tracking stack loses registration as a whole, which keeps the walk
observable while the object rests), a per-clip hand-to-object bias with
per-frame jitter on top (applied to the wrist only), i.i.d. joint angle
noise, and frame dropouts that only clear validity flags.

Every draw happens in a fixed order from one generator, so a seed pins the
corruption exactly, and the full realization is returned so it can be
undone bit-for-bit (to float round-off) for debugging and testing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ..geometry.rigid import quat_canonical, quat_from_axis_angle, quat_mul
from ..trajectory import Trajectory
from ..validation import as_rng, check_trajectories, check_trajectory


@dataclass(frozen=True)
class PerturbConfig:
    """Noise scales. Defaults match the trained operating point."""

    sigma_rot: float = 0.05        # rad, per-frame, wrist and object
    sigma_trans: float = 0.01      # m, per-frame, wrist and object
    drift_sigma: float = 0.002     # m per step, shared translation walk
    bias_magnitude: float = 0.005  # m, constant wrist offset per clip
    jitter_sigma: float = 0.005    # m, per-frame wrist jitter
    sigma_joint: float = 0.05      # rad, per joint per frame
    dropout_rate: float = 0.0      # probability a frame is marked invalid

    def __post_init__(self):
        for name in ("sigma_rot", "sigma_trans", "drift_sigma", "bias_magnitude",
                     "jitter_sigma", "sigma_joint", "dropout_rate"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.dropout_rate >= 1.0:
            raise ValueError("dropout_rate must be below 1")


def parsing_surrogate() -> PerturbConfig:
    """Harsher profile imitating parsed video: stronger drift plus dropouts."""
    return PerturbConfig(drift_sigma=0.004, dropout_rate=0.08)


@dataclass(frozen=True)
class PerturbRealization:
    """Every random draw used on one clip, in application form."""

    wrist_rot: np.ndarray      # (T,3) axis-angle, applied on the left
    wrist_trans: np.ndarray    # (T,3)
    object_rot: np.ndarray     # (T,3)
    object_trans: np.ndarray   # (T,3)
    drift: np.ndarray          # (T,3) accumulated walk, zero at t=0
    bias: np.ndarray           # (3,)
    jitter: np.ndarray         # (T,3)
    joint_noise: np.ndarray    # (T,J)
    dropped: np.ndarray        # (T,) bool
    original_valid: np.ndarray # (T,) bool


def perturb(traj: Trajectory, config: PerturbConfig, seed):
    """Apply the corruption model.

    Returns
    -------
    (Trajectory, PerturbRealization)
        The corrupted clip and the exact noise used. Joints are *not*
        clamped to limits (noisy estimates exceed them), which keeps the
        corruption invertible via `undo_perturb`.
    """
    check_trajectory(traj)
    rng = as_rng(seed)
    T, J = traj.num_frames, traj.num_joints

    wrist_rot = rng.normal(scale=config.sigma_rot, size=(T, 3))
    wrist_trans = rng.normal(scale=config.sigma_trans, size=(T, 3))
    object_rot = rng.normal(scale=config.sigma_rot, size=(T, 3))
    object_trans = rng.normal(scale=config.sigma_trans, size=(T, 3))
    steps = rng.normal(scale=config.drift_sigma, size=(T, 3))
    steps[0] = 0.0
    drift = np.cumsum(steps, axis=0)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    bias = direction * config.bias_magnitude
    jitter = rng.normal(scale=config.jitter_sigma, size=(T, 3))
    joint_noise = rng.normal(scale=config.sigma_joint, size=(T, J))
    dropped = rng.random(T) < config.dropout_rate

    real = PerturbRealization(
        wrist_rot=wrist_rot, wrist_trans=wrist_trans,
        object_rot=object_rot, object_trans=object_trans,
        drift=drift, bias=bias, jitter=jitter, joint_noise=joint_noise,
        dropped=dropped, original_valid=traj.valid.copy(),
    )

    out = traj.replace(
        wrist_quat=quat_canonical(quat_mul(quat_from_axis_angle(wrist_rot), traj.wrist_quat)),
        wrist_trans=traj.wrist_trans + wrist_trans + drift + bias + jitter,
        joints=traj.joints + joint_noise,
        object_quat=quat_canonical(quat_mul(quat_from_axis_angle(object_rot), traj.object_quat)),
        object_trans=traj.object_trans + object_trans + drift,
        valid=traj.valid & ~dropped,
    )
    return out, real


class TrajectoryPerturber(BaseEstimator, TransformerMixin):
    """Stateless transformer applying the corruption model per item.

    Item i is corrupted with the stream seeded by (seed, i), so results do
    not depend on list order or length.
    """

    def __init__(self, sigma_rot=0.05, sigma_trans=0.01, drift_sigma=0.002,
                 bias_magnitude=0.005, jitter_sigma=0.005, sigma_joint=0.05,
                 dropout_rate=0.0, seed=0):
        self.sigma_rot = sigma_rot
        self.sigma_trans = sigma_trans
        self.drift_sigma = drift_sigma
        self.bias_magnitude = bias_magnitude
        self.jitter_sigma = jitter_sigma
        self.sigma_joint = sigma_joint
        self.dropout_rate = dropout_rate
        self.seed = seed

    def _config(self) -> PerturbConfig:
        return PerturbConfig(
            sigma_rot=self.sigma_rot, sigma_trans=self.sigma_trans,
            drift_sigma=self.drift_sigma, bias_magnitude=self.bias_magnitude,
            jitter_sigma=self.jitter_sigma, sigma_joint=self.sigma_joint,
            dropout_rate=self.dropout_rate)

    def fit(self, X, y=None):
        check_trajectories(X)
        self._config()  # validate scales eagerly
        self.n_items_ = len(list(X))
        return self

    def transform(self, X):
        cfg = self._config()
        return [perturb(x, cfg, [int(self.seed), i])[0]
                for i, x in enumerate(check_trajectories(X))]


def undo_perturb(traj: Trajectory, real: PerturbRealization) -> Trajectory:
    """Invert `perturb` given its realization (exact up to float round-off)."""
    check_trajectory(traj)
    return traj.replace(
        wrist_quat=quat_canonical(quat_mul(quat_from_axis_angle(-real.wrist_rot), traj.wrist_quat)),
        wrist_trans=traj.wrist_trans - real.wrist_trans - real.drift - real.bias - real.jitter,
        joints=traj.joints - real.joint_noise,
        object_quat=quat_canonical(quat_mul(quat_from_axis_angle(-real.object_rot), traj.object_quat)),
        object_trans=traj.object_trans - real.object_trans - real.drift,
        valid=real.original_valid,
    )
