"""Kinematic retargeting of hand trajectories between embodiments.

Maps a source-hand trajectory (wrist pose + joint angles per frame) onto a
target hand by minimizing, frame by frame,

    J(w, j) = sum_f ||p_f(w, j) - p_hat_f||^2
            + lam_o * ||log(R(w) R(w_hat)^T)||^2
            + lam_a * ||j - map(j_hat)||^2

over the target wrist pose ``w`` and joint vector ``j``: fingertip alignment
(unit weight), wrist orientation agreement, and similarity to the
coupling-mapped source joints.  ``map`` is the target model's joint-coupling
map; when the target declares none the joint spaces must match and the map is
the identity.

The per-frame solver is a damped least-squares (Levenberg) loop with analytic
kinematic Jacobians.  Steps are accepted only when they lower the objective,
joints are clamped to limits after every trial step, and frames after the
first are warm started from the previous solution, so the returned objective
never exceeds the one at the initial point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .geometry import (
    RigidPose,
    quat_conj,
    quat_from_axis_angle,
    quat_mul,
    quat_rotate,
    quat_to_axis_angle,
)
from .hand import HandModel
from .trajectory import Trajectory
from .validation import check_hand_model, check_trajectory

__all__ = [
    "RetargetWeights",
    "SolverConfig",
    "FrameSolution",
    "RetargetResult",
    "bridge_joints",
    "retarget_objective",
    "solve_frame",
    "retarget_trajectory",
    "KinematicRetargeter",
]


@dataclass(frozen=True)
class RetargetWeights:
    """Relative weights of the retargeting objective terms.

    The fingertip-alignment term has fixed unit weight; these scale the wrist
    orientation and joint-similarity terms.
    """

    orientation: float = 0.5
    joint_similarity: float = 0.1

    def __post_init__(self):
        for name in ("orientation", "joint_similarity"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class SolverConfig:
    """Damped least-squares settings for the per-frame solve."""

    max_iterations: int = 100
    gradient_tol: float = 1e-8
    damping: float = 1e-3

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.gradient_tol > 0.0:
            raise ValueError("gradient_tol must be positive")
        if not self.damping > 0.0:
            raise ValueError("damping must be positive")


@dataclass
class FrameSolution:
    """Solved target pose for one frame plus solver diagnostics."""

    wrist: RigidPose
    joints: np.ndarray
    objective: float
    converged: bool
    reason: str
    iterations: int


def bridge_joints(target_model: HandModel, source_joints) -> np.ndarray:
    """Project source joint angles into the target model's joint space.

    Uses the target's coupling map when it has one; otherwise the joint
    spaces must have equal dimension and the identity is used.
    """
    j = np.asarray(source_joints, dtype=float)
    if target_model.coupling is not None:
        return target_model.map_joints(j)
    if j.shape[-1] != target_model.dof:
        raise ValueError(
            f"target model has no coupling map and {target_model.dof} joints, "
            f"cannot bridge from {j.shape[-1]}")
    return j.copy()


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def _inv_left_jacobian(phi: np.ndarray) -> np.ndarray:
    """Inverse left Jacobian of SO(3) at the rotation vector phi.

    Exact derivative of log(exp(delta) R) with respect to the left increment
    delta at delta = 0, where phi = log(R).
    """
    th2 = float(phi @ phi)
    a = _skew(phi)
    if th2 < 1e-10:
        return np.eye(3) - 0.5 * a + (a @ a) / 12.0
    th = math.sqrt(th2)
    # 1/(2*th*tan(th/2)) is the stable form of (1+cos th)/(2*th*sin th)
    c = 1.0 / th2 - 1.0 / (2.0 * th * math.tan(0.5 * th))
    return np.eye(3) - 0.5 * a + c * (a @ a)


def _tip_influence(model: HandModel) -> np.ndarray:
    """Boolean (F, J) table: joint k lies on the chain of fingertip f."""
    inf = np.zeros((model.n_fingertips, model.dof), dtype=bool)
    for f, (joint_idx, _) in enumerate(model.finger_groups()):
        inf[f, joint_idx] = True
    return inf


class _FrameProblem:
    """One frame's residual vector and Jacobian over (rot, trans, joints).

    Parameters are ordered [wrist rotation increment (3), wrist translation
    (3), joints (J)]; the rotation increment is composed on the left,
    R <- exp(delta) R, which keeps the solve equivariant under rigid
    transforms of the whole scene.
    """

    def __init__(self, model, tip_targets, wrist_quat_target, joint_targets,
                 weights, scale, influence):
        self.model = model
        self.tips_hat = tip_targets
        self.q_hat = wrist_quat_target
        self.j_hat = joint_targets
        self.w = weights
        self.scale = scale
        self.influence = influence
        self.sqrt_o = math.sqrt(weights.orientation)
        self.sqrt_a = math.sqrt(weights.joint_similarity)

    def _rotation_error(self, wq):
        return quat_to_axis_angle(quat_mul(wq, quat_conj(self.q_hat)))

    def value(self, wq, wt, j) -> float:
        tips = self.model.fingertip_positions(wq, wt, j, self.scale)
        phi = self._rotation_error(wq)
        dj = j - self.j_hat
        with np.errstate(over="ignore"):
            return float(((tips - self.tips_hat) ** 2).sum()
                         + self.w.orientation * (phi @ phi)
                         + self.w.joint_similarity * (dj @ dj))

    def residual_jacobian(self, wq, wt, j):
        m = self.model
        quats, trans = m.fk(wq, wt, j, self.scale)
        tips = trans[m._tip_link_idx]
        jl = m._joint_link_idx
        origins = trans[jl]
        axes_w = quat_rotate(quats[m._parent_idx[jl]], m._axes)
        f_cnt, dof = tips.shape[0], m.dof

        jac_tip = np.zeros((f_cnt, 3, 6 + dof))
        for f in range(f_cnt):
            jac_tip[f, :, 0:3] = -_skew(tips[f] - wt)
            jac_tip[f, :, 3:6] = np.eye(3)
        arm = tips[:, None, :] - origins[None, :, :]
        cols = np.cross(np.broadcast_to(axes_w, arm.shape), arm)
        cols = np.where(self.influence[:, :, None], cols, 0.0)
        jac_tip[:, :, 6:] = np.transpose(cols, (0, 2, 1))

        phi = self._rotation_error(wq)
        jac_ori = np.zeros((3, 6 + dof))
        jac_ori[:, 0:3] = self.sqrt_o * _inv_left_jacobian(phi)

        jac_j = np.zeros((dof, 6 + dof))
        jac_j[:, 6:] = self.sqrt_a * np.eye(dof)

        r = np.concatenate([
            (tips - self.tips_hat).ravel(),
            self.sqrt_o * phi,
            self.sqrt_a * (j - self.j_hat),
        ])
        jac = np.concatenate([jac_tip.reshape(3 * f_cnt, 6 + dof), jac_ori, jac_j])
        return r, jac


def _build_problem(source_wrist, source_joints, weights, source_model,
                   target_model, source_scale, target_scale, influence):
    tip_targets = source_model.fingertip_positions(
        source_wrist.quat, source_wrist.trans,
        np.asarray(source_joints, dtype=float), source_scale)
    j_hat = bridge_joints(target_model, source_joints)
    return _FrameProblem(target_model, tip_targets, source_wrist.quat, j_hat,
                         weights, target_scale, influence)


def retarget_objective(wrist: RigidPose, joints, source_wrist: RigidPose,
                       source_joints, weights: RetargetWeights,
                       source_model: HandModel, target_model: HandModel,
                       source_scale: float = 1.0,
                       target_scale: float = 1.0) -> float:
    """Evaluate the per-frame retargeting objective at (wrist, joints)."""
    j = np.asarray(joints, dtype=float)
    if j.shape != (target_model.dof,):
        raise ValueError(f"expected {target_model.dof} target joint values, "
                         f"got shape {j.shape}")
    prob = _build_problem(source_wrist, source_joints, weights, source_model,
                          target_model, source_scale, target_scale,
                          _tip_influence(target_model))
    return prob.value(wrist.quat, wrist.trans, j)


_DAMPING_MAX = 1e12
_DAMPING_MIN = 1e-12


def _solve(problem: _FrameProblem, wq, wt, j, config: SolverConfig) -> FrameSolution:
    model = problem.model
    j = model.clamp(j)
    f0 = problem.value(wq, wt, j)
    if not math.isfinite(f0):
        raise ValueError("non-finite objective at the initial point")

    mu = config.damping
    eye = np.eye(6 + model.dof)
    reason = "tolerance"
    converged = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        r, jac = problem.residual_jacobian(wq, wt, j)
        g = jac.T @ r
        if np.linalg.norm(g) < config.gradient_tol:
            converged, reason = True, "gradient"
            break
        h = jac.T @ jac
        accepted = False
        while mu <= _DAMPING_MAX:
            try:
                delta = np.linalg.solve(h + mu * eye, -g)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            cand_q = quat_mul(quat_from_axis_angle(delta[0:3]), wq)
            cand_t = wt + delta[3:6]
            cand_j = model.clamp(j + delta[6:])
            fc = problem.value(cand_q, cand_t, cand_j)
            if math.isfinite(fc) and fc < f0:
                wq, wt, j, f0 = cand_q, cand_t, cand_j, fc
                mu = max(mu / 3.0, _DAMPING_MIN)
                accepted = True
                break
            mu *= 10.0
        if not accepted:
            # no improving step exists at any damping: clamped local optimum
            break
    return FrameSolution(wrist=RigidPose(wq, wt), joints=j, objective=f0,
                         converged=converged, reason=reason, iterations=it)


def solve_frame(source_wrist: RigidPose, source_joints,
                init_wrist: RigidPose, init_joints,
                source_model: HandModel, target_model: HandModel,
                weights: RetargetWeights | None = None,
                config: SolverConfig | None = None,
                source_scale: float = 1.0,
                target_scale: float = 1.0) -> FrameSolution:
    """Minimize the retargeting objective for a single frame."""
    weights = weights or RetargetWeights()
    config = config or SolverConfig()
    _check_finger_counts(source_model, target_model)
    prob = _build_problem(source_wrist, source_joints, weights, source_model,
                          target_model, source_scale, target_scale,
                          _tip_influence(target_model))
    j0 = np.asarray(init_joints, dtype=float)
    if j0.shape != (target_model.dof,):
        raise ValueError(f"expected {target_model.dof} init joint values, "
                         f"got shape {j0.shape}")
    return _solve(prob, init_wrist.quat.copy(), init_wrist.trans.copy(), j0,
                  config)


def _check_finger_counts(source_model: HandModel, target_model: HandModel):
    if source_model.n_fingertips != target_model.n_fingertips:
        raise ValueError(
            f"fingertip count mismatch: source has {source_model.n_fingertips},"
            f" target has {target_model.n_fingertips}")


@dataclass
class RetargetResult:
    """Per-frame retargeting solution for a whole trajectory."""

    wrist_quat: np.ndarray
    wrist_trans: np.ndarray
    joints: np.ndarray
    objective: np.ndarray
    converged: np.ndarray
    iterations: np.ndarray
    valid: np.ndarray
    model_id: str
    scale: float

    def to_trajectory(self, source: Trajectory) -> Trajectory:
        """Package the solution as a trajectory, keeping the object track."""
        return Trajectory(source.dt, self.wrist_quat, self.wrist_trans,
                          self.joints, source.object_quat,
                          source.object_trans, source.valid,
                          model_id=self.model_id, mesh_hash=source.mesh_hash,
                          scale=self.scale)


def retarget_trajectory(traj: Trajectory, source_model: HandModel,
                        target_model: HandModel,
                        weights: RetargetWeights | None = None,
                        config: SolverConfig | None = None,
                        source_scale: float | None = None,
                        target_scale: float = 1.0) -> RetargetResult:
    """Retarget a whole trajectory with per-frame warm starts.

    The first valid frame is initialized from the source wrist pose and the
    coupling-mapped source joints; every later frame starts from the previous
    solution.  Invalid frames are not solved: they copy the neighboring
    solution (the previous one, or the first valid one for leading invalid
    frames) and keep their invalid flag in the output.
    """
    source_model = check_hand_model(source_model)
    target_model = check_hand_model(target_model)
    traj = check_trajectory(traj, source_model)
    weights = weights or RetargetWeights()
    config = config or SolverConfig()
    _check_finger_counts(source_model, target_model)
    if traj.num_frames == 0:
        raise ValueError("empty trajectory")
    if not traj.valid.any():
        raise ValueError("trajectory has no valid frames")
    if source_scale is None:
        source_scale = traj.scale

    t_cnt, dof = traj.num_frames, target_model.dof
    out_q = np.zeros((t_cnt, 4))
    out_t = np.zeros((t_cnt, 3))
    out_j = np.zeros((t_cnt, dof))
    obj = np.full(t_cnt, np.nan)
    conv = np.zeros(t_cnt, dtype=bool)
    iters = np.zeros(t_cnt, dtype=int)
    influence = _tip_influence(target_model)

    prev: FrameSolution | None = None
    for t in range(t_cnt):
        if not traj.valid[t]:
            continue
        if prev is None:
            init_q = traj.wrist_quat[t].copy()
            init_t = traj.wrist_trans[t].copy()
            init_j = target_model.clamp(bridge_joints(target_model, traj.joints[t]))
        else:
            init_q, init_t, init_j = prev.wrist.quat, prev.wrist.trans, prev.joints
        prob = _build_problem(RigidPose(traj.wrist_quat[t], traj.wrist_trans[t]),
                              traj.joints[t], weights, source_model,
                              target_model, source_scale, target_scale,
                              influence)
        sol = _solve(prob, init_q, init_t, init_j, config)
        out_q[t], out_t[t], out_j[t] = sol.wrist.quat, sol.wrist.trans, sol.joints
        obj[t], conv[t], iters[t] = sol.objective, sol.converged, sol.iterations
        prev = sol

    # fill invalid frames from the nearest solved frame on the left (or the
    # first solved frame, for leading invalid frames)
    first = int(np.flatnonzero(traj.valid)[0])
    last = first
    for t in range(t_cnt):
        if traj.valid[t]:
            last = t
        else:
            src = last if t > first else first
            out_q[t], out_t[t], out_j[t] = out_q[src], out_t[src], out_j[src]

    return RetargetResult(wrist_quat=out_q, wrist_trans=out_t, joints=out_j,
                          objective=obj, converged=conv, iterations=iters,
                          valid=traj.valid.copy(), model_id=target_model.name,
                          scale=target_scale)


class KinematicRetargeter(BaseEstimator, TransformerMixin):
    """Estimator wrapper mapping trajectories between embodiments.

    Parameters mirror :class:`RetargetWeights` and :class:`SolverConfig`;
    models are supplied to :meth:`fit`.
    """

    def __init__(self, orientation=0.5, joint_similarity=0.1,
                 max_iterations=100, gradient_tol=1e-8, damping=1e-3,
                 target_scale=1.0):
        self.orientation = orientation
        self.joint_similarity = joint_similarity
        self.max_iterations = max_iterations
        self.gradient_tol = gradient_tol
        self.damping = damping
        self.target_scale = target_scale

    def fit(self, X=None, y=None, source_model=None, target_model=None):
        if source_model is None or target_model is None:
            raise ValueError("fit requires source_model= and target_model=")
        source_model = check_hand_model(source_model)
        target_model = check_hand_model(target_model)
        _check_finger_counts(source_model, target_model)
        self.source_model_ = source_model
        self.target_model_ = target_model
        return self

    def transform(self, X):
        if not hasattr(self, "source_model_"):
            raise ValueError("not fitted")
        weights = RetargetWeights(self.orientation, self.joint_similarity)
        config = SolverConfig(self.max_iterations, self.gradient_tol,
                              self.damping)
        out = []
        for traj in X:
            res = retarget_trajectory(traj, self.source_model_,
                                      self.target_model_, weights, config,
                                      target_scale=self.target_scale)
            out.append(res.to_trajectory(traj))
        return out
