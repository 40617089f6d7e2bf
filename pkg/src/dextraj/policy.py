"""Residual-policy support: state assembly, reward shaping, action
composition, and a kinematic contact environment for deterministic rollouts.

The environment ("env-lite") replaces a physics simulator at desk scale.
Contact is a proxy force per fingertip: how deep the fingertip skin sphere
sits inside an epsilon shell around the object surface.  Once at least two
fingertips are in contact the object is rigidly attached and follows the
wrist's frame-to-frame delta; otherwise it stays put.  Everything is pure
numpy, so identical inputs give bit-identical rollouts.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields

import numpy as np

from .geometry import RigidPose, TriangleMesh, PoseDelta, pose_apply_delta, pose_diff, quat_conj, quat_mul, quat_rotate
from .hand import HandModel
from .metrics import SuccessCriteria, grasp_success
from .trajectory import InteractionFrame, Trajectory

__all__ = [
    "STATE_LAYOUT_VERSION",
    "PolicyState",
    "RewardWeights",
    "RewardGains",
    "ReferenceVelocities",
    "ResidualBounds",
    "Action",
    "EnvLiteState",
    "RolloutResult",
    "contact_vector",
    "env_init",
    "env_step",
    "assemble_state",
    "reference_velocities",
    "reward",
    "compose_action",
    "zero_residuals",
    "rollout",
    "write_rollout_log",
]

# bump when the flattened PolicyState layout changes
STATE_LAYOUT_VERSION = 1


@dataclass(frozen=True)
class PolicyState:
    """Observation for one control step.

    ``flatten`` packs the fields in this fixed order (layout version 1):

    ====================  ======  =====================================
    slice                 length  content
    ====================  ======  =====================================
    joints                J       joint angles, rad
    joint_velocity        J       backward difference, rad/s
    wrist                 7       quat wxyz + translation
    wrist_twist           6       rotation vector + translation, per s
    object_pose           7       quat wxyz + translation
    object_twist          6       rotation vector + translation, per s
    contacts              F       per-fingertip contact proxy
    anchor_wrist          7       anchor wrist pose at this index
    anchor_joints         J       anchor joints at this index
    ref_object            7       reference object pose at this index
    ====================  ======  =====================================

    Total 3J + F + 40 (81 for J=12, F=5).
    """

    joints: np.ndarray
    joint_velocity: np.ndarray
    wrist: RigidPose
    wrist_twist: np.ndarray
    object_pose: RigidPose
    object_twist: np.ndarray
    contacts: np.ndarray
    anchor_wrist: RigidPose
    anchor_joints: np.ndarray
    ref_object: RigidPose

    def flatten(self) -> np.ndarray:
        def pose(p):
            return np.concatenate([p.quat, p.trans])

        out = np.concatenate([
            self.joints, self.joint_velocity,
            pose(self.wrist), self.wrist_twist,
            pose(self.object_pose), self.object_twist,
            self.contacts,
            pose(self.anchor_wrist), self.anchor_joints,
            pose(self.ref_object),
        ])
        expect = 3 * len(self.joints) + len(self.contacts) + 40
        assert out.shape == (expect,)
        return out


@dataclass(frozen=True)
class RewardWeights:
    """Term weights of the shaped reward."""

    object_track: float = 1.0
    wrist_track: float = 1.0
    finger_track: float = 1.0
    contact: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"{f.name} must be finite and >= 0")


@dataclass(frozen=True)
class RewardGains:
    """Error gains inside the exponential tracking kernels."""

    pose: float = 10.0
    velocity: float = 1.0

    def __post_init__(self):
        if not (self.pose >= 0.0 and self.velocity >= 0.0):
            raise ValueError("gains must be >= 0")


@dataclass(frozen=True)
class ReferenceVelocities:
    """Reference twists/velocities the tracking terms compare against."""

    object_twist: np.ndarray
    wrist_twist: np.ndarray
    joint_velocity: np.ndarray


@dataclass(frozen=True)
class ResidualBounds:
    """Clip bounds for the residual action components."""

    joint: float = 0.1
    rotation: float = 0.1
    translation: float = 0.02

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) >= 0.0:
                raise ValueError(f"{f.name} bound must be >= 0")


@dataclass(frozen=True)
class Action:
    """Kinematic target for one step: wrist pose plus joint vector."""

    wrist: RigidPose
    joints: np.ndarray


@dataclass(frozen=True)
class EnvLiteState:
    """Kinematic environment state.

    ``attached`` reflects the contact count of ``frame``: the object is
    rigidly attached during the NEXT step exactly when at least two
    fingertips were in contact at this one.
    """

    frame: InteractionFrame
    prev_frame: InteractionFrame | None
    contacts: np.ndarray
    attached: bool
    index: int
    dt: float


def contact_vector(frame: InteractionFrame, mesh: TriangleMesh,
                   model: HandModel, radius: float = 0.005,
                   scale: float = 1.0) -> np.ndarray:
    """Per-fingertip contact proxy against the posed object mesh.

    The fingertip is its skin sphere, so the relevant distance is the gap
    between the sphere surface and the object: signed distance of the tip
    point minus the tip radius.  The proxy is max(0, radius - gap): zero
    beyond the contact shell, growing linearly as the gap closes and the
    sphere presses in.
    """
    tips = model.fingertip_positions(frame.wrist.quat, frame.wrist.trans,
                                     frame.joints, scale)
    pose = frame.object_pose
    local = quat_rotate(quat_conj(pose.quat), tips - pose.trans) / scale
    sd = mesh.signed_distance(local) * scale
    gap = sd - model.tip_radii() * scale
    return np.maximum(0.0, radius - gap)


def _attach_count(contacts: np.ndarray) -> bool:
    return int((contacts > 0.0).sum()) >= 2


def env_init(frame: InteractionFrame, dt: float, mesh: TriangleMesh,
             model: HandModel, contact_radius: float = 0.005,
             scale: float = 1.0) -> EnvLiteState:
    """Start an environment at a frame; attachment from its own contacts."""
    contacts = contact_vector(frame, mesh, model, contact_radius, scale)
    return EnvLiteState(frame=frame, prev_frame=None, contacts=contacts,
                        attached=_attach_count(contacts), index=0, dt=dt)


def env_step(env: EnvLiteState, action: Action, mesh: TriangleMesh,
             model: HandModel, contact_radius: float = 0.005,
             scale: float = 1.0) -> EnvLiteState:
    """Advance one step: set the hand, move the object if attached.

    While attached the object keeps its wrist-frame offset exactly, i.e. it
    is carried by the wrist's frame-to-frame rigid delta.
    """
    joints = model.clamp(action.joints)
    old = env.frame
    if env.attached:
        wq_old, wt_old = old.wrist.quat, old.wrist.trans
        rel_q = quat_mul(quat_conj(wq_old), old.object_pose.quat)
        rel_t = quat_rotate(quat_conj(wq_old), old.object_pose.trans - wt_old)
        new_q = quat_mul(action.wrist.quat, rel_q)
        new_t = quat_rotate(action.wrist.quat, rel_t) + action.wrist.trans
        obj = RigidPose(new_q, new_t, renormalize=True)
    else:
        obj = old.object_pose
    frame = InteractionFrame(action.wrist, joints, obj, valid=True)
    contacts = contact_vector(frame, mesh, model, contact_radius, scale)
    return EnvLiteState(frame=frame, prev_frame=old, contacts=contacts,
                        attached=_attach_count(contacts),
                        index=env.index + 1, dt=env.dt)


def _twist(cur: RigidPose, prev: RigidPose, dt: float) -> np.ndarray:
    d = pose_diff(cur, prev)
    return np.concatenate([d.rotational, d.translational]) / dt


def assemble_state(env: EnvLiteState, anchor: Trajectory,
                   ref_obj: Trajectory | None = None) -> PolicyState:
    """Build the policy observation for the environment's current index.

    Velocities are backward finite differences against the previous frame
    and zero at the first step.  The anchor slice and the reference object
    slice are taken at the same index (the reference object track defaults
    to the anchor's own).
    """
    t = env.index
    if not 0 <= t < anchor.num_frames:
        raise IndexError(f"frame index {t} out of range for anchor of "
                         f"length {anchor.num_frames}")
    ref = ref_obj if ref_obj is not None else anchor
    if ref.num_frames != anchor.num_frames:
        raise ValueError("reference object track length differs from anchor")
    f = env.frame
    if env.prev_frame is None:
        jv = np.zeros_like(f.joints)
        wtw = np.zeros(6)
        otw = np.zeros(6)
    else:
        p = env.prev_frame
        jv = (f.joints - p.joints) / env.dt
        wtw = _twist(f.wrist, p.wrist, env.dt)
        otw = _twist(f.object_pose, p.object_pose, env.dt)
    return PolicyState(
        joints=f.joints.copy(), joint_velocity=jv,
        wrist=f.wrist, wrist_twist=wtw,
        object_pose=f.object_pose, object_twist=otw,
        contacts=env.contacts.copy(),
        anchor_wrist=RigidPose(anchor.wrist_quat[t], anchor.wrist_trans[t]),
        anchor_joints=anchor.joints[t].copy(),
        ref_object=RigidPose(ref.object_quat[t], ref.object_trans[t]),
    )


def reference_velocities(anchor: Trajectory, index: int,
                         ref_obj: Trajectory | None = None) -> ReferenceVelocities:
    """Backward-difference velocities of the reference tracks at an index."""
    ref = ref_obj if ref_obj is not None else anchor
    if index == 0:
        return ReferenceVelocities(np.zeros(6), np.zeros(6),
                                   np.zeros(anchor.num_joints))
    t, dt = index, anchor.dt
    otw = _twist(RigidPose(ref.object_quat[t], ref.object_trans[t]),
                 RigidPose(ref.object_quat[t - 1], ref.object_trans[t - 1]), dt)
    wtw = _twist(RigidPose(anchor.wrist_quat[t], anchor.wrist_trans[t]),
                 RigidPose(anchor.wrist_quat[t - 1], anchor.wrist_trans[t - 1]),
                 dt)
    jv = (anchor.joints[t] - anchor.joints[t - 1]) / dt
    return ReferenceVelocities(otw, wtw, jv)


def reward(state: PolicyState, ref_vel: ReferenceVelocities | None = None,
           weights: RewardWeights | None = None,
           gains: RewardGains | None = None):
    """Shaped tracking reward: weighted sum of four terms in [0, 1].

    The three tracking terms are exp(-k_pose * pose_err - k_vel * vel_err)
    against the anchor hand and the reference object; the contact term is
    the fraction of fingertips in contact.  Returns (total, breakdown).
    """
    weights = weights or RewardWeights()
    gains = gains or RewardGains()
    if ref_vel is None:
        ref_vel = ReferenceVelocities(np.zeros(6), np.zeros(6),
                                      np.zeros(len(state.joints)))

    def track(pose_err, vel_err):
        return math.exp(-gains.pose * pose_err - gains.velocity * vel_err)

    r_obj = track(pose_diff(state.object_pose, state.ref_object).norm(),
                  float(np.linalg.norm(state.object_twist - ref_vel.object_twist)))
    r_wrist = track(pose_diff(state.wrist, state.anchor_wrist).norm(),
                    float(np.linalg.norm(state.wrist_twist - ref_vel.wrist_twist)))
    r_finger = track(float(np.linalg.norm(state.joints - state.anchor_joints)),
                     float(np.linalg.norm(state.joint_velocity
                                          - ref_vel.joint_velocity)))
    r_contact = float((state.contacts > 0.0).sum()) / len(state.contacts)
    terms = {"object": r_obj, "wrist": r_wrist, "finger": r_finger,
             "contact": r_contact}
    total = (weights.object_track * r_obj + weights.wrist_track * r_wrist
             + weights.finger_track * r_finger + weights.contact * r_contact)
    return total, terms


def compose_action(anchor: Action, residual, bounds: ResidualBounds | None = None,
                   model: HandModel | None = None) -> Action:
    """Apply a bounded residual to an anchor action.

    ``residual`` is a flat vector [rotation (3), translation (3), joints (J)].
    The rotation and translation parts are clipped to their norm bounds, the
    joint part elementwise to +-bounds.joint; the wrist delta composes on the
    right of the anchor wrist so ``pose_diff`` against the anchor recovers
    the clipped delta.  Joint limits are clamped when a model is given.
    """
    bounds = bounds or ResidualBounds()
    r = np.asarray(residual, dtype=float)
    if r.shape != (6 + len(anchor.joints),):
        raise ValueError(f"residual must have shape ({6 + len(anchor.joints)},)")
    if not np.all(np.isfinite(r)):
        raise ValueError("residual must be finite")

    def clip_norm(v, bound):
        n = float(np.linalg.norm(v))
        if n > bound:
            return v * (bound / n)
        return v

    rot = clip_norm(r[0:3], bounds.rotation)
    trans = clip_norm(r[3:6], bounds.translation)
    dj = np.clip(r[6:], -bounds.joint, bounds.joint)
    wrist = pose_apply_delta(anchor.wrist, PoseDelta(rot, trans))
    joints = anchor.joints + dj
    if model is not None:
        joints = model.clamp(joints)
    return Action(wrist, joints)


def zero_residuals(num_frames: int, num_joints: int) -> np.ndarray:
    """All-zero residual sequence for anchor replay."""
    return np.zeros((num_frames, 6 + num_joints))


@dataclass
class RolloutResult:
    """Outcome of a deterministic anchor+residual rollout."""

    total_reward: float
    rewards: np.ndarray
    terms: np.ndarray
    contact_counts: np.ndarray
    trajectory: Trajectory
    success: bool
    breakdown: dict


_LOG_COLUMNS = ("t", "reward", "object", "wrist", "finger", "contact",
                "contacts", "obj_qw", "obj_qx", "obj_qy", "obj_qz",
                "obj_tx", "obj_ty", "obj_tz")


def write_rollout_log(path, result: RolloutResult) -> None:
    """Per-step CSV: reward terms, contact count, object pose."""
    traj = result.trajectory
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_LOG_COLUMNS)
        for t in range(traj.num_frames):
            row = [t, result.rewards[t], *result.terms[t],
                   int(result.contact_counts[t]),
                   *traj.object_quat[t], *traj.object_trans[t]]
            w.writerow(["%d" % row[0]] + ["%.17g" % v for v in row[1:6]]
                       + ["%d" % row[6]] + ["%.17g" % v for v in row[7:]])


def rollout(anchor: Trajectory, residuals, mesh: TriangleMesh,
            model: HandModel, weights: RewardWeights | None = None,
            gains: RewardGains | None = None,
            bounds: ResidualBounds | None = None,
            criteria: SuccessCriteria | None = None,
            contact_radius: float = 0.005, scale: float | None = None,
            log_path=None) -> RolloutResult:
    """Replay an anchor trajectory under a residual sequence.

    Step 0 initializes the hand at the (residual-corrected) first anchor
    frame with the object at its reference pose; every later step applies
    the composed action and lets the environment carry the object.  Success
    is the strict grasp test of the final frame against the anchor's final
    frame.
    """
    res = np.asarray(residuals, dtype=float)
    t_cnt, j_cnt = anchor.num_frames, anchor.num_joints
    if res.shape != (t_cnt, 6 + j_cnt):
        raise ValueError(f"residual sequence shape {res.shape} does not match "
                         f"anchor ({t_cnt}, {6 + j_cnt})")
    if scale is None:
        scale = anchor.scale
    weights = weights or RewardWeights()
    gains = gains or RewardGains()
    bounds = bounds or ResidualBounds()

    def anchor_action(t):
        return Action(RigidPose(anchor.wrist_quat[t], anchor.wrist_trans[t]),
                      anchor.joints[t].copy())

    act0 = compose_action(anchor_action(0), res[0], bounds, model)
    start = InteractionFrame(act0.wrist, act0.joints,
                             RigidPose(anchor.object_quat[0],
                                       anchor.object_trans[0]))
    env = env_init(start, anchor.dt, mesh, model, contact_radius, scale)

    rewards = np.zeros(t_cnt)
    terms = np.zeros((t_cnt, 4))
    counts = np.zeros(t_cnt, dtype=int)
    frames = [env.frame]

    def record(env_state):
        t = env_state.index
        state = assemble_state(env_state, anchor)
        ref_vel = reference_velocities(anchor, t)
        total, parts = reward(state, ref_vel, weights, gains)
        rewards[t] = total
        terms[t] = (parts["object"], parts["wrist"], parts["finger"],
                    parts["contact"])
        counts[t] = int((env_state.contacts > 0.0).sum())

    record(env)
    for t in range(1, t_cnt):
        action = compose_action(anchor_action(t), res[t], bounds, model)
        env = env_step(env, action, mesh, model, contact_radius, scale)
        record(env)
        frames.append(env.frame)

    traj = Trajectory(
        anchor.dt,
        np.stack([f.wrist.quat for f in frames]),
        np.stack([f.wrist.trans for f in frames]),
        np.stack([f.joints for f in frames]),
        np.stack([f.object_pose.quat for f in frames]),
        np.stack([f.object_pose.trans for f in frames]),
        np.ones(t_cnt, dtype=bool),
        model_id=anchor.model_id, mesh_hash=anchor.mesh_hash, scale=scale)

    success, breakdown = grasp_success(frames[-1], anchor.frame(t_cnt - 1),
                                       model, criteria, scale)
    result = RolloutResult(total_reward=float(rewards.sum()), rewards=rewards,
                           terms=terms, contact_counts=counts,
                           trajectory=traj, success=success,
                           breakdown=breakdown)
    if log_path is not None:
        write_rollout_log(log_path, result)
    return result
