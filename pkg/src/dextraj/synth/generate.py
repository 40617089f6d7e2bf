"""Build clean grasp trajectories from scripts.

The generator is the source of ground truth for training and evaluation, so
it is built around certificates rather than best effort: it solves finger
closing to first skin contact by bisection (never past it), keeps the wrist
still while fingers move so velocity direction flips cannot occur, and moves
the object with the exact same translation offsets as the wrist during the
lift. Generation fails loudly when a script cannot produce a grasp that
holds those certificates.
"""

from __future__ import annotations

import numpy as np

from ..geometry.mesh import TriangleMesh
from ..geometry.rigid import (
    quat_conj,
    quat_from_axis_angle,
    quat_mul,
    quat_rotate,
    quat_slerp,
    quat_to_axis_angle,
)
from ..hand import HandModel
from ..trajectory import Trajectory
from .script import GraspScript


class GraspInfeasibleError(RuntimeError):
    """The script cannot be realized as a penetration-free grasp."""


def _smoothstep(u):
    u = np.asarray(u, dtype=float)
    return u * u * (3.0 - 2.0 * u)


def _skin_gaps(model, mesh, object_quat, object_trans, wrist_quat, wrist_trans,
               joints, scale=1.0):
    # gap from every skin sphere to the object surface, in the object frame;
    # object pose broadcasts against any wrist/joint batch dims
    q, t = model.fk(wrist_quat, wrist_trans, joints, scale=scale)
    centers = quat_rotate(q[..., model._sphere_link_idx, :], model._sphere_centers * scale) \
        + t[..., model._sphere_link_idx, :]
    oq = np.asarray(object_quat, dtype=float)[..., None, :]
    ot = np.asarray(object_trans, dtype=float)[..., None, :]
    local = quat_rotate(quat_conj(oq), centers - ot)
    flat = local.reshape(-1, 3)
    sd = mesh.signed_distance(flat).reshape(local.shape[:-1])
    return sd - model._sphere_radii * scale


def _solve_closing(script: GraspScript, mesh: TriangleMesh, model: HandModel,
                   grid: int = 256, bisect_iters: int = 48, contact_tol: float = 1e-9):
    """Per-finger closing fraction at first skin contact.

    Returns (effective joint targets, tip contact flags). The wrist is held
    at the grasp pose, so each finger's gap depends only on its own joints
    and fingers can be solved independently on the shared closing parameter.
    """
    pose = script.grasp_wrist
    obj = script.object_pose
    open_j, target_j = script.open_joints, script.closing_targets
    groups = model.finger_groups()
    F = len(groups)
    tip_sphere = [int(np.flatnonzero(model._sphere_link_idx == li)[0])
                  for li in model._tip_link_idx]

    def gaps_batch(s):
        # rows of s close all fingers jointly; row f is only ever read
        # through finger f's spheres, which its own joints alone control
        s = np.atleast_1d(np.asarray(s, dtype=float))
        jb = open_j[None, :] + s[:, None] * (target_j - open_j)[None, :]
        return _skin_gaps(model, mesh, obj.quat, obj.trans,
                          np.broadcast_to(pose.quat, (len(s), 4)),
                          np.broadcast_to(pose.trans, (len(s), 3)), jb)

    if gaps_batch([0.0]).min() <= 0.0:
        raise GraspInfeasibleError("hand already touches the object at the open pose")

    svals = np.linspace(0.0, 1.0, grid + 1)
    gb = gaps_batch(svals)
    per_finger = np.stack([gb[:, sidx].min(axis=1) for _, sidx in groups], axis=1)

    # bisection queries only each finger f's own spheres at its row's s value
    row_of = np.concatenate([np.full(len(sidx), f, dtype=np.int64) for f, (_, sidx) in enumerate(groups)])
    col_of = np.concatenate([sidx for _, sidx in groups])
    link_of = model._sphere_link_idx[col_of]

    def finger_gaps(s):  # s: (F,) -> per-finger min gap (F,)
        jb = open_j[None, :] + s[:, None] * (target_j - open_j)[None, :]
        q, t = model.fk(np.broadcast_to(pose.quat, (F, 4)),
                        np.broadcast_to(pose.trans, (F, 3)), jb)
        centers = quat_rotate(q[row_of, link_of], model._sphere_centers[col_of]) \
            + t[row_of, link_of]
        local = quat_rotate(quat_conj(obj.quat), centers - obj.trans)
        gaps = mesh.signed_distance(local) - model._sphere_radii[col_of]
        out = np.full(F, np.inf)
        np.minimum.at(out, row_of, gaps)
        return out

    first_hit = np.array([
        np.flatnonzero(per_finger[:, f] <= 0.0)[0] if (per_finger[:, f] <= 0.0).any() else -1
        for f in range(F)])
    touching = first_hit >= 0
    lo = np.where(touching, svals[np.maximum(first_hit, 1) - 1], 1.0)
    hi = np.where(touching, svals[np.maximum(first_hit, 0)], 1.0)
    for _ in range(bisect_iters):
        mid = 0.5 * (lo + hi)
        clear = finger_gaps(mid) > 0.0
        lo = np.where(clear, mid, lo)
        hi = np.where(clear, hi, mid)
    s_star = np.where(touching, lo, 1.0)  # last non-penetrating parameter

    g = gaps_batch(s_star)
    tip_contact = np.array([touching[f] and g[f, tip_sphere[f]] <= contact_tol
                            for f in range(F)])

    per_joint_s = np.zeros(model.dof)
    for f, (jidx, _) in enumerate(groups):
        per_joint_s[jidx] = s_star[f]
    eff = open_j + per_joint_s * (target_j - open_j)
    return eff, tip_contact


def _track_violation(quat, trans, valid):
    """Directional smoothness violation of one pose track (hinge sum).

    Mirrors the trained smoothness penalty: over each triple of valid
    consecutive frames, penalize direction reversals of the relative
    rotation vectors and of the translational velocities. Velocities under
    1e-12 contribute nothing.
    """
    total = 0.0
    for t in range(1, len(trans) - 1):
        if not (valid[t - 1] and valid[t] and valid[t + 1]):
            continue
        r1 = quat_to_axis_angle(quat_mul(quat_conj(quat[t - 1]), quat[t]))
        r2 = quat_to_axis_angle(quat_mul(quat_conj(quat[t]), quat[t + 1]))
        total += max(0.0, -float(np.dot(r1, r2)))
        v1 = trans[t] - trans[t - 1]
        v2 = trans[t + 1] - trans[t]
        n1, n2 = float(np.linalg.norm(v1)), float(np.linalg.norm(v2))
        if n1 >= 1e-12 and n2 >= 1e-12:
            total += max(0.0, -float(np.dot(v1, v2)) / (n1 * n2))
    return total


def generate_grasp(script: GraspScript, mesh: TriangleMesh, model: HandModel,
                   dt: float = 1.0 / 30.0, verify: bool = True,
                   penetration_tol: float = 1e-6) -> Trajectory:
    """Synthesize one clean grasp clip: approach, close, lift.

    Parameters
    ----------
    script : GraspScript
        Phase lengths, poses and joint targets.
    mesh : TriangleMesh
        Object geometry in its canonical frame.
    model : HandModel
        Hand whose skin defines contact; must match the script's joint count.
    dt : float
        Frame spacing in seconds.
    verify : bool
        Re-check the finished clip (no penetration, two tip contacts held
        through the lift, zero directional smoothness violation).

    Raises
    ------
    GraspInfeasibleError
        Fewer than two fingertips reach the object, the open hand already
        touches it, or a verification certificate fails.
    """
    if script.open_joints.shape != (model.dof,):
        raise ValueError("script joint vectors do not match the hand model")
    A, C, L = script.approach_frames, script.close_frames, script.lift_frames
    T = script.total_frames

    eff, tip_contact = _solve_closing(script, mesh, model)
    if int(tip_contact.sum()) < 2:
        raise GraspInfeasibleError(
            f"only {int(tip_contact.sum())} fingertip(s) reach the object; need 2")

    gq, gt = script.grasp_wrist.quat, script.grasp_wrist.trans
    q_start = quat_mul(quat_from_axis_angle(script.start_rotvec), gq)
    t_start = gt + script.approach_start_offset

    wq = np.empty((T, 4))
    wt = np.empty((T, 3))
    joints = np.empty((T, model.dof))
    oq = np.tile(script.object_pose.quat, (T, 1))
    ot = np.tile(script.object_pose.trans, (T, 1))

    w = _smoothstep(np.arange(A) / (A - 1.0))
    for t in range(A):
        wq[t] = quat_slerp(q_start, gq, float(w[t]))
        wt[t] = t_start + w[t] * (gt - t_start)
    joints[:A] = script.open_joints
    # land on the grasp pose bit-exactly so the closing phase starts at rest
    wq[A - 1] = gq
    wt[A - 1] = gt

    w = _smoothstep(np.arange(1, C + 1) / C)
    wq[A:A + C] = gq
    wt[A:A + C] = gt
    joints[A:A + C] = script.open_joints + w[:, None] * (eff - script.open_joints)
    joints[A + C - 1] = eff

    # lift: object follows with the exact same translation offsets as the
    # wrist, which is the rigid-attachment solution for a non-rotating wrist
    w = _smoothstep(np.arange(1, L + 1) / L)
    lift = np.zeros((L, 3))
    lift[:, 2] = w * script.lift_height
    wq[A + C:] = gq
    wt[A + C:] = gt + lift
    joints[A + C:] = eff
    ot[A + C:] += lift

    valid = np.ones(T, dtype=bool)
    traj = Trajectory(dt=dt, wrist_quat=wq, wrist_trans=wt, joints=joints,
                      object_quat=oq, object_trans=ot, valid=valid,
                      model_id=model.name, mesh_hash=mesh.content_hash())

    if verify:
        g = _skin_gaps(model, mesh, oq, ot, wq, wt, joints)  # (T, S)
        worst = float(g.min())
        if worst < -penetration_tol:
            raise GraspInfeasibleError(f"skin penetrates object by {-worst:.3g} m")
        tips = [int(np.flatnonzero(model._sphere_link_idx == li)[0])
                for li in model._tip_link_idx]
        for t in (A + C - 1, T - 1):
            if int((g[t, tips] <= 1e-6).sum()) < 2:
                raise GraspInfeasibleError("tip contacts not held through the lift")
        viol = _track_violation(wq, wt, valid) + _track_violation(oq, ot, valid)
        if viol != 0.0:
            raise GraspInfeasibleError(f"clip has directional smoothness violation {viol:.3g}")

    return traj
