"""Hand-object interaction trajectories and their on-disk text format.

A trajectory is a fixed-rate sequence of frames, each holding the wrist pose,
the joint vector, the object pose, and a validity flag.  All frames share one
hand model and one object mesh, referenced by id/hash rather than embedded.

File format (ASCII, one record per line, floats with 17 significant digits
so values round-trip exactly)::

    trajectory 1
    seed <int or ->
    config <hex or ->
    model <model-id>
    model_hash <hex or ->
    mesh_hash <hex or ->
    scale <float>
    dt <float>
    frames <T>
    F <wrist quat wxyz> <wrist xyz> <J joint values> <obj quat> <obj xyz> <0|1>
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry.rigid import RigidPose


class TrajectoryError(ValueError):
    """Raised for malformed trajectory data or files."""


@dataclass(frozen=True)
class InteractionFrame:
    """One time step: wrist pose, joint vector, object pose, validity."""

    wrist: RigidPose
    joints: np.ndarray
    object_pose: RigidPose
    valid: bool = True

    def __post_init__(self):
        j = np.asarray(self.joints, dtype=float).reshape(-1)
        if not np.all(np.isfinite(j)):
            raise TrajectoryError("joint values must be finite")
        j.flags.writeable = False
        object.__setattr__(self, "joints", j)
        object.__setattr__(self, "valid", bool(self.valid))


def _check_quats(q, what):
    norms = np.linalg.norm(q, axis=-1)
    if np.any(np.abs(norms - 1.0) > 1e-9):
        raise TrajectoryError(f"{what} quaternion norm deviates from 1 by more than 1e-9")
    # canonical half-space; exact no-op for already canonical rows
    return np.where(q[..., :1] < 0.0, -q, q)


class Trajectory:
    """Array-backed interaction trajectory.

    Parameters
    ----------
    dt : float
        Frame period in seconds, > 0.
    wrist_quat, wrist_trans, joints, object_quat, object_trans, valid :
        Arrays of shape (T, 4), (T, 3), (T, J), (T, 4), (T, 3), (T,).
    model_id : str
        Hand model identifier shared by all frames.
    mesh_hash : str or None
        Content hash of the object mesh, if known.
    scale : float
        Uniform geometry scale for both the hand and the object mesh.
    """

    def __init__(self, dt, wrist_quat, wrist_trans, joints, object_quat, object_trans, valid,
                 model_id="human20", mesh_hash=None, scale=1.0):
        self.dt = float(dt)
        if not self.dt > 0.0:
            raise TrajectoryError("dt must be positive")
        wq = np.asarray(wrist_quat, dtype=float)
        wt = np.asarray(wrist_trans, dtype=float)
        th = np.asarray(joints, dtype=float)
        oq = np.asarray(object_quat, dtype=float)
        ot = np.asarray(object_trans, dtype=float)
        vd = np.asarray(valid, dtype=bool)
        T = wq.shape[0]
        if T < 1:
            raise TrajectoryError("trajectory needs at least one frame")
        shapes = (wq.shape, wt.shape, th.shape[:1], oq.shape, ot.shape, vd.shape)
        expect = ((T, 4), (T, 3), (T,), (T, 4), (T, 3), (T,))
        if tuple(shapes) != expect or th.ndim != 2:
            raise TrajectoryError(f"inconsistent array shapes: {shapes}")
        for arr, what in ((wq, "wrist"), (wt, "wrist"), (th, "joint"), (oq, "object"), (ot, "object")):
            if not np.all(np.isfinite(arr)):
                raise TrajectoryError(f"{what} data must be finite")
        self.wrist_quat = _check_quats(wq, "wrist")
        self.wrist_trans = wt
        self.joints = th
        self.object_quat = _check_quats(oq, "object")
        self.object_trans = ot
        self.valid = vd
        self.model_id = str(model_id)
        self.mesh_hash = None if mesh_hash is None else str(mesh_hash)
        self.scale = float(scale)
        if not self.scale > 0.0:
            raise TrajectoryError("scale must be positive")
        for arr in (self.wrist_quat, self.wrist_trans, self.joints, self.object_quat, self.object_trans, self.valid):
            arr.flags.writeable = False

    # -- accessors -------------------------------------------------------------

    @property
    def num_frames(self) -> int:
        return self.wrist_quat.shape[0]

    @property
    def num_joints(self) -> int:
        return self.joints.shape[1]

    def __len__(self) -> int:
        return self.num_frames

    def frame(self, t: int) -> InteractionFrame:
        return InteractionFrame(
            RigidPose(self.wrist_quat[t], self.wrist_trans[t]),
            self.joints[t],
            RigidPose(self.object_quat[t], self.object_trans[t]),
            bool(self.valid[t]),
        )

    def iter_frames(self):
        return (self.frame(t) for t in range(self.num_frames))

    def replace(self, **kwargs) -> "Trajectory":
        """Functional update returning a new trajectory."""
        fields = dict(
            dt=self.dt,
            wrist_quat=self.wrist_quat,
            wrist_trans=self.wrist_trans,
            joints=self.joints,
            object_quat=self.object_quat,
            object_trans=self.object_trans,
            valid=self.valid,
            model_id=self.model_id,
            mesh_hash=self.mesh_hash,
            scale=self.scale,
        )
        fields.update(kwargs)
        return Trajectory(**fields)

    @staticmethod
    def from_frames(frames, dt, model_id="human20", mesh_hash=None, scale=1.0) -> "Trajectory":
        frames = list(frames)
        if not frames:
            raise TrajectoryError("trajectory needs at least one frame")
        return Trajectory(
            dt,
            np.stack([f.wrist.quat for f in frames]),
            np.stack([f.wrist.trans for f in frames]),
            np.stack([f.joints for f in frames]),
            np.stack([f.object_pose.quat for f in frames]),
            np.stack([f.object_pose.trans for f in frames]),
            np.asarray([f.valid for f in frames], dtype=bool),
            model_id,
            mesh_hash,
            scale,
        )


# ---------------------------------------------------------------------------
# text I/O


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def serialize_trajectory(traj: Trajectory, seed=None, config_hash=None, model_hash=None) -> str:
    head = [
        "trajectory 1",
        f"seed {int(seed) if seed is not None else '-'}",
        f"config {config_hash if config_hash is not None else '-'}",
        f"model {traj.model_id}",
        f"model_hash {model_hash if model_hash is not None else '-'}",
        f"mesh_hash {traj.mesh_hash if traj.mesh_hash is not None else '-'}",
        f"scale {_fmt(traj.scale)}",
        f"dt {_fmt(traj.dt)}",
        f"frames {traj.num_frames}",
    ]
    rows = []
    for t in range(traj.num_frames):
        vals = np.concatenate(
            [traj.wrist_quat[t], traj.wrist_trans[t], traj.joints[t], traj.object_quat[t], traj.object_trans[t]]
        )
        rows.append("F " + " ".join(_fmt(v) for v in vals) + f" {1 if traj.valid[t] else 0}")
    return "\n".join(head + rows) + "\n"


def write_trajectory(traj: Trajectory, path, seed=None, config_hash=None, model_hash=None) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(serialize_trajectory(traj, seed, config_hash, model_hash))


def parse_trajectory(text: str):
    """Parse the trajectory format; returns ``(Trajectory, meta dict)``."""
    lines = text.splitlines()
    meta: dict = {}
    idx = 0

    def take(key):
        nonlocal idx
        if idx >= len(lines):
            raise TrajectoryError(f"unexpected end of file, wanted {key!r}")
        parts = lines[idx].split()
        if len(parts) != 2 or parts[0] != key:
            raise TrajectoryError(f"line {idx + 1}: expected {key!r} record, got {lines[idx]!r}")
        idx += 1
        return parts[1]

    if take("trajectory") != "1":
        raise TrajectoryError("unsupported trajectory format version")
    seed = take("seed")
    meta["seed"] = None if seed == "-" else int(seed)
    cfg = take("config")
    meta["config_hash"] = None if cfg == "-" else cfg
    model_id = take("model")
    mh = take("model_hash")
    meta["model_hash"] = None if mh == "-" else mh
    mesh = take("mesh_hash")
    mesh_hash = None if mesh == "-" else mesh
    scale = float(take("scale"))
    dt = float(take("dt"))
    T = int(take("frames"))
    body = [ln for ln in lines[idx:] if ln.strip()]
    if len(body) != T:
        raise TrajectoryError(f"expected {T} frame records, found {len(body)}")
    data = []
    for ln, raw in enumerate(body):
        parts = raw.split()
        if parts[0] != "F":
            raise TrajectoryError(f"frame record {ln}: bad prefix {parts[0]!r}")
        data.append([float(x) for x in parts[1:]])
    arr = np.asarray(data)
    width = arr.shape[1]
    J = width - 15  # 4 + 3 + J + 4 + 3 + valid
    if J < 1:
        raise TrajectoryError("frame record too short")
    traj = Trajectory(
        dt,
        arr[:, 0:4],
        arr[:, 4:7],
        arr[:, 7 : 7 + J],
        arr[:, 7 + J : 11 + J],
        arr[:, 11 + J : 14 + J],
        arr[:, 14 + J] != 0.0,
        model_id,
        mesh_hash,
        scale,
    )
    return traj, meta


def read_trajectory(path):
    with open(path, "r", encoding="ascii") as fh:
        return parse_trajectory(fh.read())
