"""Grasp scripts: the compact parameterization a synthetic clip is built from."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry.mesh import TriangleMesh, box_mesh, icosphere_mesh
from ..geometry.rigid import RigidPose, quat_from_axis_angle
from ..hand import HandModel


@dataclass(frozen=True)
class GraspScript:
    """Everything needed to synthesize one grasp clip deterministically.

    The clip has three phases: a straight-line approach to the pre-grasp
    pose, a finger-closing phase with a static wrist, and a vertical lift
    with the object rigidly attached.
    """

    approach_frames: int
    close_frames: int
    lift_frames: int
    grasp_wrist: RigidPose
    object_pose: RigidPose
    approach_start_offset: np.ndarray
    start_rotvec: np.ndarray
    open_joints: np.ndarray
    closing_targets: np.ndarray
    lift_height: float

    def __post_init__(self):
        if self.approach_frames < 2 or self.close_frames < 2 or self.lift_frames < 2:
            raise ValueError("each phase needs at least 2 frames")
        if not self.lift_height > 0:
            raise ValueError("lift height must be positive")
        for name in ("approach_start_offset", "start_rotvec", "open_joints", "closing_targets"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def total_frames(self) -> int:
        return self.approach_frames + self.close_frames + self.lift_frames


def sample_object_mesh(rng: np.random.Generator) -> TriangleMesh:
    """Random graspable object: a box or an icosahedron-sphere."""
    if rng.random() < 0.5:
        extents = rng.uniform(0.045, 0.075, size=3)
        return box_mesh(extents)
    return icosphere_mesh(float(rng.uniform(0.024, 0.034)), 1)


def sample_script(rng: np.random.Generator, model: HandModel, mesh: TriangleMesh,
                  total_frames: int = 60) -> GraspScript:
    """Draw a random but feasible-by-construction grasp script.

    The wrist pre-grasp pose hovers palm-down above the object with a
    clearance gap; fingers descend around the object when closing.
    """
    if total_frames < 12:
        raise ValueError("need at least 12 frames for three phases")
    approach = int(rng.integers(max(2, total_frames // 3 - 4), total_frames // 3 + 5))
    close = int(rng.integers(max(2, total_frames // 4), total_frames // 3))
    lift = total_frames - approach - close
    if lift < 2:
        raise ValueError("phase split left too few lift frames")

    # object placement: free space, room to approach from above
    center = np.array([rng.uniform(-0.08, 0.08), rng.uniform(-0.08, 0.08), rng.uniform(0.05, 0.18)])
    yaw = float(rng.uniform(0.0, 2.0 * np.pi))
    object_pose = RigidPose(quat_from_axis_angle([0.0, 0.0, yaw]), center)

    posed = object_pose.apply(mesh.vertices)
    top_z = float(posed[:, 2].max())
    # palm skin reaches 16mm below the wrist origin; keep it clear of the top
    clearance = float(rng.uniform(0.024, 0.034))
    grasp_yaw = yaw + float(rng.uniform(-0.35, 0.35)) + float(rng.integers(0, 4)) * (np.pi / 2.0)
    grasp_wrist = RigidPose(
        quat_from_axis_angle([0.0, 0.0, grasp_yaw]),
        np.array([center[0], center[1], top_z + clearance]),
    )

    # start above and to the side, within a cone about vertical
    tilt = float(rng.uniform(0.0, np.deg2rad(35.0)))
    azim = float(rng.uniform(0.0, 2.0 * np.pi))
    mag = float(rng.uniform(0.12, 0.22))
    direction = np.array([np.sin(tilt) * np.cos(azim), np.sin(tilt) * np.sin(azim), np.cos(tilt)])
    start_offset = direction * mag

    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    # angle bounded away from zero: near-identity relative rotations have
    # float-noise axes, which would defeat the exact-zero smoothness check
    start_rotvec = axis * float(rng.uniform(0.05, 0.4))

    J = model.dof
    open_joints = np.zeros(J)
    targets = np.zeros(J)
    names = [j.name for j in model.joints]
    spread = {"index": 0.08, "middle": 0.03, "ring": -0.03, "pinky": -0.08}
    for k, n in enumerate(names):
        if n.endswith("_abd"):
            base = spread.get(n.split("_")[0], 0.0)
            open_joints[k] = base * float(rng.uniform(0.6, 1.4))
            targets[k] = open_joints[k]  # abduction holds during closing
        else:
            open_joints[k] = 0.25
            targets[k] = float(rng.uniform(1.25, 1.55))
    open_joints = model.clamp(open_joints)
    targets = model.clamp(targets)

    return GraspScript(
        approach_frames=approach,
        close_frames=close,
        lift_frames=lift,
        grasp_wrist=grasp_wrist,
        object_pose=object_pose,
        approach_start_offset=start_offset,
        start_rotvec=start_rotvec,
        open_joints=open_joints,
        closing_targets=targets,
        lift_height=float(rng.uniform(0.08, 0.14)),
    )
