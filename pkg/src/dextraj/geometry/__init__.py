"""Rigid-body and point-set geometry used across the toolkit."""

from .cloud import PointCloud, ball_query, fps
from .icp import DegenerateCloudError, ICPResult, icp_rigid
from .mesh import (
    MeshError,
    TriangleMesh,
    box_mesh,
    closest_point_on_triangles,
    icosphere_mesh,
    load_obj,
    save_obj,
    serialize_obj,
)
from .rigid import (
    PoseDelta,
    RigidPose,
    matrix_to_quat,
    pose_apply_delta,
    pose_compose,
    pose_diff,
    quat_canonical,
    quat_conj,
    quat_from_axis_angle,
    quat_mul,
    quat_normalize,
    quat_rotate,
    quat_slerp,
    quat_to_axis_angle,
    quat_to_matrix,
    random_quat,
    rotation_geodesic,
)

__all__ = [
    "PointCloud",
    "ball_query",
    "fps",
    "DegenerateCloudError",
    "ICPResult",
    "icp_rigid",
    "MeshError",
    "TriangleMesh",
    "box_mesh",
    "closest_point_on_triangles",
    "icosphere_mesh",
    "load_obj",
    "save_obj",
    "serialize_obj",
    "PoseDelta",
    "RigidPose",
    "matrix_to_quat",
    "pose_apply_delta",
    "pose_compose",
    "pose_diff",
    "quat_canonical",
    "quat_conj",
    "quat_from_axis_angle",
    "quat_mul",
    "quat_normalize",
    "quat_rotate",
    "quat_slerp",
    "quat_to_axis_angle",
    "quat_to_matrix",
    "random_quat",
    "rotation_geodesic",
]
