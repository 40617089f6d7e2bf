"""Input validation helpers shared by the estimator-style interfaces."""

from __future__ import annotations

import numpy as np

from .geometry.mesh import TriangleMesh
from .hand import HandModel
from .trajectory import Trajectory


def as_rng(seed) -> np.random.Generator:
    """Normalize a seed spec to a Generator.

    Accepts a Generator (returned as-is), None, an int, or a sequence of
    ints (spawn-key style). Anything else raises TypeError.
    """
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, (int, np.integer)):
        return np.random.default_rng(seed)
    if isinstance(seed, (list, tuple)) and all(isinstance(s, (int, np.integer)) for s in seed):
        return np.random.default_rng(list(seed))
    raise TypeError(f"cannot interpret {type(seed).__name__} as a random seed")


def check_trajectory(x, model: HandModel | None = None) -> Trajectory:
    if not isinstance(x, Trajectory):
        raise TypeError(f"expected a Trajectory, got {type(x).__name__}")
    if model is not None:
        if x.num_joints != model.dof:
            raise ValueError(
                f"trajectory has {x.num_joints} joints but model "
                f"'{model.name}' has {model.dof}")
        if x.model_id != model.name:
            raise ValueError(f"trajectory is tagged '{x.model_id}', not '{model.name}'")
    return x

def check_trajectories(X, model: HandModel | None = None) -> list:
    """Validate a sequence of trajectories with a uniform joint count."""
    items = list(X)
    if not items:
        raise ValueError("need at least one trajectory")
    for x in items:
        check_trajectory(x, model)
    J = items[0].num_joints
    for x in items:
        if x.num_joints != J:
            raise ValueError("trajectories disagree on joint count")
    return items


def check_hand_model(m) -> HandModel:
    if not isinstance(m, HandModel):
        raise TypeError(f"expected a HandModel, got {type(m).__name__}")
    return m


def check_mesh(m) -> TriangleMesh:
    if not isinstance(m, TriangleMesh):
        raise TypeError(f"expected a TriangleMesh, got {type(m).__name__}")
    return m
