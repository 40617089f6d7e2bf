"""Synthetic grasp data: scripts, generation, corruption, augmentation."""

from .augment import AugmentConfig, TrajectoryAugmenter, augment, resample_time
from .dataset import (
    MANIFEST_FIELDS,
    generate_dataset,
    item_seed,
    read_manifest,
    synthesize_item,
    write_manifest,
)
from .generate import GraspInfeasibleError, generate_grasp
from .perturb import (
    PerturbConfig,
    PerturbRealization,
    TrajectoryPerturber,
    parsing_surrogate,
    perturb,
    undo_perturb,
)
from .script import GraspScript, sample_object_mesh, sample_script

__all__ = [
    "AugmentConfig", "TrajectoryAugmenter", "augment", "resample_time",
    "MANIFEST_FIELDS", "generate_dataset", "item_seed", "read_manifest",
    "synthesize_item", "write_manifest",
    "GraspInfeasibleError", "generate_grasp",
    "PerturbConfig", "PerturbRealization", "TrajectoryPerturber",
    "parsing_surrogate", "perturb", "undo_perturb",
    "GraspScript", "sample_object_mesh", "sample_script",
]
