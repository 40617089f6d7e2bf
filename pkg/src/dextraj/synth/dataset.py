"""Dataset synthesis and the manifest file tying its artifacts together.

A dataset directory holds one OBJ mesh and one clean trajectory per item,
optionally a corrupted sibling, and `manifest.csv` with one row per item:

    index,seed,config_hash,mesh_file,gt_file,perturbed_file

File references are relative to the manifest's directory. Later pipeline
stages append columns (e.g. optimized or retargeted files) but keep these.
"""

from __future__ import annotations

import csv
import os

import numpy as np

from ..geometry.mesh import save_obj
from ..hand import HandModel
from ..trajectory import write_trajectory
from ..validation import check_hand_model
from .generate import GraspInfeasibleError, generate_grasp
from .perturb import PerturbConfig, perturb
from .script import sample_object_mesh, sample_script

MANIFEST_FIELDS = ("index", "seed", "config_hash", "mesh_file", "gt_file", "perturbed_file")


def write_manifest(path, rows, fieldnames=None) -> None:
    """Write manifest rows as CSV with a fixed field order."""
    rows = list(rows)
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else list(MANIFEST_FIELDS)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def read_manifest(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [dict(r) for r in csv.DictReader(fh)]


def item_seed(base_seed: int, index: int, attempt: int = 0) -> int:
    """Deterministic single-integer seed for one dataset item."""
    return (int(base_seed) * 1_000_003 + int(index)) * 1_009 + int(attempt)


def synthesize_item(seed: int, model: HandModel, total_frames: int = 60,
                    dt: float = 1.0 / 30.0):
    """One (script, mesh, trajectory) draw; raises GraspInfeasibleError."""
    rng = np.random.default_rng(int(seed))
    mesh = sample_object_mesh(rng)
    script = sample_script(rng, model, mesh, total_frames=total_frames)
    traj = generate_grasp(script, mesh, model, dt=dt)
    return script, mesh, traj


def generate_dataset(n: int, base_seed: int, model: HandModel, out_dir,
                     total_frames: int = 60, dt: float = 1.0 / 30.0,
                     perturb_config: PerturbConfig | None = None,
                     config_hash: str | None = None,
                     max_attempts: int = 40) -> list[dict]:
    """Write an n-item dataset under out_dir and return the manifest rows.

    Infeasible draws are retried with a fresh per-item seed; the seed that
    succeeded is recorded, so the dataset is reproducible from the manifest
    alone. The corrupted sibling of item i uses the stream (seed_i, 1).
    """
    check_hand_model(model)
    os.makedirs(out_dir, exist_ok=True)
    model_hash = model.content_hash()
    rows = []
    for i in range(n):
        for attempt in range(max_attempts):
            seed = item_seed(base_seed, i, attempt)
            try:
                _, mesh, traj = synthesize_item(seed, model, total_frames, dt)
            except GraspInfeasibleError:
                continue
            break
        else:
            raise GraspInfeasibleError(
                f"item {i}: no feasible grasp in {max_attempts} attempts")

        mesh_file = f"mesh_{i:04d}.obj"
        gt_file = f"gt_{i:04d}.traj"
        save_obj(mesh, os.path.join(out_dir, mesh_file))
        write_trajectory(traj, os.path.join(out_dir, gt_file), seed=seed,
                         config_hash=config_hash, model_hash=model_hash)
        row = {
            "index": i, "seed": seed,
            "config_hash": config_hash if config_hash is not None else "-",
            "mesh_file": mesh_file, "gt_file": gt_file, "perturbed_file": "-",
        }
        if perturb_config is not None:
            noisy, _ = perturb(traj, perturb_config, [seed, 1])
            noisy_file = f"noisy_{i:04d}.traj"
            write_trajectory(noisy, os.path.join(out_dir, noisy_file), seed=seed,
                             config_hash=config_hash, model_hash=model_hash)
            row["perturbed_file"] = noisy_file
        rows.append(row)
    write_manifest(os.path.join(out_dir, "manifest.csv"), rows)
    return rows
