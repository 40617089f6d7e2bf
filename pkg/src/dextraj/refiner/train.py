"""Two-stage training loop for the trajectory refiner.

Stage "pretrain" learns on default-perturbation data; stage "finetune"
starts from a pretrain checkpoint and adapts to the harsher parsing
surrogate profile (larger drift, frame dropouts).  Both stages run Adam
over seeded shuffles, log a per-epoch mean of every loss term, and write
one checkpoint per epoch.  Runs are deterministic: rerunning with the same
config and data produces byte-identical checkpoints and loss curves.
"""

import csv
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from ..diffgeom import TensorTracks
from ..geometry.mesh import TriangleMesh, load_obj
from ..hand import HandModel
from ..losses import LossConfig, LossWeights, total_loss
from ..synth.dataset import read_manifest
from ..trajectory import Trajectory, read_trajectory
from .checkpoint import load_checkpoint, save_checkpoint
from .features import FrameFeatures, extract_features
from .model import RefinerConfig, TrajectoryRefiner

CURVE_FIELDS = ("epoch", "stage", "L_total", "rec", "object_cloud",
                "hand_cloud", "joint_angle", "smooth", "pene")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.  Defaults follow the full-scale recipe;
    `desk_train_config` shrinks them to minutes-on-a-CPU size."""

    lr: float = 1e-4
    batch_size: int = 16
    epochs: int = 100
    max_frames: int = 120       # longest admissible clip
    stage: str = "pretrain"
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.stage not in ("pretrain", "finetune"):
            raise ValueError("stage must be 'pretrain' or 'finetune'")

    def scalar_fields(self) -> dict:
        """Flat fields for the checkpoint echo (loss settings included)."""
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float, str)):
                out[f.name] = v
        for f in fields(self.weights):
            out[f"weight_{f.name}"] = getattr(self.weights, f.name)
        for f in fields(self.loss):
            out[f"loss_{f.name}"] = getattr(self.loss, f.name)
        return out


def desk_train_config(stage: str = "pretrain", **overrides) -> TrainConfig:
    """Desk-scale preset: 20 epochs, small loss clouds."""
    base = dict(epochs=20, stage=stage,
                loss=LossConfig(cloud_points=96, pene_points=48))
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class TrainItem:
    """One supervised pair: the noisy input and its clean target."""

    noisy: Trajectory
    target: Trajectory
    mesh: TriangleMesh
    scale: float = 1.0


def load_training_items(manifest_path) -> list[TrainItem]:
    """Read a dataset directory (manifest + files) into TrainItems."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    items = []
    for row in read_manifest(manifest_path):
        mesh = load_obj(root / row["mesh_file"])
        gt, _ = read_trajectory(root / row["gt_file"])
        noisy, _ = read_trajectory(root / row["perturbed_file"])
        items.append(TrainItem(noisy=noisy, target=gt, mesh=mesh,
                               scale=noisy.scale))
    return items


def _pad_features(feats: list[FrameFeatures], pad_to: int) -> FrameFeatures:
    """Concatenate per-item features (each B=1) into one padded batch."""
    def pad(x):
        T = x.shape[1]
        if T == pad_to:
            return x
        shape = (x.shape[0], pad_to - T) + tuple(x.shape[2:])
        return torch.cat([x, torch.zeros(shape, dtype=x.dtype)], dim=1)

    pose = []
    for f in feats:
        p = pad(f.pose)
        # identity quaternions on padding rows keep pose features sane
        if f.pose.shape[1] < pad_to:
            p[0, f.pose.shape[1]:, 0] = 1.0
            p[0, f.pose.shape[1]:, p.shape[-1] - 7] = 1.0
        pose.append(p)
    return FrameFeatures(
        hand_neigh=torch.cat([pad(f.hand_neigh) for f in feats]),
        obj_neigh=torch.cat([pad(f.obj_neigh) for f in feats]),
        pose=torch.cat(pose),
        center=torch.cat([f.center for f in feats]),
        mask=torch.cat([pad(f.mask) for f in feats]))


def train(items: list[TrainItem], model: HandModel,
          config: TrainConfig | None = None,
          net_config: RefinerConfig | None = None,
          out_dir=None, init_from=None):
    """Run one training stage; returns (net, curve rows).

    `init_from` is a checkpoint path; it is required when
    config.stage == "finetune" and otherwise optional (resume).  When
    `out_dir` is given, per-epoch checkpoints and `loss_curve.csv` are
    written there.  Sets torch to single-threaded execution so gradient
    reductions are deterministic.
    """
    config = config or TrainConfig()
    if not items:
        raise ValueError("empty dataset")
    if config.stage == "finetune" and init_from is None:
        raise ValueError("finetune requires a pretrain checkpoint")
    torch.set_num_threads(1)

    if init_from is not None:
        net, _ = load_checkpoint(init_from)
    else:
        J = items[0].noisy.num_joints
        net_config = net_config or RefinerConfig(pose_width=14 + J)
        net = TrajectoryRefiner(net_config)

    for it in items:
        if it.noisy.num_frames > min(config.max_frames, net.config.t_max):
            raise ValueError(
                f"clip length {it.noisy.num_frames} exceeds the maximum "
                f"sequence length {min(config.max_frames, net.config.t_max)}")

    feats = [extract_features([it.noisy], it.mesh, net.config, model,
                              scales=[it.scale]) for it in items]

    opt = torch.optim.Adam(net.parameters(), lr=config.lr)
    n = len(items)
    curve = []
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        sums = dict.fromkeys(CURVE_FIELDS[2:], 0.0)
        for start in range(0, n, config.batch_size):
            batch = [items[i] for i in order[start: start + config.batch_size]]
            bfeats = [feats[i] for i in order[start: start + config.batch_size]]
            pad_to = max(it.noisy.num_frames for it in batch)
            tracks_in = TensorTracks.from_trajectories(
                [it.noisy for it in batch], pad_to=pad_to)
            gt = TensorTracks.from_trajectories(
                [it.target for it in batch], pad_to=pad_to)
            out = net(tracks_in, _pad_features(bfeats, pad_to))
            loss, report = total_loss(
                out, gt, model, [it.mesh for it in batch],
                weights=config.weights, config=config.loss,
                scales=np.array([it.scale for it in batch]))
            opt.zero_grad()
            loss.backward()
            opt.step()
            w = len(batch) / n
            for key, val in (("L_total", report.total), ("rec", report.rec),
                             ("object_cloud", report.object_cloud),
                             ("hand_cloud", report.hand_cloud),
                             ("joint_angle", report.joint_angle),
                             ("smooth", report.smooth), ("pene", report.pene)):
                sums[key] += w * val

        row = {"epoch": epoch, "stage": config.stage, **sums}
        curve.append(row)
        if out_dir is not None:
            save_checkpoint(out_dir / f"checkpoint_ep{epoch:03d}.bin", net,
                            epoch, config.stage, config.seed,
                            train_fields=config.scalar_fields())
            write_loss_curve(out_dir / "loss_curve.csv", curve)
    return net, curve


def write_loss_curve(path, curve: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in curve:
            out = dict(row)
            for k, v in out.items():
                if isinstance(v, float):
                    out[k] = format(v, ".17g")
            w.writerow(out)


def read_loss_curve(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        row["epoch"] = int(row["epoch"])
        for k in CURVE_FIELDS[2:]:
            row[k] = float(row[k])
    return rows
