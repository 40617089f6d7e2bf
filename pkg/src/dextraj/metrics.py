"""Evaluation metrics for hand-object trajectories.

All distance metrics are reported in millimeters: MPJPE (mean per-joint
position error of forward-kinematics joint origins), ADD-S (symmetric
average model-point distance for object poses), discrete Frechet distance of
the wrist and object translation tracks, and a third-difference jerk proxy
for smoothness.  A strict four-threshold predicate decides grasp success on
a final frame.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, fields

import numpy as np

from .geometry import quat_rotate, rotation_geodesic
from .hand import HandModel
from .trajectory import InteractionFrame, Trajectory

__all__ = [
    "MetricReport",
    "SuccessCriteria",
    "mpjpe",
    "add_s",
    "frechet",
    "jerk",
    "jerk_normalized",
    "grasp_success",
    "evaluate_trajectory",
    "aggregate_reports",
    "write_metrics_csv",
    "read_metrics_csv",
    "write_metrics_report",
    "METRIC_COLUMNS",
]

# column names used in the CSV/report interfaces
METRIC_COLUMNS = ("MPJPE", "ADD-S", "FD (hand)", "FD (obj)", "JK (hand)",
                  "JK (obj)")


@dataclass(frozen=True)
class MetricReport:
    """Six per-trajectory metric values, all in millimeters."""

    mpjpe: float
    add_s: float
    fd_hand: float
    fd_obj: float
    jk_hand: float
    jk_obj: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v >= 0.0):
                raise ValueError(f"{f.name} must be finite and >= 0, got {v}")

    def values(self) -> tuple:
        return tuple(getattr(self, f.name) for f in fields(self))


@dataclass(frozen=True)
class SuccessCriteria:
    """Strict upper bounds for grasp success, in SI units (rad, m)."""

    rotation: float = math.radians(30.0)
    translation: float = 0.03
    joint_position: float = 0.08
    fingertip: float = 0.06

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0.0:
                raise ValueError(f"{f.name} threshold must be positive")


def _both_valid(pred: Trajectory, gt: Trajectory) -> np.ndarray:
    if pred.num_frames != gt.num_frames:
        raise ValueError(f"trajectory lengths differ: {pred.num_frames} vs "
                         f"{gt.num_frames}")
    both = pred.valid & gt.valid
    if not both.any():
        raise ValueError("no frame is valid in both trajectories")
    return both


def mpjpe(pred: Trajectory, gt: Trajectory, model: HandModel) -> float:
    """Mean per-joint position error of FK joint origins, in mm."""
    both = _both_valid(pred, gt)
    p = model.joint_positions(pred.wrist_quat[both], pred.wrist_trans[both],
                              pred.joints[both], scale=pred.scale)
    g = model.joint_positions(gt.wrist_quat[both], gt.wrist_trans[both],
                              gt.joints[both], scale=gt.scale)
    return 1000.0 * float(np.linalg.norm(p - g, axis=-1).mean())


def add_s(pred_quat, pred_trans, gt_quat, gt_trans, points,
          valid=None) -> float:
    """Symmetric average model-point distance between pose tracks, in mm.

    Per frame: mean over predicted-pose points of the distance to the
    nearest ground-truth-pose point; averaged over valid frames.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError("ADD-S needs a non-empty (M, 3) sample set")
    pq, pt = np.asarray(pred_quat, float), np.asarray(pred_trans, float)
    gq, gt_ = np.asarray(gt_quat, float), np.asarray(gt_trans, float)
    t_cnt = pq.shape[0]
    if valid is None:
        valid = np.ones(t_cnt, dtype=bool)
    total, n = 0.0, 0
    for t in range(t_cnt):
        if not valid[t]:
            continue
        a = quat_rotate(pq[t], points) + pt[t]
        b = quat_rotate(gq[t], points) + gt_[t]
        d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
        total += float(d.min(axis=1).mean())
        n += 1
    if n == 0:
        raise ValueError("no valid frames")
    return 1000.0 * total / n


def frechet(seq_a, seq_b) -> float:
    """Discrete Frechet distance between two point sequences, in mm.

    Standard quadratic dynamic program over monotone couplings; works for
    points of any dimension.
    """
    a = np.atleast_2d(np.asarray(seq_a, dtype=float))
    b = np.atleast_2d(np.asarray(seq_b, dtype=float))
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("sequences must be non-empty")
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1)
    na, nb = d.shape
    ca = np.empty((na, nb))
    ca[0, 0] = d[0, 0]
    for i in range(1, na):
        ca[i, 0] = max(ca[i - 1, 0], d[i, 0])
    for j in range(1, nb):
        ca[0, j] = max(ca[0, j - 1], d[0, j])
    for i in range(1, na):
        for j in range(1, nb):
            ca[i, j] = max(d[i, j],
                           min(ca[i - 1, j], ca[i, j - 1], ca[i - 1, j - 1]))
    return 1000.0 * float(ca[-1, -1])


def jerk(positions) -> float:
    """Mean third-difference magnitude of a position track, in mm.

    The raw finite difference is reported without dividing by the cube of
    the frame period; see :func:`jerk_normalized` for the rate version.
    Tracks shorter than 4 frames have no third difference and yield 0 with
    a warning.
    """
    x = np.asarray(positions, dtype=float)
    if x.shape[0] < 4:
        warnings.warn("jerk needs at least 4 frames; returning 0",
                      stacklevel=2)
        return 0.0
    d3 = x[3:] - 3.0 * x[2:-1] + 3.0 * x[1:-2] - x[:-3]
    return 1000.0 * float(np.linalg.norm(d3, axis=-1).mean())


def jerk_normalized(positions, dt: float) -> float:
    """Third-difference jerk divided by dt^3, in mm/s^3."""
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    return jerk(positions) / dt ** 3


def grasp_success(pred_frame: InteractionFrame, gt_frame: InteractionFrame,
                  model: HandModel, criteria: SuccessCriteria | None = None,
                  scale: float = 1.0):
    """Strict four-threshold success test on a final frame.

    Returns ``(success, breakdown)`` where the breakdown maps each criterion
    to its measured error (SI units) and lists the violated ones.
    """
    criteria = criteria or SuccessCriteria()
    if not (pred_frame.valid and gt_frame.valid):
        raise ValueError("grasp_success needs two valid frames")

    rot = float(rotation_geodesic(pred_frame.object_pose.quat,
                                  gt_frame.object_pose.quat))
    trans = float(np.linalg.norm(pred_frame.object_pose.trans
                                 - gt_frame.object_pose.trans))

    def hand_points(fn, frame):
        return fn(frame.wrist.quat, frame.wrist.trans, frame.joints, scale)

    jp = np.linalg.norm(hand_points(model.joint_positions, pred_frame)
                        - hand_points(model.joint_positions, gt_frame),
                        axis=-1).mean()
    ft = np.linalg.norm(hand_points(model.fingertip_positions, pred_frame)
                        - hand_points(model.fingertip_positions, gt_frame),
                        axis=-1).mean()

    errors = {"rotation": rot, "translation": trans,
              "joint_position": float(jp), "fingertip": float(ft)}
    violated = tuple(name for name in errors
                     if not errors[name] < getattr(criteria, name))
    breakdown = dict(errors, violated=violated)
    return len(violated) == 0, breakdown


def evaluate_trajectory(pred: Trajectory, gt: Trajectory, model: HandModel,
                        points, hand_track: str = "wrist") -> MetricReport:
    """Compute the six-column metric report for one trajectory pair.

    ``points`` is the object sample set for ADD-S in mesh-local units (it is
    scaled by the ground-truth trajectory's scale).  ``hand_track`` selects
    the hand representative for the Frechet distance: the wrist translation
    (default) or the flattened FK joint positions (``"joints"``).
    """
    both = _both_valid(pred, gt)
    pts = np.asarray(points, dtype=float) * gt.scale

    if hand_track == "wrist":
        ha, hb = pred.wrist_trans[both], gt.wrist_trans[both]
    elif hand_track == "joints":
        ha = model.joint_positions(pred.wrist_quat[both],
                                   pred.wrist_trans[both],
                                   pred.joints[both], scale=pred.scale)
        hb = model.joint_positions(gt.wrist_quat[both], gt.wrist_trans[both],
                                   gt.joints[both], scale=gt.scale)
        ha, hb = ha.reshape(ha.shape[0], -1), hb.reshape(hb.shape[0], -1)
    else:
        raise ValueError(f"unknown hand_track {hand_track!r}")

    with warnings.catch_warnings():
        # short clips degrade to jerk 0 by definition; no need to repeat the
        # warning once per metric row
        warnings.simplefilter("ignore")
        jk_hand = jerk(pred.wrist_trans[pred.valid])
        jk_obj = jerk(pred.object_trans[pred.valid])
    return MetricReport(
        mpjpe=mpjpe(pred, gt, model),
        add_s=add_s(pred.object_quat, pred.object_trans, gt.object_quat,
                    gt.object_trans, pts, valid=both),
        fd_hand=frechet(ha, hb),
        fd_obj=frechet(pred.object_trans[both], gt.object_trans[both]),
        jk_hand=jk_hand,
        jk_obj=jk_obj,
    )


def aggregate_reports(reports) -> MetricReport:
    """Unweighted mean of each column over a list of reports."""
    if not reports:
        raise ValueError("no reports to aggregate")
    cols = np.array([r.values() for r in reports], dtype=float)
    return MetricReport(*cols.mean(axis=0))


def write_metrics_csv(path, reports, labels=None) -> None:
    """One row per trajectory plus a final aggregate row labeled 'mean'."""
    if labels is None:
        labels = [str(i) for i in range(len(reports))]
    if len(labels) != len(reports):
        raise ValueError("labels and reports differ in length")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("item",) + METRIC_COLUMNS)
        for label, rep in zip(labels, reports):
            w.writerow((label,) + tuple("%.17g" % v for v in rep.values()))
        agg = aggregate_reports(reports)
        w.writerow(("mean",) + tuple("%.17g" % v for v in agg.values()))


def read_metrics_csv(path):
    """Read back a metrics CSV: ``(labels, reports, aggregate)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != ("item",) + METRIC_COLUMNS:
        raise ValueError(f"{path}: not a metrics CSV")
    labels, reports, agg = [], [], None
    for row in rows[1:]:
        rep = MetricReport(*(float(x) for x in row[1:]))
        if row[0] == "mean":
            agg = rep
        else:
            labels.append(row[0])
            reports.append(rep)
    return labels, reports, agg


def write_metrics_report(path, reports, labels=None, title="evaluation") -> None:
    """Human-readable structured summary alongside the CSV."""
    agg = aggregate_reports(reports)
    lines = [f"report {title}", f"trajectories {len(reports)}"]
    for name, value in zip(METRIC_COLUMNS, agg.values()):
        lines.append(f"mean {name}: {value:.4f} mm")
    if labels:
        worst = max(range(len(reports)), key=lambda i: reports[i].mpjpe)
        lines.append(f"worst MPJPE: {labels[worst]} "
                     f"({reports[worst].mpjpe:.4f} mm)")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
