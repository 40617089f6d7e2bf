"""Point-to-point iterative closest point registration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rigid import RigidPose, matrix_to_quat


class DegenerateCloudError(ValueError):
    """Cloud covariance has rank < 3; the rotation is not well determined."""


@dataclass(frozen=True)
class ICPResult:
    transform: RigidPose
    residual: float
    iterations: int
    residual_history: tuple[float, ...]


def _check_rank(points, name):
    centered = points - points.mean(axis=0)
    s = np.linalg.svd(centered, compute_uv=False)
    if s.shape[0] < 3 or s[2] <= 1e-9 * max(s[0], 1e-300):
        raise DegenerateCloudError(f"{name} cloud covariance rank < 3")


def _best_rigid(src, dst):
    # closed-form least squares alignment (SVD of the cross covariance)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    h = (src - mu_s).T @ (dst - mu_d)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = mu_d - r @ mu_s
    return r, t


def _nn_rms(moved, dst):
    d2 = np.einsum("ik,ik->i", moved, moved)[:, None] - 2.0 * moved @ dst.T
    d2 += np.einsum("jk,jk->j", dst, dst)[None, :]
    return float(np.sqrt(np.maximum(d2.min(axis=1), 0.0).mean()))


def _pca_init(src, dst):
    # principal axis alignment; try the four proper sign flips and keep the
    # candidate with the lowest one-pass nearest-neighbor residual
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    _, us = np.linalg.eigh((src - mu_s).T @ (src - mu_s))
    _, ud = np.linalg.eigh((dst - mu_d).T @ (dst - mu_d))
    if np.linalg.det(us) < 0:
        us = us * np.array([1.0, 1.0, -1.0])
    if np.linalg.det(ud) < 0:
        ud = ud * np.array([1.0, 1.0, -1.0])
    best = None
    for signs in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
        r = ud @ np.diag(signs) @ us.T
        t = mu_d - r @ mu_s
        score = _nn_rms(src @ r.T + t, dst)
        if best is None or score < best[0]:
            best = (score, r, t)
    return best[1], best[2]


def icp_rigid(source, target, max_iters: int = 100, tol: float = 1e-12) -> ICPResult:
    """Register ``source`` onto ``target`` with point-to-point ICP.

    Correspondences are exhaustive nearest neighbors; each iteration applies
    the closed-form SVD alignment for the current correspondence set, which
    makes the RMS residual non-increasing.  Initialization aligns principal
    axes (the four proper sign combinations scored by one nearest-neighbor
    pass), which keeps moderate rotations out of local minima.

    Parameters
    ----------
    source, target : ndarray, shape (N, 3) / (M, 3)
        Both clouds must have full-rank covariance (not collinear/planar).
    max_iters : int
        Iteration budget.
    tol : float
        Stop when the residual improves by less than this.

    Returns
    -------
    ICPResult
        ``transform`` maps source points onto the target.
    """
    src = np.asarray(source, dtype=float)
    dst = np.asarray(target, dtype=float)
    if src.ndim != 2 or src.shape[1] != 3 or dst.ndim != 2 or dst.shape[1] != 3:
        raise ValueError("clouds must have shape (N, 3)")
    if src.shape[0] < 3 or dst.shape[0] < 3:
        raise ValueError("clouds need at least 3 points")
    _check_rank(src, "source")
    _check_rank(dst, "target")

    r, t = _pca_init(src, dst)
    history = []
    prev = np.inf
    iters = 0
    for iters in range(1, max_iters + 1):
        moved = src @ r.T + t
        # expanded form only ranks candidates; the residual needs the direct
        # difference to avoid cancellation noise near convergence
        d2 = np.einsum("ik,ik->i", moved, moved)[:, None] - 2.0 * moved @ dst.T
        d2 += np.einsum("jk,jk->j", dst, dst)[None, :]
        nn = np.argmin(d2, axis=1)
        diff = moved - dst[nn]
        residual = float(np.sqrt(np.einsum("ik,ik->i", diff, diff).mean()))
        history.append(residual)
        if prev - residual < tol:
            break
        prev = residual
        r, t = _best_rigid(src, dst[nn])
    pose = RigidPose(matrix_to_quat(r), t)
    return ICPResult(pose, history[-1], iters, tuple(history))
