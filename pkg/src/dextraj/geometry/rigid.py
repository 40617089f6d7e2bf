"""Rigid transforms on SE(3) backed by unit quaternions.

Quaternions are stored scalar-first as ``(w, x, y, z)`` and kept in the
canonical half-space ``w >= 0`` so every rotation has one representation.
Rotation vectors (axis-angle) use the principal branch with angle in
``[0, pi]``.  At exactly pi the axis sign is ambiguous; we pick the axis
whose first nonzero component is positive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_EPS = 1e-12


# ---------------------------------------------------------------------------
# quaternion primitives


def quat_normalize(q):
    """Return ``q`` scaled to unit norm.

    Parameters
    ----------
    q : ndarray, shape (..., 4)
        Quaternion(s), scalar first.

    Raises
    ------
    ValueError
        If any quaternion has near-zero norm.
    """
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < _EPS):
        raise ValueError("cannot normalize near-zero quaternion")
    return q / n


def quat_canonical(q):
    """Flip sign so the scalar part is non-negative."""
    q = np.asarray(q, dtype=float)
    flip = q[..., :1] < 0.0
    return np.where(flip, -q, q)


def quat_mul(a, b):
    """Hamilton product ``a * b``, scalar-first convention."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q):
    """Conjugate (inverse for unit quaternions)."""
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_rotate(q, v):
    """Rotate vector(s) ``v`` by unit quaternion(s) ``q``.

    Uses the expanded sandwich product ``q v q*`` which costs two cross
    products instead of two quaternion multiplies; the crosses are written
    out by component to avoid np.cross dispatch overhead in hot loops.
    """
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    w = q[..., 0]
    ux, uy, uz = q[..., 1], q[..., 2], q[..., 3]
    vx, vy, vz = v[..., 0], v[..., 1], v[..., 2]
    tx = 2.0 * (uy * vz - uz * vy)
    ty = 2.0 * (uz * vx - ux * vz)
    tz = 2.0 * (ux * vy - uy * vx)
    return np.stack(
        [
            vx + w * tx + (uy * tz - uz * ty),
            vy + w * ty + (uz * tx - ux * tz),
            vz + w * tz + (ux * ty - uy * tx),
        ],
        axis=-1,
    )


def quat_to_matrix(q):
    """Convert unit quaternion(s) to rotation matrix(es), shape (..., 3, 3)."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    row0 = np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1)
    row1 = np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1)
    row2 = np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1)
    return np.stack([row0, row1, row2], axis=-2)


def matrix_to_quat(m):
    """Convert rotation matrix(es) to canonical unit quaternion(s).

    Shepperd's method: pick the largest diagonal combination for stability.
    """
    m = np.asarray(m, dtype=float)
    single = m.ndim == 2
    if single:
        m = m[None]
    w2 = 1.0 + m[..., 0, 0] + m[..., 1, 1] + m[..., 2, 2]
    x2 = 1.0 + m[..., 0, 0] - m[..., 1, 1] - m[..., 2, 2]
    y2 = 1.0 - m[..., 0, 0] + m[..., 1, 1] - m[..., 2, 2]
    z2 = 1.0 - m[..., 0, 0] - m[..., 1, 1] + m[..., 2, 2]
    out = np.empty(m.shape[:-2] + (4,), dtype=float)
    choice = np.argmax(np.stack([w2, x2, y2, z2], axis=-1), axis=-1)
    for idx in np.ndindex(m.shape[:-2]):
        mm = m[idx]
        c = choice[idx]
        if c == 0:
            s = np.sqrt(w2[idx]) * 2.0
            out[idx] = [0.25 * s, (mm[2, 1] - mm[1, 2]) / s, (mm[0, 2] - mm[2, 0]) / s, (mm[1, 0] - mm[0, 1]) / s]
        elif c == 1:
            s = np.sqrt(x2[idx]) * 2.0
            out[idx] = [(mm[2, 1] - mm[1, 2]) / s, 0.25 * s, (mm[0, 1] + mm[1, 0]) / s, (mm[0, 2] + mm[2, 0]) / s]
        elif c == 2:
            s = np.sqrt(y2[idx]) * 2.0
            out[idx] = [(mm[0, 2] - mm[2, 0]) / s, (mm[0, 1] + mm[1, 0]) / s, 0.25 * s, (mm[1, 2] + mm[2, 1]) / s]
        else:
            s = np.sqrt(z2[idx]) * 2.0
            out[idx] = [(mm[1, 0] - mm[0, 1]) / s, (mm[0, 2] + mm[2, 0]) / s, (mm[1, 2] + mm[2, 1]) / s, 0.25 * s]
    out = quat_canonical(quat_normalize(out))
    return out[0] if single else out


def quat_from_axis_angle(rotvec):
    """Exponential map: rotation vector(s) -> unit quaternion(s)."""
    rotvec = np.asarray(rotvec, dtype=float)
    angle = np.linalg.norm(rotvec, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sinc form is exact at angle = 0
    small = angle < 1e-8
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(small, 0.5 - angle * angle / 48.0, np.sin(half) / np.where(small, 1.0, angle))
    w = np.cos(half)
    xyz = rotvec * k
    return np.concatenate([w, xyz], axis=-1)


def quat_to_axis_angle(q):
    """Logarithm map: unit quaternion(s) -> rotation vector(s), angle in [0, pi].

    At exactly pi the axis is sign-ambiguous; the representative with first
    nonzero component positive is returned.
    """
    q = quat_canonical(np.asarray(q, dtype=float))
    w = q[..., 0]
    xyz = q[..., 1:]
    n = np.linalg.norm(xyz, axis=-1)
    angle = 2.0 * np.arctan2(n, w)
    small = n < 1e-9
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(small, 2.0 / np.where(np.abs(w) < _EPS, 1.0, w), angle / np.where(small, 1.0, n))
    out = xyz * scale[..., None]
    # pi tie-break: w == 0 leaves q and -q indistinguishable, fix the axis sign
    at_pi = np.abs(w) < 1e-12
    if np.any(at_pi):
        out = out.copy()
        flat = out.reshape(-1, 3)
        for i in np.flatnonzero(at_pi.reshape(-1)):
            v = flat[i]
            nz = np.flatnonzero(np.abs(v) > _EPS)
            if nz.size and v[nz[0]] < 0:
                flat[i] = -v
        out = flat.reshape(out.shape)
    return out


def rotation_geodesic(qa, qb):
    """Geodesic angle in radians between two unit quaternions."""
    rel = quat_mul(quat_conj(np.asarray(qa, float)), np.asarray(qb, float))
    rel = quat_canonical(rel)
    n = np.linalg.norm(rel[..., 1:], axis=-1)
    return 2.0 * np.arctan2(n, rel[..., 0])


def quat_slerp(qa, qb, u):
    """Spherical interpolation from ``qa`` to ``qb`` at fraction(s) ``u``."""
    qa = quat_normalize(np.asarray(qa, dtype=float))
    qb = quat_normalize(np.asarray(qb, dtype=float))
    dot = float(np.dot(qa, qb))
    if dot < 0.0:
        qb = -qb
        dot = -dot
    u = np.asarray(u, dtype=float)
    if dot > 1.0 - 1e-12:
        out = qa + u[..., None] * (qb - qa)
        return quat_canonical(quat_normalize(out))
    theta = np.arccos(np.clip(dot, -1.0, 1.0))
    s = np.sin(theta)
    out = (np.sin((1.0 - u) * theta)[..., None] * qa + np.sin(u * theta)[..., None] * qb) / s
    return quat_canonical(quat_normalize(out))


def random_quat(rng):
    """Uniform random rotation (Shoemake's subgroup algorithm)."""
    u1, u2, u3 = rng.random(3)
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    q = np.array(
        [b * np.cos(2 * np.pi * u3), a * np.sin(2 * np.pi * u2), a * np.cos(2 * np.pi * u2), b * np.sin(2 * np.pi * u3)]
    )
    return quat_canonical(q)


# ---------------------------------------------------------------------------
# rigid pose


_IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class RigidPose:
    """A rigid transform ``x -> R x + t`` with quaternion rotation.

    Parameters
    ----------
    quat : ndarray, shape (4,)
        Unit quaternion, scalar first.  Must be within 1e-9 of unit norm;
        stored in the canonical ``w >= 0`` half-space.  The norm is validated
        rather than silently renormalized so that byte-exact passthrough of
        externally supplied poses is possible.
    trans : ndarray, shape (3,)
        Translation in meters.
    """

    quat: np.ndarray = field(default_factory=lambda: _IDENTITY_QUAT.copy())
    trans: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=float).reshape(4)
        t = np.asarray(self.trans, dtype=float).reshape(3)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise ValueError("pose components must be finite")
        n = float(np.linalg.norm(q))
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"quaternion norm {n!r} deviates from 1 by more than 1e-9")
        if q[0] < 0.0:
            q = -q
        q.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "quat", q)
        object.__setattr__(self, "trans", t)

    @staticmethod
    def identity() -> "RigidPose":
        return RigidPose()

    @staticmethod
    def from_rotvec(rotvec, trans=(0.0, 0.0, 0.0)) -> "RigidPose":
        return RigidPose(quat_from_axis_angle(np.asarray(rotvec, float)), np.asarray(trans, float))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.quat)

    def apply(self, points) -> np.ndarray:
        """Transform point(s) of shape (..., 3)."""
        return quat_rotate(self.quat, np.asarray(points, dtype=float)) + self.trans

    def compose(self, other: "RigidPose") -> "RigidPose":
        """Return ``self @ other`` (apply ``other`` first)."""
        q = quat_canonical(quat_normalize(quat_mul(self.quat, other.quat)))
        t = quat_rotate(self.quat, other.trans) + self.trans
        return RigidPose(q, t)

    def inverse(self) -> "RigidPose":
        qi = quat_conj(self.quat)
        return RigidPose(quat_canonical(qi), -quat_rotate(qi, self.trans))


@dataclass(frozen=True)
class PoseDelta:
    """Difference between two poses: rotation vector plus translation offset."""

    rotational: np.ndarray
    translational: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotational, dtype=float).reshape(3)
        t = np.asarray(self.translational, dtype=float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("pose delta must be finite")
        r.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotational", r)
        object.__setattr__(self, "translational", t)

    def norm(self) -> float:
        """Norm of the stacked 6-vector."""
        return float(np.sqrt(np.dot(self.rotational, self.rotational) + np.dot(self.translational, self.translational)))


def pose_compose(a: RigidPose, b: RigidPose) -> RigidPose:
    """Composition ``a @ b`` with renormalized quaternion."""
    return a.compose(b)


def pose_diff(a: RigidPose, b: RigidPose) -> PoseDelta:
    """Relative delta of ``a`` with respect to ``b``.

    ``rotational`` is the rotation vector of ``R_b^T R_a`` and
    ``translational`` is ``t_a - t_b``, so that
    ``pose_apply_delta(b, pose_diff(a, b))`` recovers ``a``.
    """
    rel = quat_mul(quat_conj(b.quat), a.quat)
    return PoseDelta(quat_to_axis_angle(rel), a.trans - b.trans)


def pose_apply_delta(b: RigidPose, delta: PoseDelta) -> RigidPose:
    """Recompose: rotation applied on the right, translation added."""
    q = quat_canonical(quat_normalize(quat_mul(b.quat, quat_from_axis_angle(delta.rotational))))
    return RigidPose(q, b.trans + delta.translational)
