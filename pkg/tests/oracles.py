"""Independent reference implementations used only by the test suite.

These deliberately avoid calling into the package internals so that each
check exercises two separate code paths for the same mathematical object.
"""

import itertools

import numpy as np


def analytic_box_sdf(p, extents, center=(0.0, 0.0, 0.0)):
    """Exact signed distance to an axis-aligned box."""
    q = np.abs(np.asarray(p, float) - np.asarray(center, float)) - np.asarray(extents, float) / 2.0
    outside = np.linalg.norm(np.maximum(q, 0.0))
    inside = min(q.max(), 0.0)
    return outside + inside


def point_triangle_distance(p, a, b, c):
    """Distance from a point to a triangle by candidate enumeration.

    Solves the unconstrained least squares projection, then clamps onto each
    edge; the minimum over feasible candidates is the true distance.
    """
    p, a, b, c = (np.asarray(x, float) for x in (p, a, b, c))
    ab, ac = b - a, c - a
    cands = []
    m = np.array([[ab @ ab, ab @ ac], [ab @ ac, ac @ ac]])
    rhs = np.array([ab @ (p - a), ac @ (p - a)])
    if abs(np.linalg.det(m)) > 1e-300:
        s, t = np.linalg.solve(m, rhs)
        if s >= 0.0 and t >= 0.0 and s + t <= 1.0:
            cands.append(a + s * ab + t * ac)
    for u, v in ((a, b), (b, c), (c, a)):
        e = v - u
        s = float(np.clip(e @ (p - u) / (e @ e), 0.0, 1.0))
        cands.append(u + s * e)
    return min(float(np.linalg.norm(p - q)) for q in cands)


def ray_parity_inside(p, vertices, faces, rng):
    """Inside test by ray-crossing parity, rejecting near-degenerate hits."""
    p = np.asarray(p, float)
    for _ in range(32):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        count = 0
        clean = True
        for tri in faces:
            a, b, c = vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]
            e1, e2 = b - a, c - a
            h = np.cross(d, e2)
            det = e1 @ h
            if abs(det) < 1e-12:
                continue
            inv = 1.0 / det
            s = p - a
            u = inv * (s @ h)
            q = np.cross(s, e1)
            v = inv * (d @ q)
            t = inv * (e2 @ q)
            if -1e-9 < u < 1e-9 or -1e-9 < v < 1e-9 or abs(u + v - 1.0) < 1e-9 or abs(t) < 1e-9:
                clean = False  # grazing hit, retry with another direction
                break
            if 0.0 < u < 1.0 and 0.0 < v < 1.0 and u + v < 1.0 and t > 0.0:
                count += 1
        if clean:
            return count % 2 == 1
    raise RuntimeError("could not find a clean ray direction")


def mesh_sdf_oracle(p, vertices, faces, rng):
    """Signed distance to an arbitrary watertight mesh, independent route."""
    d = min(
        point_triangle_distance(p, vertices[t[0]], vertices[t[1]], vertices[t[2]])
        for t in faces
    )
    return -d if ray_parity_inside(p, vertices, faces, rng) else d


def brute_force_frechet(pa, pb):
    """Discrete Frechet distance by exhaustive monotone coupling enumeration.

    Couplings start at (0, 0), end at (-1, -1), and advance one or both
    indices each step.  Only sane for very short tracks.
    """
    pa = np.asarray(pa, float)
    pb = np.asarray(pb, float)
    na, nb = len(pa), len(pb)
    dist = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=-1)
    best = [np.inf]

    def walk(i, j, cur):
        cur = max(cur, dist[i, j])
        if cur >= best[0]:
            return
        if i == na - 1 and j == nb - 1:
            best[0] = cur
            return
        if i + 1 < na:
            walk(i + 1, j, cur)
        if j + 1 < nb:
            walk(i, j + 1, cur)
        if i + 1 < na and j + 1 < nb:
            walk(i + 1, j + 1, cur)

    walk(0, 0, -np.inf)
    return best[0]


def all_monotone_couplings(na, nb):
    """Yield every monotone coupling path (for tiny na, nb)."""
    def rec(i, j, path):
        if i == na - 1 and j == nb - 1:
            yield path
            return
        if i + 1 < na:
            yield from rec(i + 1, j, path + [(i + 1, j)])
        if j + 1 < nb:
            yield from rec(i, j + 1, path + [(i, j + 1)])
        if i + 1 < na and j + 1 < nb:
            yield from rec(i + 1, j + 1, path + [(i + 1, j + 1)])

    yield from rec(0, 0, [(0, 0)])
