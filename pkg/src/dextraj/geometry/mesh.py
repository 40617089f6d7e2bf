"""Watertight triangle meshes: I/O, queries, primitives.

Signed distance follows the angle-weighted pseudonormal construction
(closest point on the mesh, sign from the dot product with the pseudonormal
of the closest feature).  Negative values are inside.  Meshes are validated
at load: triangular faces only, every edge shared by exactly two coherently
oriented faces, no degenerate faces, outward global orientation.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

_AREA_EPS = 1e-14


class MeshError(ValueError):
    """Raised for malformed or non-watertight mesh data."""


def _float_repr(x: float) -> str:
    return format(float(x), ".17g")


class TriangleMesh:
    """Immutable watertight triangle mesh with cached query acceleration data.

    Parameters
    ----------
    vertices : ndarray, shape (V, 3)
    faces : ndarray of int, shape (F, 3)
        Vertex indices, coherently oriented with outward normals.
    """

    def __init__(self, vertices, faces):
        v = np.asarray(vertices, dtype=float)
        f = np.asarray(faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] < 4:
            raise MeshError(f"vertices must have shape (V, 3) with V >= 4, got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3 or f.shape[0] < 4:
            raise MeshError(f"faces must have shape (F, 3) with F >= 4, got {f.shape}")
        if not np.all(np.isfinite(v)):
            raise MeshError("vertices must be finite")
        if f.min() < 0 or f.max() >= v.shape[0]:
            raise MeshError("face index out of range")
        v.flags.writeable = False
        f.flags.writeable = False
        self.vertices = v
        self.faces = f
        self._validate()
        self._build_pseudonormals()
        self._sample_cache: dict[int, np.ndarray] = {}

    # -- construction-time checks -----------------------------------------

    def _validate(self):
        f = self.faces
        if np.any(f[:, 0] == f[:, 1]) or np.any(f[:, 1] == f[:, 2]) or np.any(f[:, 0] == f[:, 2]):
            raise MeshError("face with repeated vertex")
        a, b, c = (self.vertices[f[:, i]] for i in range(3))
        cross = np.cross(b - a, c - a)
        areas = 0.5 * np.linalg.norm(cross, axis=1)
        if np.any(areas < _AREA_EPS):
            raise MeshError("degenerate (zero-area) face")
        # watertight manifold: every directed edge occurs exactly once and its
        # reverse exactly once
        directed = set()
        for tri in f:
            for i, j in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                e = (int(i), int(j))
                if e in directed:
                    raise MeshError(f"directed edge {e} repeated; mesh not manifold")
                directed.add(e)
        for i, j in directed:
            if (j, i) not in directed:
                raise MeshError(f"boundary edge ({i}, {j}); mesh not watertight")
        # outward orientation: signed volume of the closed surface is positive
        vol = float(np.einsum("ij,ij->", a, np.cross(b, c))) / 6.0
        if vol <= 0.0:
            raise MeshError("mesh is inside-out (non-positive signed volume)")
        self._face_areas = areas
        self._face_areas.flags.writeable = False

    def _build_pseudonormals(self):
        v, f = self.vertices, self.faces
        a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
        n = np.cross(b - a, c - a)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        self._face_normals = n

        # vertex pseudonormals: incident angle weighted face normals
        vpn = np.zeros_like(v)
        corners = (a, b, c)
        for k in range(3):
            p0 = corners[k]
            e1 = corners[(k + 1) % 3] - p0
            e2 = corners[(k + 2) % 3] - p0
            cosang = np.einsum("ij,ij->i", e1, e2) / (np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1))
            ang = np.arccos(np.clip(cosang, -1.0, 1.0))
            np.add.at(vpn, f[:, k], ang[:, None] * n)
        vpn /= np.linalg.norm(vpn, axis=1, keepdims=True)
        self._vertex_pseudonormals = vpn

        # edge pseudonormals: sum of the two adjacent face normals
        acc: dict[tuple[int, int], np.ndarray] = {}
        for fi, tri in enumerate(f):
            for i, j in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (int(min(i, j)), int(max(i, j)))
                acc[key] = acc.get(key, 0.0) + n[fi]
        epn = np.empty((f.shape[0], 3, 3))
        for fi, tri in enumerate(f):
            for slot, (i, j) in enumerate(((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0]))):
                e = acc[(int(min(i, j)), int(max(i, j)))]
                epn[fi, slot] = e / np.linalg.norm(e)
        self._edge_pseudonormals = epn

        for arr in (self._face_normals, self._vertex_pseudonormals, self._edge_pseudonormals):
            arr.flags.writeable = False

    # -- basic properties ---------------------------------------------------

    @property
    def area(self) -> float:
        return float(self._face_areas.sum())

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def content_hash(self) -> str:
        """SHA-256 over the canonical text serialization."""
        h = hashlib.sha256()
        h.update(serialize_obj(self).encode("ascii"))
        return h.hexdigest()

    def scaled(self, factor: float) -> "TriangleMesh":
        if factor <= 0.0:
            raise ValueError("scale factor must be positive")
        return TriangleMesh(self.vertices * float(factor), self.faces)

    # -- queries --------------------------------------------------------------

    def closest_point(self, points):
        """Closest surface point for each query.

        Parameters
        ----------
        points : ndarray, shape (N, 3) or (3,)

        Returns
        -------
        closest : ndarray, shape (N, 3)
        face_index : ndarray of int, shape (N,)
            Ties between faces resolve to the lowest face index.
        """
        pts, single = _as_query(points)
        closest, _, fid, _ = self._closest_full(pts)
        return (closest[0], int(fid[0])) if single else (closest, fid)

    def signed_distance(self, points):
        """Signed distance to the surface; negative inside.

        The sign comes from the pseudonormal of the closest feature (face,
        edge, or vertex), which is robust for watertight meshes.
        """
        pts, single = _as_query(points)
        _, sd = self._signed_closest(pts)
        return float(sd[0]) if single else sd

    def signed_closest(self, points):
        """Closest surface point and signed distance in one query.

        Returns (closest (N,3), signed (N,)); signed is negative inside.
        """
        pts, single = _as_query(points)
        closest, sd = self._signed_closest(pts)
        return (closest[0], float(sd[0])) if single else (closest, sd)

    def _signed_closest(self, pts):
        closest, dist, fid, feat = self._closest_full(pts)
        normals = self._feature_normals(fid, feat)
        inside = np.einsum("ij,ij->i", pts - closest, normals) < 0.0
        return closest, np.where(inside, -dist, dist)

    def _feature_normals(self, fid, feat):
        out = np.empty((fid.shape[0], 3))
        face_mask = feat == 0
        out[face_mask] = self._face_normals[fid[face_mask]]
        for code, corner in ((1, 0), (2, 1), (3, 2)):
            m = feat == code
            out[m] = self._vertex_pseudonormals[self.faces[fid[m], corner]]
        for code, slot in ((4, 0), (5, 1), (6, 2)):
            m = feat == code
            out[m] = self._edge_pseudonormals[fid[m], slot]
        return out

    def _closest_full(self, pts):
        # chunk queries so the (N, F) workspace stays small
        n_f = self.faces.shape[0]
        chunk = max(1, int(2_000_000 // max(n_f, 1)))
        parts = [self._closest_chunk(pts[i : i + chunk]) for i in range(0, pts.shape[0], chunk)]
        return tuple(np.concatenate([p[k] for p in parts], axis=0) for k in range(4))

    def _closest_chunk(self, pts):
        tri = self.vertices[self.faces]  # (F, 3, 3)
        cp, feat = closest_point_on_triangles(pts[:, None, :], tri[None, :, 0], tri[None, :, 1], tri[None, :, 2])
        d2 = np.einsum("nfk,nfk->nf", pts[:, None, :] - cp, pts[:, None, :] - cp)
        fid = np.argmin(d2, axis=1)
        rows = np.arange(pts.shape[0])
        return cp[rows, fid], np.sqrt(d2[rows, fid]), fid, feat[rows, fid]

    def sample_surface(self, m: int, seed: int) -> np.ndarray:
        """Area-weighted random surface samples.

        Per-sample face chosen proportionally to area, position uniform by
        the square-root barycentric trick.  Deterministic given ``seed``.
        """
        if m < 1:
            raise ValueError("m must be >= 1")
        rng = np.random.default_rng(seed)
        probs = self._face_areas / self._face_areas.sum()
        fidx = rng.choice(self.faces.shape[0], size=m, p=probs)
        u, w = rng.random((2, m))
        su = np.sqrt(u)
        bary = np.stack([1.0 - su, su * (1.0 - w), su * w], axis=1)
        tri = self.vertices[self.faces[fidx]]
        return np.einsum("mk,mkj->mj", bary, tri)

    def canonical_samples(self, m: int) -> np.ndarray:
        """Fixed surface sample set seeded from the mesh content hash.

        The same mesh always yields the same points, giving index-aligned
        correspondence between two posings of one object.
        """
        if m not in self._sample_cache:
            seed = int(self.content_hash()[:16], 16)
            pts = self.sample_surface(m, seed)
            pts.flags.writeable = False
            self._sample_cache[m] = pts
        return self._sample_cache[m]


def _as_query(points):
    pts = np.asarray(points, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    if pts.shape[1] != 3:
        raise ValueError("query points must have shape (N, 3)")
    return pts, single


def closest_point_on_triangles(p, a, b, c):
    """Closest point on triangle(s) plus the feature it lies on.

    Standard region-based construction: classify the query against the six
    Voronoi regions of the triangle, then project.

    Returns
    -------
    closest : ndarray, broadcast shape (..., 3)
    feature : ndarray of int
        0 face interior, 1/2/3 vertex a/b/c, 4 edge ab, 5 edge bc, 6 edge ca.
    """
    p, a, b, c = np.broadcast_arrays(np.asarray(p, float), np.asarray(a, float), np.asarray(b, float), np.asarray(c, float))
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("...k,...k->...", ab, ap)
    d2 = np.einsum("...k,...k->...", ac, ap)
    bp = p - b
    d3 = np.einsum("...k,...k->...", ab, bp)
    d4 = np.einsum("...k,...k->...", ac, bp)
    cp = p - c
    d5 = np.einsum("...k,...k->...", ab, cp)
    d6 = np.einsum("...k,...k->...", ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    def safe_div(num, den):
        return num / np.where(np.abs(den) < 1e-300, 1.0, den)

    v_ab = safe_div(d1, d1 - d3)
    w_ac = safe_div(d2, d2 - d6)
    w_bc = safe_div(d4 - d3, (d4 - d3) + (d5 - d6))
    denom = va + vb + vc
    v_in = safe_div(vb, denom)
    w_in = safe_div(vc, denom)

    cond = [
        (d1 <= 0) & (d2 <= 0),                      # vertex a
        (d3 >= 0) & (d4 <= d3),                     # vertex b
        (d6 >= 0) & (d5 <= d6),                     # vertex c
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),          # edge ab
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),          # edge ca
        (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),  # edge bc
    ]
    pick = [
        a,
        b,
        c,
        a + v_ab[..., None] * ab,
        a + w_ac[..., None] * ac,
        b + w_bc[..., None] * (c - b),
    ]
    codes = [1, 2, 3, 4, 6, 5]
    closest = a + v_in[..., None] * ab + w_in[..., None] * ac
    feature = np.zeros(p.shape[:-1], dtype=np.int64)
    chosen = np.zeros(p.shape[:-1], dtype=bool)
    for cnd, val, code in zip(cond, pick, codes):
        take = cnd & ~chosen
        closest = np.where(take[..., None], val, closest)
        feature = np.where(take, code, feature)
        chosen |= take
    return closest, feature


# ---------------------------------------------------------------------------
# OBJ subset I/O


def load_obj(path) -> TriangleMesh:
    """Load a mesh from the supported OBJ subset.

    Only ``v x y z`` and triangular ``f i j k`` records (1-based, no slash
    syntax) plus comments and blank lines are accepted.
    """
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r", encoding="ascii") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if parts[0] == "v":
                if len(parts) != 4:
                    raise MeshError(f"{path}:{ln}: vertex line needs 3 coordinates")
                verts.append([float(x) for x in parts[1:]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise MeshError(f"{path}:{ln}: only triangular faces are supported")
                idx = []
                for tok in parts[1:]:
                    if "/" in tok:
                        raise MeshError(f"{path}:{ln}: face attribute syntax not supported")
                    idx.append(int(tok) - 1)
                faces.append(idx)
            else:
                raise MeshError(f"{path}:{ln}: unsupported record {parts[0]!r}")
    if not verts or not faces:
        raise MeshError(f"{path}: no geometry found")
    return TriangleMesh(np.asarray(verts), np.asarray(faces))


def serialize_obj(mesh: TriangleMesh) -> str:
    lines = [f"v {_float_repr(x)} {_float_repr(y)} {_float_repr(z)}" for x, y, z in mesh.vertices]
    lines += [f"f {i + 1} {j + 1} {k + 1}" for i, j, k in mesh.faces]
    return "\n".join(lines) + "\n"


def save_obj(mesh: TriangleMesh, path) -> None:
    """Write the mesh deterministically (17 significant digit coordinates)."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(serialize_obj(mesh))


# ---------------------------------------------------------------------------
# primitives


def box_mesh(extents, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Axis-aligned box with given full extents, 12 triangles."""
    e = np.asarray(extents, dtype=float).reshape(3)
    if np.any(e <= 0):
        raise ValueError("extents must be positive")
    hx, hy, hz = e / 2.0
    cx, cy, cz = np.asarray(center, dtype=float).reshape(3)
    v = np.array(
        [
            [-hx, -hy, -hz], [hx, -hy, -hz], [hx, hy, -hz], [-hx, hy, -hz],
            [-hx, -hy, hz], [hx, -hy, hz], [hx, hy, hz], [-hx, hy, hz],
        ]
    ) + np.array([cx, cy, cz])
    f = np.array(
        [
            [0, 2, 1], [0, 3, 2],      # bottom
            [4, 5, 6], [4, 6, 7],      # top
            [0, 1, 5], [0, 5, 4],      # -y
            [2, 3, 7], [2, 7, 6],      # +y
            [0, 4, 7], [0, 7, 3],      # -x
            [1, 2, 6], [1, 6, 5],      # +x
        ]
    )
    return TriangleMesh(v, f)


def icosphere_mesh(radius: float, subdivisions: int = 0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Icosahedron-based sphere approximation.

    ``subdivisions = 0`` gives the 20-face icosahedron; each level quadruples
    the face count and reprojects vertices onto the sphere.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if subdivisions < 0 or subdivisions > 6:
        raise ValueError("subdivisions must be in [0, 6]")
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    vlist = [tuple(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = np.asarray(vlist[i]) + np.asarray(vlist[j])
                m /= np.linalg.norm(m)
                cache[key] = len(vlist)
                vlist.append(tuple(m))
            return cache[key]

        new_faces = []
        for i, j, k in faces:
            a, b, c = midpoint(i, j), midpoint(j, k), midpoint(k, i)
            new_faces += [(i, a, c), (j, b, a), (k, c, b), (a, b, c)]
        faces = new_faces
    v = np.asarray(vlist) * radius + np.asarray(center, dtype=float)
    return TriangleMesh(v, np.asarray(faces))
