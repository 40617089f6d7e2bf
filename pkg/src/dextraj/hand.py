"""Articulated hand models: skeleton schema, forward kinematics, skin sampling.

Model file schema (line oriented, ``#`` comments allowed)::

    handmodel 1
    name <model-id>
    joint <name> <parent-link> ax ay az ox oy oz <min> <max>
    link <name> <parent-link> ox oy oz
    tip <link-name>
    sphere <link-name> cx cy cz radius
    couples <human-model-id>            # robot models only
    couple <joint> <human-joint>=<w> ...

The root link is implicitly named ``wrist``.  Each ``joint`` line creates a
revolute joint and a link of the same name: the link frame is the parent
frame translated by ``offset`` then rotated by angle theta about ``axis``.
``link`` lines add fixed child links (used for fingertips).  Parents must be
declared before children, so file order is a topological order; the joint
declaration order defines the joint-vector layout.  ``tip`` marks fingertip
links whose frame origins are the fingertip positions.  ``sphere`` lines
attach skin spheres in link-local coordinates.  ``couple`` rows map human
joints onto a robot joint as a convex combination (weights sum to 1).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .geometry.rigid import quat_from_axis_angle, quat_mul, quat_rotate

_GOLDEN_ANGLE = np.pi * (3.0 - np.sqrt(5.0))


class HandModelError(ValueError):
    """Raised for malformed hand model definitions."""


@dataclass(frozen=True)
class Joint:
    name: str
    parent: str
    axis: np.ndarray
    offset: np.ndarray
    lo: float
    hi: float


@dataclass(frozen=True)
class FixedLink:
    name: str
    parent: str
    offset: np.ndarray


@dataclass(frozen=True)
class SkinSphere:
    link: str
    center: np.ndarray
    radius: float


class HandModel:
    """An articulated hand: revolute joint tree plus sphere skin.

    Attributes
    ----------
    name : str
    joints : list of Joint
        Declaration order defines the joint vector layout.
    tip_links : list of str
        Fingertip link names; their frame origins are the fingertips.
    coupling : ndarray or None
        Optional (J_this, J_human) matrix mapping a human model's joint
        vector onto this model's, each row a convex combination.
    """

    def __init__(self, name, joints, fixed_links, spheres, tip_links, coupling=None, couples=None):
        self.name = str(name)
        self.joints = list(joints)
        self.fixed_links = list(fixed_links)
        self.spheres = list(spheres)
        self.tip_links = list(tip_links)
        self.coupling = None if coupling is None else np.asarray(coupling, dtype=float)
        self.couples = couples
        self._build()
        self._pattern_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    # -- structure ----------------------------------------------------------

    def _build(self):
        if not self.joints:
            raise HandModelError("model needs at least one joint")
        names = ["wrist"]
        parent_idx = [-1]
        offsets = [np.zeros(3)]
        is_joint = [False]
        for j in self.joints:
            if j.name in names:
                raise HandModelError(f"duplicate link name {j.name!r}")
            if j.parent not in names:
                raise HandModelError(f"joint {j.name!r}: parent {j.parent!r} not declared before use")
            axis = np.asarray(j.axis, dtype=float)
            n = np.linalg.norm(axis)
            if abs(n - 1.0) > 1e-9:
                raise HandModelError(f"joint {j.name!r}: axis must be unit length")
            if not j.lo < j.hi:
                raise HandModelError(f"joint {j.name!r}: empty limit interval")
            names.append(j.name)
            parent_idx.append(names.index(j.parent))
            offsets.append(np.asarray(j.offset, dtype=float))
            is_joint.append(True)
        for l in self.fixed_links:
            if l.name in names:
                raise HandModelError(f"duplicate link name {l.name!r}")
            if l.parent not in names:
                raise HandModelError(f"link {l.name!r}: parent {l.parent!r} not declared before use")
            names.append(l.name)
            parent_idx.append(names.index(l.parent))
            offsets.append(np.asarray(l.offset, dtype=float))
            is_joint.append(False)

        self.link_names = names
        self._parent_idx = np.asarray(parent_idx, dtype=np.int64)
        self._offsets = np.stack(offsets)
        self._is_joint = np.asarray(is_joint, dtype=bool)
        self._joint_link_idx = np.flatnonzero(self._is_joint)
        self._axes = np.stack([np.asarray(j.axis, dtype=float) for j in self.joints])
        self.lower_limits = np.asarray([j.lo for j in self.joints], dtype=float)
        self.upper_limits = np.asarray([j.hi for j in self.joints], dtype=float)

        for t in self.tip_links:
            if t not in names:
                raise HandModelError(f"tip link {t!r} undefined")
        if not self.tip_links:
            raise HandModelError("model needs at least one fingertip link")
        self._tip_link_idx = np.asarray([names.index(t) for t in self.tip_links], dtype=np.int64)

        sphere_link_idx = []
        for s in self.spheres:
            if s.link not in names:
                raise HandModelError(f"sphere on undefined link {s.link!r}")
            if s.radius <= 0:
                raise HandModelError("sphere radius must be positive")
            sphere_link_idx.append(names.index(s.link))
        if not self.spheres:
            raise HandModelError("model needs at least one skin sphere")
        self._sphere_link_idx = np.asarray(sphere_link_idx, dtype=np.int64)
        self._sphere_centers = np.stack([np.asarray(s.center, dtype=float) for s in self.spheres])
        self._sphere_radii = np.asarray([s.radius for s in self.spheres], dtype=float)
        covered = set(self._sphere_link_idx.tolist())
        if covered != set(range(len(names))):
            missing = [names[i] for i in range(len(names)) if i not in covered]
            raise HandModelError(f"links without skin spheres: {missing}")

        # ancestry: joints on the chain from wrist to each link
        n_links = len(names)
        anc = np.zeros((n_links, self.dof), dtype=bool)
        joint_index_of_link = {int(li): k for k, li in enumerate(self._joint_link_idx)}
        for i in range(1, n_links):
            p = int(self._parent_idx[i])
            anc[i] = anc[p]
            if i in joint_index_of_link:
                anc[i, joint_index_of_link[i]] = True
        self._ancestor_joints = anc

        if self.coupling is not None:
            c = self.coupling
            if c.ndim != 2 or c.shape[0] != self.dof:
                raise HandModelError(f"coupling must have {self.dof} rows, got {c.shape}")
            if np.any(np.abs(c.sum(axis=1) - 1.0) > 1e-9):
                raise HandModelError("coupling rows must each sum to 1")

    @property
    def dof(self) -> int:
        return len(self.joints)

    @property
    def n_fingertips(self) -> int:
        return len(self.tip_links)

    @property
    def n_links(self) -> int:
        return len(self.link_names)

    def tip_radii(self) -> np.ndarray:
        """Skin sphere radius at each fingertip link (first sphere on it)."""
        out = np.empty(len(self.tip_links))
        for f, li in enumerate(self._tip_link_idx):
            hits = np.flatnonzero(self._sphere_link_idx == li)
            out[f] = self._sphere_radii[hits[0]]
        return out

    def clamp(self, joints) -> np.ndarray:
        """Clip a joint vector (or batch) into the limit box. Idempotent."""
        return np.clip(np.asarray(joints, dtype=float), self.lower_limits, self.upper_limits)

    def finger_groups(self):
        """Per-fingertip (joint indices, skin sphere indices) along its chain.

        A finger's joints are the ancestors of its tip link; its spheres are
        the ones attached to links actuated by at least one of those joints.
        """
        groups = []
        for li in self._tip_link_idx:
            joint_idx = np.flatnonzero(self._ancestor_joints[li])
            on_finger = self._ancestor_joints[self._sphere_link_idx][:, joint_idx].any(axis=1)
            groups.append((joint_idx, np.flatnonzero(on_finger)))
        return groups

    def content_hash(self) -> str:
        return hashlib.sha256(serialize_hand_model(self).encode("ascii")).hexdigest()

    # -- kinematics ----------------------------------------------------------

    def fk(self, wrist_quat, wrist_trans, joints, scale: float = 1.0):
        """Forward kinematics for all link frames.

        Parameters
        ----------
        wrist_quat : ndarray, shape (..., 4)
        wrist_trans : ndarray, shape (..., 3)
        joints : ndarray, shape (..., J)
        scale : float
            Uniform geometry scale applied to link offsets.

        Returns
        -------
        quats : ndarray, shape (..., L, 4)
        trans : ndarray, shape (..., L, 3)
            Link frames in declaration order; index 0 is the wrist itself.
        """
        wq = np.asarray(wrist_quat, dtype=float)
        wt = np.asarray(wrist_trans, dtype=float)
        th = np.asarray(joints, dtype=float)
        if th.shape[-1] != self.dof:
            raise HandModelError(f"expected {self.dof} joint values, got {th.shape[-1]}")
        batch = th.shape[:-1]
        L = self.n_links
        quats = np.empty(batch + (L, 4))
        trans = np.empty(batch + (L, 3))
        quats[..., 0, :] = wq
        trans[..., 0, :] = wt
        jmap = {int(li): k for k, li in enumerate(self._joint_link_idx)}
        for i in range(1, L):
            p = int(self._parent_idx[i])
            pq = quats[..., p, :]
            pt = trans[..., p, :]
            base = quat_rotate(pq, self._offsets[i] * scale) + pt
            if i in jmap:
                k = jmap[i]
                jq = quat_from_axis_angle(th[..., k : k + 1] * self._axes[k])
                quats[..., i, :] = quat_mul(pq, jq)
            else:
                quats[..., i, :] = pq
            trans[..., i, :] = base
        return quats, trans

    def joint_positions(self, wrist_quat, wrist_trans, joints, scale: float = 1.0) -> np.ndarray:
        """World origins of the J joint frames, shape (..., J, 3)."""
        _, trans = self.fk(wrist_quat, wrist_trans, joints, scale)
        return trans[..., self._joint_link_idx, :]

    def fingertip_positions(self, wrist_quat, wrist_trans, joints, scale: float = 1.0) -> np.ndarray:
        """World fingertip positions, shape (..., F, 3)."""
        _, trans = self.fk(wrist_quat, wrist_trans, joints, scale)
        return trans[..., self._tip_link_idx, :]

    # -- skin sampling ---------------------------------------------------------

    def surface_pattern(self, v: int):
        """Canonical per-model skin sample pattern.

        Returns ``(link_index, local_points)`` arrays of length ``v``: sphere
        samples in link-local coordinates, allocated over spheres by surface
        area with every link guaranteed at least one sample.  Deterministic;
        the same pattern is reused for every pose so that points correspond
        across frames.
        """
        if v < self.n_links:
            raise HandModelError(f"need at least {self.n_links} samples (one per link), got {v}")
        if v not in self._pattern_cache:
            counts = _apportion(self._sphere_radii**2, v, self._sphere_link_idx, self.n_links)
            link_idx = np.repeat(self._sphere_link_idx, counts)
            pts = np.concatenate(
                [
                    self._sphere_centers[s] + self._sphere_radii[s] * _fibonacci_sphere(c)
                    for s, c in enumerate(counts)
                    if c > 0
                ]
            )
            pts.flags.writeable = False
            link_idx.flags.writeable = False
            self._pattern_cache[v] = (link_idx, pts)
        return self._pattern_cache[v]

    def surface_points(self, wrist_quat, wrist_trans, joints, v: int, scale: float = 1.0) -> np.ndarray:
        """Skin sample points in world coordinates, shape (..., v, 3)."""
        link_idx, local = self.surface_pattern(v)
        quats, trans = self.fk(wrist_quat, wrist_trans, joints, scale)
        q = quats[..., link_idx, :]
        t = trans[..., link_idx, :]
        return quat_rotate(q, local * scale) + t

    def map_joints(self, human_joints) -> np.ndarray:
        """Apply the human-to-this-model joint coupling map."""
        if self.coupling is None:
            raise HandModelError(f"model {self.name!r} has no coupling map")
        hj = np.asarray(human_joints, dtype=float)
        return hj @ self.coupling.T


def _fibonacci_sphere(n: int) -> np.ndarray:
    i = np.arange(n, dtype=float)
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    phi = i * _GOLDEN_ANGLE
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def _apportion(weights, total, sphere_link_idx, n_links):
    """Largest remainder apportionment with at least one sample per link."""
    w = np.asarray(weights, dtype=float)
    quota = w / w.sum() * total
    counts = np.floor(quota).astype(np.int64)
    rem = quota - counts
    short = total - counts.sum()
    for i in np.argsort(-rem, kind="stable")[:short]:
        counts[i] += 1
    # every link must own at least one sample: steal from the largest pools
    for link in range(n_links):
        mine = np.flatnonzero(sphere_link_idx == link)
        if counts[mine].sum() == 0:
            donor = int(np.argmax(np.where(np.bincount(sphere_link_idx, weights=counts, minlength=n_links)[sphere_link_idx] > 1, counts, -1)))
            counts[donor] -= 1
            counts[mine[0]] += 1
    return counts


# ---------------------------------------------------------------------------
# parsing and serialization


def parse_hand_model(text: str) -> HandModel:
    name = None
    joints: list[Joint] = []
    links: list[FixedLink] = []
    spheres: list[SkinSphere] = []
    tips: list[str] = []
    couples = None
    couple_rows: dict[str, list[tuple[str, float]]] = {}
    saw_header = False
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind = parts[0]
        try:
            if kind == "handmodel":
                if parts[1] != "1":
                    raise HandModelError(f"unsupported schema version {parts[1]}")
                saw_header = True
            elif kind == "name":
                name = parts[1]
            elif kind == "joint":
                jname, parent = parts[1], parts[2]
                vals = [float(x) for x in parts[3:]]
                if len(vals) != 8:
                    raise HandModelError("joint line needs axis, offset, and limits")
                joints.append(Joint(jname, parent, np.array(vals[0:3]), np.array(vals[3:6]), vals[6], vals[7]))
            elif kind == "link":
                vals = [float(x) for x in parts[3:]]
                if len(vals) != 3:
                    raise HandModelError("link line needs an offset")
                links.append(FixedLink(parts[1], parts[2], np.array(vals)))
            elif kind == "tip":
                tips.append(parts[1])
            elif kind == "sphere":
                vals = [float(x) for x in parts[2:]]
                if len(vals) != 4:
                    raise HandModelError("sphere line needs center and radius")
                spheres.append(SkinSphere(parts[1], np.array(vals[0:3]), vals[3]))
            elif kind == "couples":
                couples = parts[1]
            elif kind == "couple":
                entries = []
                for tok in parts[2:]:
                    hname, w = tok.rsplit("=", 1)
                    entries.append((hname, float(w)))
                couple_rows[parts[1]] = entries
            else:
                raise HandModelError(f"unknown record {kind!r}")
        except (IndexError, ValueError) as exc:
            if isinstance(exc, HandModelError):
                raise
            raise HandModelError(f"line {ln}: {raw.strip()!r}: {exc}") from exc
    if not saw_header:
        raise HandModelError("missing 'handmodel 1' header")
    if name is None:
        raise HandModelError("missing 'name' record")

    coupling = None
    if couple_rows:
        if couples is None:
            raise HandModelError("'couple' rows require a 'couples' record")
        human = builtin_hand_model(couples)
        hidx = {j.name: k for k, j in enumerate(human.joints)}
        coupling = np.zeros((len(joints), human.dof))
        for r, j in enumerate(joints):
            if j.name not in couple_rows:
                raise HandModelError(f"joint {j.name!r} missing from coupling map")
            for hname, w in couple_rows[j.name]:
                if hname not in hidx:
                    raise HandModelError(f"coupling references unknown human joint {hname!r}")
                coupling[r, hidx[hname]] = w
    return HandModel(name, joints, links, spheres, tips, coupling, couples)


def serialize_hand_model(model: HandModel) -> str:
    def f(x):
        return format(float(x), ".17g")

    out = ["handmodel 1", f"name {model.name}"]
    for j in model.joints:
        out.append(
            f"joint {j.name} {j.parent} " + " ".join(f(v) for v in j.axis) + " " + " ".join(f(v) for v in j.offset) + f" {f(j.lo)} {f(j.hi)}"
        )
    for l in model.fixed_links:
        out.append(f"link {l.name} {l.parent} " + " ".join(f(v) for v in l.offset))
    for t in model.tip_links:
        out.append(f"tip {t}")
    for s in model.spheres:
        out.append(f"sphere {s.link} " + " ".join(f(v) for v in s.center) + f" {f(s.radius)}")
    if model.coupling is not None:
        out.append(f"couples {model.couples}")
        human = builtin_hand_model(model.couples)
        for r, j in enumerate(model.joints):
            terms = [
                f"{human.joints[c].name}={f(model.coupling[r, c])}"
                for c in np.flatnonzero(np.abs(model.coupling[r]) > 0)
            ]
            out.append(f"couple {j.name} " + " ".join(terms))
    return "\n".join(out) + "\n"


def load_hand_model(path) -> HandModel:
    with open(path, "r", encoding="ascii") as fh:
        return parse_hand_model(fh.read())


_BUILTIN_CACHE: dict[str, HandModel] = {}


def builtin_hand_model(name: str) -> HandModel:
    """Load one of the models shipped with the package (human20, robot12)."""
    if name not in _BUILTIN_CACHE:
        try:
            text = (resources.files("dextraj") / "models" / f"{name}.txt").read_text(encoding="ascii")
        except FileNotFoundError:
            raise HandModelError(f"no builtin model named {name!r}") from None
        model = parse_hand_model(text)
        if model.name != name:
            raise HandModelError(f"model file {name}.txt declares name {model.name!r}")
        _BUILTIN_CACHE[name] = model
    return _BUILTIN_CACHE[name]
