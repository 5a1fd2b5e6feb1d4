"""Kinematic-tree robot description, constraints, and JSON file I/O.

A model is an ordered list of links, each attached to its parent by a single
joint (revolute, prismatic, or a floating base at the root).  Link indices are
topological: every link's parent index is strictly smaller than its own, with
``-1`` denoting the world.

Frames and layout conventions:

* Each link has a body frame; the joint's ``xyz``/``rpy`` place the joint home
  frame in the parent frame, and the link frame coincides with the home frame
  at zero joint position.
* Constraint rows act on a link's spatial acceleration expressed in a
  world-aligned frame whose origin sits at the link body-frame origin.
  External forces use the same frame.
* Configuration vector layout: a floating base contributes 7 numbers
  (unit quaternion w,x,y,z then position x,y,z), every 1-dof joint one angle or
  offset, in link order.  Velocity layout: 6 numbers for the base (body-frame
  angular then linear), one per 1-dof joint.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from .spatial import SpatialInertia, SpatialMotion, SpatialTransform, quat_to_rotation

__all__ = [
    "ModelError",
    "Joint",
    "Link",
    "RobotModel",
    "RobotState",
    "ConstraintEntry",
    "ConstraintSet",
    "WorldPointAnchor",
    "WorldWeldAnchor",
    "motion_subspace",
    "load_model",
    "save_model",
    "model_to_document",
    "load_constraints",
    "save_constraints",
    "constraints_to_document",
]

DEFAULT_GRAVITY = (0.0, 0.0, -9.81)

REVOLUTE = "revolute"
PRISMATIC = "prismatic"
FLOATING = "floating"
_JOINT_KINDS = (REVOLUTE, PRISMATIC, FLOATING)


class ModelError(ValueError):
    """Raised for invalid model or constraint documents."""


def _unit_axis(axis) -> np.ndarray:
    u = np.asarray(axis, dtype=float).reshape(3)
    n = np.linalg.norm(u)
    if n < 1e-12:
        raise ModelError("joint axis must be nonzero")
    if abs(n - 1.0) > 1e-12:
        u = u / n
    u.flags.writeable = False
    return u


def _rpy_to_matrix(rpy) -> np.ndarray:
    """Fixed-axis roll/pitch/yaw to an active rotation matrix."""
    return Rotation.from_euler("xyz", np.asarray(rpy, dtype=float)).as_matrix()


@dataclass(frozen=True)
class Joint:
    """A single joint: its kind, axis, and fixed placement in the parent frame."""

    kind: str
    axis: np.ndarray | None = None
    origin_xyz: tuple[float, float, float] = (0.0, 0.0, 0.0)
    origin_rpy: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in _JOINT_KINDS:
            raise ModelError(f"unknown joint kind {self.kind!r}")
        if self.kind == FLOATING:
            if self.axis is not None:
                raise ModelError("floating joint takes no axis")
        else:
            if self.axis is None:
                raise ModelError(f"{self.kind} joint requires an axis")
            object.__setattr__(self, "axis", _unit_axis(self.axis))
        object.__setattr__(self, "origin_xyz", tuple(float(v) for v in self.origin_xyz))
        object.__setattr__(self, "origin_rpy", tuple(float(v) for v in self.origin_rpy))

    @property
    def dof(self) -> int:
        return 6 if self.kind == FLOATING else 1

    @property
    def config_size(self) -> int:
        return 7 if self.kind == FLOATING else 1

    def home_transform(self) -> SpatialTransform:
        """Coordinate transform from the parent frame to the joint home frame."""
        pose_rot = _rpy_to_matrix(self.origin_rpy)
        return SpatialTransform(pose_rot.T, np.asarray(self.origin_xyz, dtype=float))


def motion_subspace(joint: Joint) -> np.ndarray:
    """6 x dof matrix mapping joint rates to body-frame spatial velocity."""
    if joint.kind == REVOLUTE:
        return np.concatenate([joint.axis, np.zeros(3)]).reshape(6, 1)
    if joint.kind == PRISMATIC:
        return np.concatenate([np.zeros(3), joint.axis]).reshape(6, 1)
    return np.eye(6)


@dataclass(frozen=True)
class Link:
    """One rigid body and the joint connecting it to its parent."""

    index: int
    parent: int
    name: str
    joint: Joint
    mass: float
    com: np.ndarray
    inertia_com: np.ndarray
    inertia: SpatialInertia = field(init=False)

    def __post_init__(self):
        if self.parent >= self.index:
            raise ModelError(
                f"link {self.name!r}: parent index {self.parent} is not smaller "
                f"than its own index {self.index} (topological order)"
            )
        com = np.asarray(self.com, dtype=float).reshape(3)
        icom = np.asarray(self.inertia_com, dtype=float).reshape(3, 3)
        com.flags.writeable = False
        icom.flags.writeable = False
        object.__setattr__(self, "com", com)
        object.__setattr__(self, "inertia_com", icom)
        if not self.mass > 0.0:
            raise ModelError(f"link {self.name!r}: nonpositive mass {self.mass}")
        if np.max(np.abs(icom - icom.T)) > 1e-9 * (1.0 + np.max(np.abs(icom))):
            raise ModelError(f"link {self.name!r}: rotational inertia not symmetric")
        if np.min(np.linalg.eigvalsh(0.5 * (icom + icom.T))) <= 0.0:
            raise ModelError(f"link {self.name!r}: rotational inertia not positive definite")
        object.__setattr__(
            self, "inertia", SpatialInertia.from_params(self.mass, com, icom)
        )


class RobotModel:
    """Immutable kinematic tree plus gravity.

    Construct through :func:`load_model` or from a list of :class:`Link`.
    Derived index tables (children lists, configuration/velocity offsets, link
    depths, dense link inertias) are precomputed here once and shared by every
    sweep.
    """

    def __init__(self, links: Sequence[Link], gravity=DEFAULT_GRAVITY, floating_base: bool = False):
        links = list(links)
        if not links:
            raise ModelError("model needs at least one link")
        names = [l.name for l in links]
        if len(set(names)) != len(names):
            raise ModelError("duplicate link names")
        self.links: tuple[Link, ...] = tuple(links)
        self.gravity = SpatialMotion(np.zeros(3), np.asarray(gravity, dtype=float))
        self.floating_base = bool(floating_base)

        root_children = [l.index for l in links if l.parent == -1]
        if self.floating_base:
            if len(root_children) != 1 or root_children[0] != 0:
                raise ModelError("floating base requires exactly one root link at index 0")
            if links[0].joint.kind != FLOATING:
                raise ModelError("floating base root link must use a floating joint")
            self.base_index = 0
        else:
            self.base_index = -1
        for l in links:
            if l.joint.kind == FLOATING and (not self.floating_base or l.index != 0):
                raise ModelError(
                    f"link {l.name!r}: floating joint is only supported at the base"
                )

        self.num_links = len(links)
        self.children: tuple[tuple[int, ...], ...] = tuple(
            tuple(c.index for c in links if c.parent == i) for i in range(self.num_links)
        )
        self._name_to_index = {l.name: l.index for l in links}

        q_off, v_off = [], []
        q, v = 0, 0
        for l in links:
            q_off.append(q)
            v_off.append(v)
            q += l.joint.config_size
            v += l.joint.dof
        self.config_size = q
        self.dof = v
        self.q_offsets = tuple(q_off)
        self.v_offsets = tuple(v_off)

        depth = [0] * self.num_links
        for l in links:
            depth[l.index] = 1 if l.parent == -1 else depth[l.parent] + 1
        self.link_depth = tuple(depth)
        self.depth = max(depth)

        self.link_inertia6 = np.stack([l.inertia.matrix() for l in links])
        self.link_inertia6.flags.writeable = False
        # 1-dof joints stored as flat body-frame subspace columns for the sweeps.
        self.joint_subspace = tuple(
            None if l.joint.kind == FLOATING else motion_subspace(l.joint).reshape(6)
            for l in links
        )
        self._home = tuple(l.joint.home_transform() for l in links)

    def link_index(self, ref) -> int:
        if isinstance(ref, str):
            try:
                return self._name_to_index[ref]
            except KeyError:
                raise ModelError(f"unknown link name {ref!r}") from None
        idx = int(ref)
        if not 0 <= idx < self.num_links:
            raise ModelError(f"link index {idx} out of range")
        return idx

    def home_transform(self, i: int) -> SpatialTransform:
        return self._home[i]

    def q_slice(self, i: int) -> slice:
        return slice(self.q_offsets[i], self.q_offsets[i] + self.links[i].joint.config_size)

    def v_slice(self, i: int) -> slice:
        return slice(self.v_offsets[i], self.v_offsets[i] + self.links[i].joint.dof)

    def neutral_state(self) -> "RobotState":
        q = np.zeros(self.config_size)
        if self.floating_base:
            q[0] = 1.0
        return RobotState(q=q, qd=np.zeros(self.dof), tau=np.zeros(self.dof))

    def state(self, q=None, qd=None, tau=None, f_ext=None) -> "RobotState":
        st = self.neutral_state()
        if q is not None:
            st.q[:] = np.asarray(q, dtype=float)
        if qd is not None:
            st.qd[:] = np.asarray(qd, dtype=float)
        if tau is not None:
            st.tau[:] = np.asarray(tau, dtype=float)
        if f_ext is not None:
            st.f_ext = np.asarray(f_ext, dtype=float).reshape(self.num_links, 6)
        return st

    def validate_state(self, state: "RobotState") -> None:
        if state.q.shape != (self.config_size,):
            raise ModelError(
                f"configuration size {state.q.shape} does not match model ({self.config_size},)"
            )
        if state.qd.shape != (self.dof,):
            raise ModelError(f"velocity size {state.qd.shape} does not match model ({self.dof},)")
        if state.tau.shape != (self.dof,):
            raise ModelError(f"torque size {state.tau.shape} does not match model ({self.dof},)")
        if state.f_ext is not None and state.f_ext.shape != (self.num_links, 6):
            raise ModelError("external force array must be (num_links, 6)")
        if self.floating_base:
            n = np.linalg.norm(state.q[0:4])
            if abs(n - 1.0) > 1e-6:
                raise ModelError(f"floating-base quaternion norm {n} drifted from 1")


@dataclass
class RobotState:
    """Configuration, velocity, and input channels; owned by the caller.

    ``f_ext`` holds one spatial force per link, expressed world-aligned at the
    link origin; ``None`` means no external forces.
    """

    q: np.ndarray
    qd: np.ndarray
    tau: np.ndarray
    f_ext: np.ndarray | None = None

    def __post_init__(self):
        self.q = np.array(self.q, dtype=float)
        self.qd = np.array(self.qd, dtype=float)
        self.tau = np.array(self.tau, dtype=float)
        if self.f_ext is not None:
            self.f_ext = np.array(self.f_ext, dtype=float)

    def copy(self) -> "RobotState":
        return RobotState(
            self.q.copy(),
            self.qd.copy(),
            self.tau.copy(),
            None if self.f_ext is None else self.f_ext.copy(),
        )


@dataclass(frozen=True)
class WorldPointAnchor:
    """A link-frame point pinned to a fixed world point (3 constraint rows)."""

    point: np.ndarray
    anchor: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.point, dtype=float).reshape(3)
        a = np.asarray(self.anchor, dtype=float).reshape(3)
        p.flags.writeable = False
        a.flags.writeable = False
        object.__setattr__(self, "point", p)
        object.__setattr__(self, "anchor", a)

    @property
    def rows(self) -> int:
        return 3


@dataclass(frozen=True)
class WorldWeldAnchor:
    """The full link pose welded to a fixed world pose (6 constraint rows)."""

    anchor_quat: np.ndarray
    anchor_position: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.anchor_quat, dtype=float).reshape(4)
        q = q / np.linalg.norm(q)
        p = np.asarray(self.anchor_position, dtype=float).reshape(3)
        q.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "anchor_quat", q)
        object.__setattr__(self, "anchor_position", p)

    @property
    def rows(self) -> int:
        return 6

    def anchor_rotation(self) -> np.ndarray:
        return quat_to_rotation(self.anchor_quat)


@dataclass
class ConstraintEntry:
    """Constraint rows on one link's spatial acceleration.

    ``rows`` and ``targets`` are the realized K (m_i x 6, world-aligned at the
    link origin) and desired constraint accelerations k.  Rows are
    unit-normalized on construction, with targets and weights rescaled so the
    constraint (and any penalty objective) is unchanged.  Anchored entries
    (``anchor`` set) may leave ``rows = None``; the simulator realizes them
    from the current configuration each step.
    """

    link: int
    rows: np.ndarray | None = None
    targets: np.ndarray | None = None
    soft_weight: np.ndarray | None = None
    anchor: WorldPointAnchor | WorldWeldAnchor | None = None

    def __post_init__(self):
        if self.rows is None and self.anchor is None:
            raise ModelError("constraint entry needs rows or an anchor")
        if self.rows is not None:
            k_mat = np.array(self.rows, dtype=float)
            if k_mat.ndim != 2 or k_mat.shape[1] != 6 or k_mat.shape[0] == 0:
                raise ModelError(f"constraint rows must be (m, 6), got {k_mat.shape}")
            m = k_mat.shape[0]
            if self.targets is None:
                tgt = np.zeros(m)
            else:
                tgt = np.array(self.targets, dtype=float).reshape(-1)
                if tgt.shape != (m,):
                    raise ModelError("constraint targets length does not match rows")
            scale = np.linalg.norm(k_mat, axis=1)
            if np.any(scale < 1e-12):
                raise ModelError("constraint row with zero norm")
            k_mat /= scale[:, None]
            tgt = tgt / scale
            self.rows = k_mat
            self.targets = tgt
            if self.soft_weight is not None:
                w = np.array(self.soft_weight, dtype=float).reshape(-1)
                if w.size == 1:
                    w = np.full(m, w[0])
                if w.shape != (m,):
                    raise ModelError("soft_weight length does not match rows")
                if np.any(w <= 0.0):
                    raise ModelError("soft_weight entries must be positive")
                # Weights are penalty stiffnesses; rescale so the quadratic
                # objective is invariant under the row normalization.
                self.soft_weight = w * scale**2
        elif self.soft_weight is not None:
            w = np.array(self.soft_weight, dtype=float).reshape(-1)
            if w.size == 1:
                w = np.full(self.anchor.rows, w[0])
            if w.shape != (self.anchor.rows,):
                raise ModelError("soft_weight length does not match anchor rows")
            if np.any(w <= 0.0):
                raise ModelError("soft_weight entries must be positive")
            self.soft_weight = w

    @property
    def num_rows(self) -> int:
        if self.rows is not None:
            return self.rows.shape[0]
        return self.anchor.rows

    @property
    def realized(self) -> bool:
        return self.rows is not None


class ConstraintSet:
    """An ordered collection of constraint entries; row order is entry order."""

    def __init__(self, entries: Iterable[ConstraintEntry] = ()):
        self.entries: tuple[ConstraintEntry, ...] = tuple(entries)
        offsets = []
        m = 0
        for e in self.entries:
            offsets.append(m)
            m += e.num_rows
        self.row_offsets = tuple(offsets)
        self.num_rows = m

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def empty(self) -> bool:
        return self.num_rows == 0

    @property
    def realized(self) -> bool:
        return all(e.realized for e in self.entries)

    @property
    def has_soft_weights(self) -> bool:
        return any(e.soft_weight is not None for e in self.entries)

    def require_realized(self, what: str = "solver") -> None:
        if not self.realized:
            raise ModelError(
                f"{what} needs realized constraint rows; anchored entries must be "
                "materialized first (see sim.realize_constraints)"
            )


# ---------------------------------------------------------------------------
# JSON documents


def _as_document(source) -> dict:
    if isinstance(source, dict):
        return source
    if hasattr(source, "read"):
        return json.load(source)
    text = os.fspath(source)
    if isinstance(text, str) and text.lstrip().startswith("{"):
        return json.loads(text)
    if not os.path.exists(text):
        raise FileNotFoundError(f"no such file: {text}")
    with open(text) as fh:
        return json.load(fh)


def _resolve_parents(raw_links: list[dict]) -> list[int]:
    """Parent references (index, name, or null) to document positions."""
    name_to_pos = {}
    for pos, doc in enumerate(raw_links):
        name = doc.get("name", f"link{pos}")
        if name in name_to_pos:
            raise ModelError(f"duplicate link name {name!r}")
        name_to_pos[name] = pos
    parents = []
    using_indices = False
    for pos, doc in enumerate(raw_links):
        ref = doc.get("parent", -1)
        if ref is None or ref == "world" or ref == -1:
            parents.append(-1)
        elif isinstance(ref, bool):
            raise ModelError("parent reference must be an index, a name, or null")
        elif isinstance(ref, int):
            using_indices = True
            parents.append(ref)
        elif isinstance(ref, str):
            if ref not in name_to_pos:
                raise ModelError(f"unknown parent link {ref!r}")
            parents.append(name_to_pos[ref])
        else:
            raise ModelError("parent reference must be an index, a name, or null")
    ordered = all(p < pos for pos, p in enumerate(parents))
    if ordered:
        return parents
    if using_indices:
        bad = next(pos for pos, p in enumerate(parents) if p >= pos)
        raise ModelError(
            f"link at position {bad} has parent id {parents[bad]} >= its own id; "
            "index-referenced documents must already be in topological order"
        )
    # Name-referenced documents may arrive in any order; sort topologically.
    order: list[int] = []
    state = [0] * len(raw_links)  # 0 new, 1 visiting, 2 done

    def visit(pos: int) -> None:
        if state[pos] == 2:
            return
        if state[pos] == 1:
            raise ModelError("cycle detected in parent references")
        state[pos] = 1
        if parents[pos] != -1:
            visit(parents[pos])
        state[pos] = 2
        order.append(pos)

    for pos in range(len(raw_links)):
        visit(pos)
    new_pos = {old: new for new, old in enumerate(order)}
    reordered = [-1 if parents[old] == -1 else new_pos[parents[old]] for old in order]
    raw_links[:] = [raw_links[old] for old in order]
    return reordered


def _inertia6_to_matrix(inertia6) -> np.ndarray:
    v = np.asarray(inertia6, dtype=float).reshape(6)
    xx, yy, zz, xy, xz, yz = v
    return np.array([[xx, xy, xz], [xy, yy, yz], [xz, yz, zz]])


def _matrix_to_inertia6(m: np.ndarray) -> list[float]:
    return [m[0, 0], m[1, 1], m[2, 2], m[0, 1], m[0, 2], m[1, 2]]


def load_model(source) -> RobotModel:
    """Load a model document (path, JSON text, dict, or open file)."""
    doc = _as_document(source)
    raw_links = list(doc.get("links", []))
    if not raw_links:
        raise ModelError("model document has no links")
    raw_links = [dict(l) for l in raw_links]
    parents = _resolve_parents(raw_links)
    floating = bool(doc.get("floating_base", False))

    links = []
    for idx, (raw, parent) in enumerate(zip(raw_links, parents)):
        name = raw.get("name", f"link{idx}")
        jraw = dict(raw.get("joint", {}))
        kind = jraw.get("kind")
        if kind is None:
            if floating and parent == -1:
                kind = FLOATING
            else:
                raise ModelError(f"link {name!r}: joint kind missing")
        joint = Joint(
            kind=kind,
            axis=jraw.get("axis"),
            origin_xyz=tuple(jraw.get("xyz", (0.0, 0.0, 0.0))),
            origin_rpy=tuple(jraw.get("rpy", (0.0, 0.0, 0.0))),
        )
        if "mass" not in raw:
            raise ModelError(f"link {name!r}: mass missing")
        links.append(
            Link(
                index=idx,
                parent=parent,
                name=name,
                joint=joint,
                mass=float(raw["mass"]),
                com=np.asarray(raw.get("com", (0.0, 0.0, 0.0)), dtype=float),
                inertia_com=_inertia6_to_matrix(raw.get("inertia6", (1e-3,) * 3 + (0.0,) * 3)),
            )
        )
    gravity = doc.get("gravity", DEFAULT_GRAVITY)
    return RobotModel(links, gravity=gravity, floating_base=floating)


def model_to_document(model: RobotModel) -> dict:
    links = []
    for l in model.links:
        jdoc: dict = {"kind": l.joint.kind}
        if l.joint.axis is not None:
            jdoc["axis"] = [float(v) for v in l.joint.axis]
        jdoc["xyz"] = list(l.joint.origin_xyz)
        jdoc["rpy"] = list(l.joint.origin_rpy)
        links.append(
            {
                "name": l.name,
                "parent": l.parent if l.parent == -1 else model.links[l.parent].name,
                "joint": jdoc,
                "mass": l.mass,
                "com": [float(v) for v in l.com],
                "inertia6": [float(v) for v in _matrix_to_inertia6(l.inertia_com)],
            }
        )
    return {
        "links": links,
        "floating_base": model.floating_base,
        "gravity": [float(v) for v in model.gravity.linear],
    }


def save_model(model: RobotModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_document(model), fh, indent=2)
        fh.write("\n")


def load_constraints(source, model: RobotModel) -> ConstraintSet:
    """Load a constraint document (raw K/k rows or anchored entries)."""
    doc = _as_document(source)
    entries = []
    for raw in doc.get("constraints", []):
        link = model.link_index(raw["link"])
        soft = raw.get("soft_weight")
        kind = raw.get("type", "rows")
        if kind == "rows":
            if "K" not in raw:
                raise ModelError("raw constraint entry needs a K matrix")
            entries.append(
                ConstraintEntry(
                    link=link,
                    rows=np.asarray(raw["K"], dtype=float),
                    targets=None if raw.get("k") is None else np.asarray(raw["k"], dtype=float),
                    soft_weight=soft,
                )
            )
        elif kind == "world_point":
            entries.append(
                ConstraintEntry(
                    link=link,
                    soft_weight=soft,
                    anchor=WorldPointAnchor(
                        point=raw.get("point", (0.0, 0.0, 0.0)),
                        anchor=raw["anchor"],
                    ),
                )
            )
        elif kind == "world_weld":
            entries.append(
                ConstraintEntry(
                    link=link,
                    soft_weight=soft,
                    anchor=WorldWeldAnchor(
                        anchor_quat=raw.get("anchor_quat", (1.0, 0.0, 0.0, 0.0)),
                        anchor_position=raw.get("anchor_position", (0.0, 0.0, 0.0)),
                    ),
                )
            )
        else:
            raise ModelError(f"unknown constraint type {kind!r}")
    return ConstraintSet(entries)


def constraints_to_document(constraints: ConstraintSet, model: RobotModel) -> dict:
    out = []
    for e in constraints:
        doc: dict = {"link": model.links[e.link].name}
        if e.anchor is None:
            doc["K"] = [[float(v) for v in row] for row in e.rows]
            doc["k"] = [float(v) for v in e.targets]
        elif isinstance(e.anchor, WorldPointAnchor):
            doc["type"] = "world_point"
            doc["point"] = [float(v) for v in e.anchor.point]
            doc["anchor"] = [float(v) for v in e.anchor.anchor]
        else:
            doc["type"] = "world_weld"
            doc["anchor_quat"] = [float(v) for v in e.anchor.anchor_quat]
            doc["anchor_position"] = [float(v) for v in e.anchor.anchor_position]
        if e.soft_weight is not None:
            doc["soft_weight"] = [float(v) for v in np.atleast_1d(e.soft_weight)]
        out.append(doc)
    return {"constraints": out}


def save_constraints(constraints: ConstraintSet, model: RobotModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(constraints_to_document(constraints, model), fh, indent=2)
        fh.write("\n")
