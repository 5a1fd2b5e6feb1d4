"""Built-in robot generators for tests and benchmarks.

Deterministic families (serial chains, branched trees, a quadruped, a welded
ladder) plus seeded random trees, states, and constraint sets.  Generators
emit model documents and feed them through the loader, so every generated
model also exercises validation.
"""

from __future__ import annotations

import numpy as np

from .kinematics import constraint_jacobian, forward_sweep
from .model import (
    ConstraintEntry,
    ConstraintSet,
    RobotModel,
    RobotState,
    WorldPointAnchor,
    WorldWeldAnchor,
    load_model,
)

__all__ = [
    "chain",
    "branched",
    "quadruped",
    "quadruped_foot_constraints",
    "ladder",
    "ladder_constraints",
    "pendulum",
    "random_tree",
    "random_state",
    "random_constraints",
]

_AXES = ([0.0, 0.0, 1.0], [0.0, 1.0, 0.0])


def _link_doc(name, parent, axis, xyz, mass, length):
    # Rod-like inertia about the com, slightly asymmetric so nothing cancels.
    ix = 0.002 * mass
    iy = mass * length**2 / 12.0 + 0.001 * mass
    iz = mass * length**2 / 12.0 + 0.003 * mass
    return {
        "name": name,
        "parent": parent,
        "joint": {"kind": "revolute", "axis": axis, "xyz": xyz},
        "mass": mass,
        "com": [length / 2.0, 0.0, 0.0],
        "inertia6": [ix, iy, iz, 0.0, 0.0, 0.0],
    }


def pendulum(length: float = 1.0, mass: float = 1.0, point: bool = True) -> RobotModel:
    """Single revolute link about world y, swinging in the x-z plane.

    With ``point`` the whole mass sits at the tip and the rotational inertia
    about the com is negligible, so the pivot inertia is m*l^2.
    """
    eps = 1e-12 if point else mass * length**2 / 12.0
    doc = {
        "links": [
            {
                "name": "bob",
                "parent": -1,
                "joint": {"kind": "revolute", "axis": [0.0, 1.0, 0.0]},
                "mass": mass,
                "com": [length, 0.0, 0.0] if point else [length / 2.0, 0.0, 0.0],
                "inertia6": [eps, eps, eps, 0.0, 0.0, 0.0],
            }
        ]
    }
    return load_model(doc)


def chain(n: int, floating: bool = False, length: float = 0.35) -> RobotModel:
    """Serial chain of n revolute links along +x with alternating z/y axes."""
    if n < 1:
        raise ValueError("chain needs at least one link")
    links = []
    start = 0
    if floating:
        links.append(
            {
                "name": "base",
                "parent": -1,
                "joint": {"kind": "floating"},
                "mass": 2.5,
                "com": [0.0, 0.0, 0.0],
                "inertia6": [0.02, 0.025, 0.03, 0.0, 0.0, 0.0],
            }
        )
        start = 1
    for i in range(n):
        parent = -1 if (i == 0 and not floating) else start + i - 1 if i > 0 else 0
        mass = 1.0 + 0.1 * ((i * 7) % 5)
        links.append(
            _link_doc(
                f"link{i}",
                parent,
                _AXES[i % 2],
                [0.0, 0.0, 0.0] if (i == 0 and not floating) else [length, 0.0, 0.0],
                mass,
                length,
            )
        )
    return load_model({"links": links, "floating_base": floating})


def branched(branches: int = 3, depth: int = 3, floating: bool = False) -> RobotModel:
    """A hub link with ``branches`` serial arms of ``depth`` links each."""
    links = [
        {
            "name": "hub",
            "parent": -1,
            "joint": {"kind": "floating"} if floating else {"kind": "revolute", "axis": [0, 0, 1]},
            "mass": 3.0,
            "com": [0.0, 0.0, 0.05],
            "inertia6": [0.04, 0.05, 0.06, 0.0, 0.0, 0.0],
        }
    ]
    idx = 1
    for b in range(branches):
        ang = 2.0 * np.pi * b / branches
        parent = 0
        for d in range(depth):
            xyz = [0.3 * np.cos(ang), 0.3 * np.sin(ang), 0.0] if d == 0 else [0.3, 0.0, 0.0]
            mass = 0.8 + 0.15 * ((b + 2 * d) % 4)
            links.append(_link_doc(f"arm{b}_{d}", idx - 1 if d > 0 else parent, _AXES[(b + d) % 2], xyz, mass, 0.3))
            idx += 1
    return load_model({"links": links, "floating_base": floating})


def quadruped() -> RobotModel:
    """Floating box trunk with four 3-dof legs (hip roll, hip pitch, knee)."""
    links = [
        {
            "name": "trunk",
            "parent": -1,
            "joint": {"kind": "floating"},
            "mass": 8.0,
            "com": [0.0, 0.0, 0.0],
            "inertia6": [0.07, 0.25, 0.28, 0.0, 0.0, 0.0],
        }
    ]
    hips = {
        "fl": (0.25, 0.15),
        "fr": (0.25, -0.15),
        "rl": (-0.25, 0.15),
        "rr": (-0.25, -0.15),
    }
    for leg, (hx, hy) in hips.items():
        links.append(
            {
                "name": f"{leg}_roll",
                "parent": "trunk",
                "joint": {"kind": "revolute", "axis": [1.0, 0.0, 0.0], "xyz": [hx, hy, 0.0]},
                "mass": 0.6,
                "com": [0.0, 0.02 * np.sign(hy), -0.02],
                "inertia6": [0.0016, 0.0018, 0.0014, 0.0, 0.0, 0.0],
            }
        )
        links.append(
            {
                "name": f"{leg}_upper",
                "parent": f"{leg}_roll",
                "joint": {"kind": "revolute", "axis": [0.0, 1.0, 0.0], "xyz": [0.0, 0.05 * np.sign(hy), 0.0]},
                "mass": 0.9,
                "com": [0.0, 0.0, -0.1],
                "inertia6": [0.004, 0.0042, 0.0012, 0.0, 0.0, 0.0],
            }
        )
        links.append(
            {
                "name": f"{leg}_lower",
                "parent": f"{leg}_upper",
                "joint": {"kind": "revolute", "axis": [0.0, 1.0, 0.0], "xyz": [0.0, 0.0, -0.2]},
                "mass": 0.25,
                "com": [0.0, 0.0, -0.09],
                "inertia6": [0.0011, 0.0012, 0.0003, 0.0, 0.0, 0.0],
            }
        )
    return load_model({"links": links, "floating_base": True})


def quadruped_foot_constraints(model: RobotModel, soft_weight: float | None = None) -> ConstraintSet:
    """Point contacts pinning each foot to its neutral-stance world position."""
    cache = forward_sweep(model, model.neutral_state())
    entries = []
    foot_local = np.array([0.0, 0.0, -0.2])
    for leg in ("fl", "fr", "rl", "rr"):
        i = model.link_index(f"{leg}_lower")
        anchor = cache.origin_world[i] + cache.rot_world[i] @ foot_local
        entries.append(
            ConstraintEntry(
                link=i,
                soft_weight=soft_weight,
                anchor=WorldPointAnchor(point=foot_local, anchor=anchor),
            )
        )
    return ConstraintSet(entries)


def ladder(rungs: int) -> RobotModel:
    """Backbone of 3-link segments; each segment spawns a 7-link rung branch.

    Rung tips are welded to the world by :func:`ladder_constraints`, giving a
    long kinematic tree with many internal constraint paths (about 10 links
    and 6 constraint rows per rung).
    """
    if rungs < 1:
        raise ValueError("ladder needs at least one rung")
    links = []
    spine_tip = None
    idx = 0
    for r in range(rungs):
        for s in range(3):
            links.append(
                _link_doc(
                    f"spine{r}_{s}",
                    spine_tip if spine_tip is not None else -1,
                    _AXES[(r + s) % 2],
                    [0.25, 0.0, 0.0] if idx > 0 else [0.0, 0.0, 0.0],
                    1.0 + 0.1 * ((r + s) % 3),
                    0.25,
                )
            )
            spine_tip = f"spine{r}_{s}"
            idx += 1
        parent = spine_tip
        for s in range(7):
            links.append(
                _link_doc(
                    f"rung{r}_{s}",
                    parent,
                    _AXES[(r + s + 1) % 2],
                    [0.0, 0.2, 0.0] if s == 0 else [0.2, 0.0, 0.0],
                    0.5 + 0.1 * ((r + 2 * s) % 3),
                    0.2,
                )
            )
            parent = f"rung{r}_{s}"
            idx += 1
    return load_model({"links": links})


def ladder_constraints(model: RobotModel) -> ConstraintSet:
    """Weld every rung tip to its neutral-configuration world pose."""
    from .spatial import rotation_to_quat

    cache = forward_sweep(model, model.neutral_state())
    entries = []
    r = 0
    while model._name_to_index.get(f"rung{r}_6") is not None:
        i = model.link_index(f"rung{r}_6")
        entries.append(
            ConstraintEntry(
                link=i,
                anchor=WorldWeldAnchor(
                    anchor_quat=rotation_to_quat(cache.rot_world[i]),
                    anchor_position=cache.origin_world[i].copy(),
                ),
            )
        )
        r += 1
    return ConstraintSet(entries)


def random_tree(
    rng: np.random.Generator,
    num_links: int,
    max_depth: int = 6,
    floating: bool = False,
) -> RobotModel:
    """Random topology, axes, offsets, and inertial parameters."""
    links = []
    depth = {}
    start = 0
    if floating:
        links.append(
            {
                "name": "base",
                "parent": -1,
                "joint": {"kind": "floating"},
                "mass": float(rng.uniform(1.5, 4.0)),
                "com": [float(v) for v in rng.uniform(-0.05, 0.05, 3)],
                "inertia6": [float(v) for v in rng.uniform(0.02, 0.08, 3)] + [0.0, 0.0, 0.0],
            }
        )
        depth[0] = 1
        start = 1
    for i in range(start, num_links + start):
        if i == 0:
            parent = -1
            depth[i] = 1
        else:
            candidates = [j for j in range(i) if depth[j] < max_depth] or [i - 1]
            parent = int(rng.choice(candidates))
            depth[i] = depth[parent] + 1
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        kind = "revolute" if rng.random() < 0.8 else "prismatic"
        links.append(
            {
                "name": f"link{i}",
                "parent": parent,
                "joint": {
                    "kind": kind,
                    "axis": [float(v) for v in axis],
                    "xyz": [float(v) for v in rng.uniform(-0.3, 0.3, 3)],
                    "rpy": [float(v) for v in rng.uniform(-0.4, 0.4, 3)],
                },
                "mass": float(rng.uniform(0.3, 2.0)),
                "com": [float(v) for v in rng.uniform(-0.1, 0.1, 3)],
                "inertia6": [float(v) for v in rng.uniform(0.005, 0.03, 3)] + [0.0, 0.0, 0.0],
            }
        )
    return load_model({"links": links, "floating_base": floating})


def random_state(rng: np.random.Generator, model: RobotModel, vel_scale: float = 0.6) -> RobotState:
    state = model.neutral_state()
    q = rng.uniform(-1.0, 1.0, model.config_size)
    if model.floating_base:
        quat = rng.normal(size=4)
        q[0:4] = quat / np.linalg.norm(quat)
        q[4:7] = rng.uniform(-0.5, 0.5, 3)
    state.q[:] = q
    state.qd[:] = rng.normal(size=model.dof) * vel_scale
    state.tau[:] = rng.normal(size=model.dof)
    return state


def random_constraints(
    rng: np.random.Generator,
    model: RobotModel,
    num_rows: int,
    state: RobotState | None = None,
    soft_weight: float | None = None,
    max_tries: int = 50,
) -> ConstraintSet:
    """Random well-conditioned constraint rows on random links.

    Rows are grouped into entries of 1 to 3 rows.  The stacked Jacobian at the
    given state is checked for full row rank; degenerate draws are resampled.
    """
    if state is None:
        state = model.neutral_state()
    cache = forward_sweep(model, state)
    # Favor deeper links so rows involve long support paths.
    weights = np.array([model.link_depth[i] for i in range(model.num_links)], dtype=float)
    weights /= weights.sum()
    for _ in range(max_tries):
        entries = []
        left = num_rows
        while left > 0:
            rows = int(min(left, rng.integers(1, 4)))
            link = int(rng.choice(model.num_links, p=weights))
            K = rng.normal(size=(rows, 6))
            entries.append(
                ConstraintEntry(
                    link=link,
                    rows=K,
                    targets=rng.normal(size=rows) * 0.3,
                    soft_weight=soft_weight,
                )
            )
            left -= rows
        cset = ConstraintSet(entries)
        J, _ = constraint_jacobian(model, cache, cset)
        if J.shape[0] > J.shape[1]:
            raise ValueError(f"cannot place {num_rows} independent rows on {model.dof} dofs")
        sv = np.linalg.svd(J, compute_uv=False)
        if sv.size and sv[-1] > 1e-6:
            return cset
    raise RuntimeError("failed to sample a full-rank constraint set")
