"""Forward kinematics sweeps and constraint Jacobians.

Everything a dynamics pass needs from the configuration is collected once per
step into a :class:`KinematicsCache`: link-to-parent coordinate transforms,
world poses, body-frame spatial velocities, and velocity-product accelerations.

Constraint rows and external forces live in per-link world-aligned frames
(axes parallel to the world frame, origin at the link body-frame origin).
Quantities move between that frame and the body frame by the pure rotation
``rot6(R_wi)`` since the origins coincide.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ConstraintSet, FLOATING, PRISMATIC, REVOLUTE, RobotModel, RobotState
from .spatial import cross_motion6, quat_to_rotation, rot6, skew

__all__ = [
    "KinematicsCache",
    "forward_sweep",
    "acceleration_sweep",
    "constraint_jacobian",
    "link_world_velocity",
    "point_world_position",
    "point_world_velocity",
]


@dataclass
class KinematicsCache:
    """Configuration-dependent quantities shared by the dynamics passes."""

    model: RobotModel
    xm: np.ndarray  # (nl, 6, 6) motion transforms, parent coords -> link coords
    rot_world: np.ndarray  # (nl, 3, 3) body-to-world rotations
    origin_world: np.ndarray  # (nl, 3) link origins in world coordinates
    vel: np.ndarray  # (nl, 6) body-frame spatial velocities
    vel_joint: np.ndarray  # (nl, 6) body-frame joint velocity contribution S*qd
    bias_acc: np.ndarray  # (nl, 6) body-frame velocity-product accelerations


@dataclass
class _SweepTables:
    """Configuration-independent pieces of the per-joint transforms.

    The parent-to-link rotation of a revolute joint is an affine function of
    (cos q, sin q) once the home rotation is folded in, so the whole batch is
    three scaled matrix stacks.  Translations and the lower-left motion-matrix
    blocks factor the same way.
    """

    trans0: np.ndarray  # (nl, 3) link origin in parent coords at q = 0
    rev_links: np.ndarray
    rev_qidx: np.ndarray
    rev_home: np.ndarray  # (nr, 3, 3) parent-to-home coordinate rotations
    rev_axis_home: np.ndarray  # (nr, 3, 3) skew(axis) @ home
    rev_outer_home: np.ndarray  # (nr, 3, 3) outer(axis, axis) @ home
    rev_negskew: np.ndarray  # (nr, 3, 3) -skew(origin in parent coords)
    pris_links: np.ndarray
    pris_qidx: np.ndarray
    pris_home: np.ndarray  # (np_, 3, 3)
    pris_b0: np.ndarray  # (np_, 3, 3) lower-left block at q = 0
    pris_b1: np.ndarray  # (np_, 3, 3) its derivative in q
    pris_slide: np.ndarray  # (np_, 3) translation direction in parent coords


def _stack(rows: list, shape: tuple[int, ...]) -> np.ndarray:
    return np.array(rows) if rows else np.zeros((0,) + shape)


def _build_tables(model: RobotModel) -> _SweepTables:
    nl = model.num_links
    trans0 = np.zeros((nl, 3))
    rev: dict[str, list] = {"links": [], "qidx": [], "home": [], "axis": [], "outer": [], "neg": []}
    pris: dict[str, list] = {"links": [], "qidx": [], "home": [], "b0": [], "b1": [], "slide": []}
    for i, link in enumerate(model.links):
        joint = link.joint
        if joint.kind == FLOATING:
            continue
        home = model.home_transform(i)
        eh, ph = home.rotation, home.translation
        trans0[i] = ph
        if joint.kind == REVOLUTE:
            u = joint.axis
            rev["links"].append(i)
            rev["qidx"].append(model.q_offsets[i])
            rev["home"].append(eh)
            rev["axis"].append(skew(u) @ eh)
            rev["outer"].append(np.outer(u, u) @ eh)
            rev["neg"].append(-skew(ph))
        else:
            slide = eh.T @ joint.axis
            pris["links"].append(i)
            pris["qidx"].append(model.q_offsets[i])
            pris["home"].append(eh)
            pris["b0"].append(-eh @ skew(ph))
            pris["b1"].append(-eh @ skew(slide))
            pris["slide"].append(slide)
    return _SweepTables(
        trans0=trans0,
        rev_links=np.array(rev["links"], dtype=int),
        rev_qidx=np.array(rev["qidx"], dtype=int),
        rev_home=_stack(rev["home"], (3, 3)),
        rev_axis_home=_stack(rev["axis"], (3, 3)),
        rev_outer_home=_stack(rev["outer"], (3, 3)),
        rev_negskew=_stack(rev["neg"], (3, 3)),
        pris_links=np.array(pris["links"], dtype=int),
        pris_qidx=np.array(pris["qidx"], dtype=int),
        pris_home=_stack(pris["home"], (3, 3)),
        pris_b0=_stack(pris["b0"], (3, 3)),
        pris_b1=_stack(pris["b1"], (3, 3)),
        pris_slide=_stack(pris["slide"], (3,)),
    )


def _tables(model: RobotModel) -> _SweepTables:
    try:
        return model._sweep_tables
    except AttributeError:
        tables = _build_tables(model)
        model._sweep_tables = tables
        return tables


def forward_sweep(model: RobotModel, state: RobotState) -> KinematicsCache:
    """Position and velocity pass over the tree."""
    model.validate_state(state)
    tables = _tables(model)
    nl = model.num_links
    q, qd = state.q, state.qd

    # Parent-to-link rotations and motion-matrix blocks, batched per joint kind.
    rot = np.empty((nl, 3, 3))
    lower = np.empty((nl, 3, 3))
    trans = tables.trans0.copy()
    if tables.rev_links.size:
        th = q[tables.rev_qidx]
        c = np.cos(th)[:, None, None]
        s = np.sin(th)[:, None, None]
        rot_rev = c * tables.rev_home - s * tables.rev_axis_home
        rot_rev += (1.0 - c) * tables.rev_outer_home
        rot[tables.rev_links] = rot_rev
        lower[tables.rev_links] = rot_rev @ tables.rev_negskew
    if tables.pris_links.size:
        qp = q[tables.pris_qidx]
        rot[tables.pris_links] = tables.pris_home
        lower[tables.pris_links] = tables.pris_b0 + qp[:, None, None] * tables.pris_b1
        trans[tables.pris_links] += qp[:, None] * tables.pris_slide
    if model.floating_base:
        rot[0] = quat_to_rotation(q[0:4]).T
        trans[0] = q[4:7]
        lower[0] = -rot[0] @ skew(trans[0])

    xm = np.zeros((nl, 6, 6))
    xm[:, 0:3, 0:3] = rot
    xm[:, 3:6, 3:6] = rot
    xm[:, 3:6, 0:3] = lower

    rot_world = np.empty((nl, 3, 3))
    origin_world = np.empty((nl, 3))
    vel = np.empty((nl, 6))
    vel_joint = np.empty((nl, 6))
    bias_acc = np.empty((nl, 6))
    subspaces = model.joint_subspace
    v_offsets = model.v_offsets
    for i, link in enumerate(model.links):
        p = link.parent
        if link.joint.kind == FLOATING:
            vj = qd[0:6].copy()
        else:
            vj = subspaces[i] * qd[v_offsets[i]]
        if p == -1:
            rot_world[i] = rot[i].T
            origin_world[i] = trans[i]
            vel[i] = vj
        else:
            rot_world[i] = rot_world[p] @ rot[i].T
            origin_world[i] = origin_world[p] + rot_world[p] @ trans[i]
            vel[i] = xm[i] @ vel[p] + vj
        vel_joint[i] = vj
        bias_acc[i] = cross_motion6(vel[i], vj)

    return KinematicsCache(
        model=model,
        xm=xm,
        rot_world=rot_world,
        origin_world=origin_world,
        vel=vel,
        vel_joint=vel_joint,
        bias_acc=bias_acc,
    )


def acceleration_sweep(model: RobotModel, cache: KinematicsCache, qdd: np.ndarray) -> np.ndarray:
    """Body-frame spatial accelerations for given joint accelerations.

    Purely kinematic: the world is held still, so with zero ``qdd`` this
    returns the velocity-product accelerations accumulated down the tree.
    """
    qdd = np.asarray(qdd, dtype=float).reshape(model.dof)
    acc = np.zeros((model.num_links, 6))
    for i, link in enumerate(model.links):
        a_parent = np.zeros(6) if link.parent == -1 else cache.xm[i] @ acc[link.parent]
        if link.joint.kind == FLOATING:
            aj = qdd[model.v_slice(i)]
        else:
            aj = model.joint_subspace[i] * qdd[model.v_offsets[i]]
        acc[i] = a_parent + aj + cache.bias_acc[i]
    return acc


def link_world_velocity(cache: KinematicsCache, i: int) -> np.ndarray:
    """Spatial velocity of link i in its world-aligned frame."""
    return rot6(cache.rot_world[i]) @ cache.vel[i]


def point_world_position(cache: KinematicsCache, i: int, point_local) -> np.ndarray:
    return cache.origin_world[i] + cache.rot_world[i] @ np.asarray(point_local, dtype=float)


def point_world_velocity(cache: KinematicsCache, i: int, point_local) -> np.ndarray:
    """World-frame velocity of a body-fixed point on link i."""
    v = link_world_velocity(cache, i)
    r = cache.rot_world[i] @ np.asarray(point_local, dtype=float)
    return v[3:6] + np.cross(v[0:3], r)


def _world_aligned_columns(cache: KinematicsCache, i: int) -> list[tuple[int, np.ndarray]]:
    """Per-ancestor-joint motion maps into link i's world-aligned frame.

    Returns (link index j, 6 x dof_j block) pairs for every joint on the path
    from the root to link i.
    """
    model = cache.model
    target = cache.origin_world[i]
    blocks = []
    j = i
    links = model.links
    while j != -1:
        rot = cache.rot_world[j]
        if links[j].joint.kind == FLOATING:
            block = np.zeros((6, 6))
            block[0:3, 0:3] = rot
            block[3:6, 3:6] = rot
            block[3:6, 0:3] = -skew(target - cache.origin_world[j]) @ rot
            blocks.append((j, block))
        else:
            sub = model.joint_subspace[j]
            ang = rot @ sub[0:3]
            col = np.empty((6, 1))
            col[0:3, 0] = ang
            # World linear part of the lifted column: R s_lin + (R s_ang) x d.
            a0, a1, a2 = ang.tolist()
            d0, d1, d2 = (target - cache.origin_world[j]).tolist()
            lin = rot @ sub[3:6]
            col[3, 0] = lin[0] + a1 * d2 - a2 * d1
            col[4, 0] = lin[1] + a2 * d0 - a0 * d2
            col[5, 0] = lin[2] + a0 * d1 - a1 * d0
            blocks.append((j, col))
        j = links[j].parent
    return blocks


def constraint_jacobian(
    model: RobotModel, state, constraints: ConstraintSet
) -> tuple[np.ndarray, np.ndarray]:
    """Stacked constraint Jacobian J and the velocity-product term J̇q̇.

    ``state`` may be a :class:`RobotState` or an already-built
    :class:`KinematicsCache`.  Rows follow the constraint-set entry order.
    ``J @ qd`` equals the stacked constraint-row values on the world-aligned
    link velocities, and the acceleration rows satisfy ``K a_wa = J qdd +
    jdqd`` for the spatial accelerations of :func:`acceleration_sweep`.
    """
    cache = state if isinstance(state, KinematicsCache) else forward_sweep(model, state)
    constraints.require_realized("constraint_jacobian")
    m = constraints.num_rows
    jac = np.zeros((m, model.dof))
    if m == 0:
        return jac, np.zeros(0)
    bias = acceleration_sweep(model, cache, np.zeros(model.dof))
    jdqd = np.zeros(m)
    for e, off in zip(constraints.entries, constraints.row_offsets):
        rows = slice(off, off + e.num_rows)
        k_wa = e.rows
        for j, block in _world_aligned_columns(cache, e.link):
            jac[rows, model.v_slice(j)] += k_wa @ block
        jdqd[rows] = k_wa @ rot6(cache.rot_world[e.link]) @ bias[e.link]
    return jac, jdqd
