"""Dense joint-space baselines.

Independent reference implementations used to cross-check the propagation
solvers: composite-rigid-body mass matrix, recursive inverse dynamics, a
sparsity-exploiting lower-triangular factorization of the mass matrix, a dense
operational-space inverse, and a saddle-point constrained-dynamics oracle.
The oracle assembles its mass matrix from stacked link Jacobians rather than
reusing the composite-rigid-body recursion, so the two mass-matrix routes also
check each other.  These deliberately share no code with the propagation
solvers beyond the kinematics cache.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve, solve_triangular

from .kinematics import KinematicsCache, constraint_jacobian, forward_sweep
from .model import ConstraintSet, FLOATING, RobotModel, RobotState
from .spatial import cross_force6, rot6, skew

__all__ = [
    "JointSpaceModel",
    "crba",
    "link_jacobians",
    "dense_mass_matrix",
    "inverse_dynamics",
    "rnea_bias",
    "build_joint_space",
    "dof_parents",
    "ltl_factor",
    "ltl_osim",
    "dense_osim",
    "kkt_oracle",
    "soft_oracle",
]


def _ensure_cache(model: RobotModel, state: RobotState, cache: KinematicsCache | None):
    return cache if cache is not None else forward_sweep(model, state)


def crba(model: RobotModel, state: RobotState, cache: KinematicsCache | None = None) -> np.ndarray:
    """Joint-space mass matrix via composite rigid bodies, in body coordinates."""
    cache = _ensure_cache(model, state, cache)
    nl = model.num_links
    composite = [model.link_inertia6[i].copy() for i in range(nl)]
    for i in range(nl - 1, -1, -1):
        p = model.links[i].parent
        if p != -1:
            composite[p] += cache.xm[i].T @ composite[i] @ cache.xm[i]

    M = np.zeros((model.dof, model.dof))
    slices = [model.v_slice(i) for i in range(nl)]
    subspaces = [
        np.eye(6) if model.links[i].joint.kind == FLOATING else model.joint_subspace[i].reshape(6, 1)
        for i in range(nl)
    ]
    parents = [link.parent for link in model.links]
    for i in range(nl):
        S = subspaces[i]
        F = composite[i] @ S
        M[slices[i], slices[i]] = S.T @ F
        j = i
        while parents[j] != -1:
            F = cache.xm[j].T @ F
            j = parents[j]
            block = F.T @ subspaces[j]
            M[slices[i], slices[j]] = block
            M[slices[j], slices[i]] = block.T
    return M


def link_jacobians(
    model: RobotModel,
    state: RobotState,
    cache: KinematicsCache | None = None,
) -> np.ndarray:
    """Stacked world-aligned motion Jacobians, one 6-row block per link.

    Row block i maps joint rates to link i's spatial velocity expressed in its
    world-aligned frame.  Built joint by joint from explicit lift matrices,
    with no recursive propagation involved.
    """
    cache = _ensure_cache(model, state, cache)
    nl = model.num_links
    G = np.zeros((6 * nl, model.dof))
    for i in range(nl):
        target = cache.origin_world[i]
        j = i
        while j != -1:
            shift = np.eye(6)
            shift[3:6, 0:3] = -skew(target - cache.origin_world[j])
            lift = shift @ rot6(cache.rot_world[j])
            if model.links[j].joint.kind == FLOATING:
                block = lift
            else:
                block = (lift @ model.joint_subspace[j]).reshape(6, 1)
            G[6 * i : 6 * i + 6, model.v_slice(j)] = block
            j = model.links[j].parent
    return G


def dense_mass_matrix(
    model: RobotModel,
    state: RobotState,
    cache: KinematicsCache | None = None,
) -> np.ndarray:
    """Joint-space mass matrix from stacked link Jacobians.

    Congruence of the block-diagonal link inertias with :func:`link_jacobians`;
    an assembly route with no shared structure with :func:`crba` or the
    propagation solvers.
    """
    cache = _ensure_cache(model, state, cache)
    G = link_jacobians(model, state, cache)
    nl = model.num_links
    inertia_wa = np.empty((nl, 6, 6))
    for i in range(nl):
        r6 = rot6(cache.rot_world[i])
        inertia_wa[i] = r6 @ model.link_inertia6[i] @ r6.T
    weighted = (inertia_wa @ G.reshape(nl, 6, model.dof)).reshape(6 * nl, model.dof)
    M = G.T @ weighted
    return 0.5 * (M + M.T)


def inverse_dynamics(
    model: RobotModel,
    state: RobotState,
    qdd: np.ndarray,
    cache: KinematicsCache | None = None,
    gravity: bool = True,
) -> np.ndarray:
    """Joint forces realizing the given joint accelerations.

    External forces from ``state.f_ext`` (world-aligned per link) are
    subtracted.  Gravity enters through the standard fictitious base
    acceleration, so link accelerations inside the pass are gravity-shifted.
    """
    cache = _ensure_cache(model, state, cache)
    qdd = np.asarray(qdd, dtype=float).reshape(model.dof)
    nl = model.num_links
    a0 = np.zeros(6)
    if gravity:
        a0[3:6] = -model.gravity.linear

    acc = np.zeros((nl, 6))
    wrench = np.zeros((nl, 6))
    for i, link in enumerate(model.links):
        a_parent = cache.xm[i] @ (a0 if link.parent == -1 else acc[link.parent])
        if link.joint.kind == FLOATING:
            aj = qdd[model.v_slice(i)]
        else:
            aj = model.joint_subspace[i] * qdd[model.v_offsets[i]]
        acc[i] = a_parent + aj + cache.bias_acc[i]
        H = model.link_inertia6[i]
        wrench[i] = H @ acc[i] + cross_force6(cache.vel[i], H @ cache.vel[i])
        if state.f_ext is not None:
            wrench[i] -= rot6(cache.rot_world[i]).T @ state.f_ext[i]

    tau = np.zeros(model.dof)
    for i in range(nl - 1, -1, -1):
        link = model.links[i]
        if link.joint.kind == FLOATING:
            tau[model.v_slice(i)] = wrench[i]
        else:
            tau[model.v_offsets[i]] = model.joint_subspace[i] @ wrench[i]
        if link.parent != -1:
            wrench[link.parent] += cache.xm[i].T @ wrench[i]
    return tau


def rnea_bias(
    model: RobotModel,
    state: RobotState,
    cache: KinematicsCache | None = None,
    gravity: bool = True,
) -> np.ndarray:
    """Joint-space bias forces (gravity, velocity products, external forces)."""
    return inverse_dynamics(model, state, np.zeros(model.dof), cache=cache, gravity=gravity)


@dataclass
class JointSpaceModel:
    """Dense joint-space quantities for one configuration and velocity."""

    mass_matrix: np.ndarray
    bias: np.ndarray
    jacobian: np.ndarray
    jdot_qd: np.ndarray


def build_joint_space(
    model: RobotModel,
    state: RobotState,
    constraints: ConstraintSet,
    cache: KinematicsCache | None = None,
) -> JointSpaceModel:
    """Everything the saddle-point oracle needs, assembled densely."""
    cache = _ensure_cache(model, state, cache)
    M = dense_mass_matrix(model, state, cache)
    c = rnea_bias(model, state, cache)
    J, jdqd = constraint_jacobian(model, cache, constraints)
    return JointSpaceModel(mass_matrix=M, bias=c, jacobian=J, jdot_qd=jdqd)


def dof_parents(model: RobotModel) -> np.ndarray:
    """Velocity-space parent array: each dof's nearest ancestor dof, -1 at roots.

    The six floating-base dofs are chained so they form one dense clique in the
    factorization below.
    """
    lam = np.full(model.dof, -1, dtype=int)
    for i, link in enumerate(model.links):
        off = model.v_offsets[i]
        p = link.parent
        parent_last = -1 if p == -1 else model.v_offsets[p] + model.links[p].joint.dof - 1
        if link.joint.kind == FLOATING:
            lam[off] = parent_last
            for k in range(1, 6):
                lam[off + k] = off + k - 1
        else:
            lam[off] = parent_last
    return lam


def ltl_factor(model: RobotModel, mass_matrix: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L^T L = M, touching only ancestor dof pairs."""
    lam = dof_parents(model)
    n = model.dof
    H = np.array(mass_matrix, dtype=float)
    for k in range(n - 1, -1, -1):
        if H[k, k] <= 0.0:
            raise np.linalg.LinAlgError("mass matrix not positive definite")
        H[k, k] = np.sqrt(H[k, k])
        i = lam[k]
        while i != -1:
            H[k, i] /= H[k, k]
            i = lam[i]
        i = lam[k]
        while i != -1:
            j = i
            while j != -1:
                H[i, j] -= H[k, i] * H[k, j]
                j = lam[j]
            i = lam[i]
    return np.tril(H)


def ltl_osim(
    model: RobotModel,
    state: RobotState,
    constraints: ConstraintSet,
    cache: KinematicsCache | None = None,
) -> np.ndarray:
    """Inverse operational-space inertia J M^-1 J^T via the sparse LTL factor."""
    cache = _ensure_cache(model, state, cache)
    constraints.require_realized("ltl_osim")
    M = crba(model, state, cache)
    J, _ = constraint_jacobian(model, cache, constraints)
    L = ltl_factor(model, M)
    Y = solve_triangular(L.T, J.T, lower=False)
    return Y.T @ Y


def dense_osim(
    model: RobotModel,
    state: RobotState,
    constraints: ConstraintSet,
    cache: KinematicsCache | None = None,
) -> np.ndarray:
    """Inverse operational-space inertia by direct dense Cholesky of M."""
    cache = _ensure_cache(model, state, cache)
    constraints.require_realized("dense_osim")
    M = crba(model, state, cache)
    J, _ = constraint_jacobian(model, cache, constraints)
    return J @ cho_solve(cho_factor(M), J.T)


def kkt_oracle(
    model: RobotModel,
    state: RobotState,
    constraints: ConstraintSet,
    cache: KinematicsCache | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Constrained accelerations and multipliers from the dense saddle system.

    Convention: ``M qdd + c + J^T lam = tau`` and ``J qdd = k - jdqd`` for hard
    rows.  Rows carrying a soft weight contribute a quadratic penalty instead;
    their multipliers are recovered from the constraint violation.
    """
    cache = _ensure_cache(model, state, cache)
    constraints.require_realized("kkt_oracle")
    jsm = build_joint_space(model, state, constraints, cache)
    m = constraints.num_rows
    targets = np.zeros(m)
    weights = np.zeros(m)
    is_soft = np.zeros(m, dtype=bool)
    for e, off in zip(constraints.entries, constraints.row_offsets):
        rows = slice(off, off + e.num_rows)
        targets[rows] = e.targets
        if e.soft_weight is not None:
            is_soft[rows] = True
            weights[rows] = e.soft_weight

    rhs_vel = targets - jsm.jdot_qd
    force = state.tau - jsm.bias
    M_eff = jsm.mass_matrix.copy()
    if np.any(is_soft):
        Js = jsm.jacobian[is_soft]
        w = weights[is_soft]
        M_eff += Js.T @ (w[:, None] * Js)
        force = force + Js.T @ (w * rhs_vel[is_soft])

    hard = ~is_soft
    nh = int(np.count_nonzero(hard))
    lam = np.zeros(m)
    if nh == 0:
        qdd = cho_solve(cho_factor(M_eff), force)
    else:
        Jh = jsm.jacobian[hard]
        n = model.dof
        kkt = np.zeros((n + nh, n + nh))
        kkt[:n, :n] = M_eff
        kkt[:n, n:] = Jh.T
        kkt[n:, :n] = Jh
        rhs = np.concatenate([force, rhs_vel[hard]])
        sol = solve(kkt, rhs, assume_a="sym")
        qdd = sol[:n]
        lam[hard] = sol[n:]
    if np.any(is_soft):
        Js = jsm.jacobian[is_soft]
        lam[is_soft] = weights[is_soft] * (Js @ qdd + jsm.jdot_qd[is_soft] - targets[is_soft])
    return qdd, lam


def soft_oracle(
    model: RobotModel,
    state: RobotState,
    constraints: ConstraintSet,
    cache: KinematicsCache | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Joint-space solution with every constraint row treated as a penalty."""
    constraints.require_realized("soft_oracle")
    for e in constraints:
        if e.soft_weight is None:
            raise ValueError("soft_oracle requires a soft_weight on every entry")
    return kkt_oracle(model, state, constraints, cache=cache)
