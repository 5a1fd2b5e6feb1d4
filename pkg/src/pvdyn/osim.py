"""Inverse operational-space inertia by propagation.

:func:`pv_osim` runs a position-only backward sweep: articulated inertias and
constraint rows propagate to the root while a coupling matrix collects one
rank-1 term per eliminated joint.  At a fixed root the coupling matrix is the
inverse operational-space inertia; a floating base adds the free-base term
through its articulated inertia.

:class:`FastOsimOperator` applies the operational-space inertia itself (the
inverse of what :func:`pv_osim` returns) without ever forming it densely,
using the block structure the sweep leaves behind: on a floating base the
coupling matrix is block-diagonal per base branch, and the base term is a
rank-6 correction handled by a small inner solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .kinematics import KinematicsCache, forward_sweep
from .model import ConstraintSet, FLOATING, RobotModel, RobotState
from .solvers import SingularSystemError
from .spatial import rot6

__all__ = [
    "OsimResult",
    "FastOsimOperator",
    "pv_osim",
    "pv_osim_fast_apply",
    "build_fast_operator",
]


def _as_state(model: RobotModel, state_or_config) -> RobotState:
    """Accept a full state or a bare configuration vector."""
    if isinstance(state_or_config, RobotState):
        return state_or_config
    q = np.asarray(state_or_config, dtype=float).reshape(model.config_size)
    return model.state(q=q)


@dataclass
class OsimResult:
    """Inverse operational-space inertia plus sweep structure.

    ``inv_osim`` rows and columns follow the original constraint-row order.
    ``branch_of_row`` maps each row to the root-child link its entry hangs
    under (-1 for rows on a floating base itself).
    """

    inv_osim: np.ndarray
    coupling: np.ndarray
    branch_of_row: np.ndarray
    floating: bool
    base_rows: np.ndarray | None = None
    base_k: np.ndarray | None = None
    base_inertia: np.ndarray | None = None
    _factor: tuple | None = field(default=None, repr=False)

    @property
    def num_rows(self) -> int:
        return self.inv_osim.shape[0]

    def factorize(self):
        if self._factor is None:
            try:
                self._factor = cho_factor(self.inv_osim)
            except LinAlgError:
                raise SingularSystemError(
                    "inverse operational-space inertia is singular: dependent constraint rows"
                ) from None
        return self._factor

    def solve(self, y: np.ndarray) -> np.ndarray:
        """Apply the operational-space inertia: x with inv_osim @ x = y."""
        y = np.asarray(y, dtype=float)
        return cho_solve(self.factorize(), y)


def pv_osim(
    model: RobotModel,
    state: RobotState | np.ndarray,
    constraints: ConstraintSet,
    cache: KinematicsCache | None = None,
) -> OsimResult:
    """Inverse operational-space inertia for the constraint rows.

    Position-only: the result depends on the configuration alone, so
    ``state`` may be a bare configuration vector and any velocities on a full
    state play no part.
    """
    constraints.require_realized("pv_osim")
    if cache is None:
        cache = forward_sweep(model, _as_state(model, state))
    nl = model.num_links
    m = constraints.num_rows

    h = model.link_inertia6.copy()
    pending: list[list[tuple[np.ndarray, np.ndarray]]] = [[] for _ in range(nl)]
    for e, off in zip(constraints.entries, constraints.row_offsets):
        k_body = e.rows @ rot6(cache.rot_world[e.link])
        pending[e.link].append((k_body, np.arange(off, off + e.num_rows)))

    coupling = np.zeros((m, m))
    branch_of_row = np.full(m, -1, dtype=int)
    base_stack: tuple[np.ndarray, np.ndarray] | None = None

    for i in range(nl - 1, -1, -1):
        link = model.links[i]
        if pending[i]:
            k_stack = np.concatenate([p[0] for p in pending[i]])
            ids = np.concatenate([p[1] for p in pending[i]])
        else:
            k_stack, ids = np.zeros((0, 6)), np.zeros(0, dtype=int)
        if link.joint.kind == FLOATING:
            base_stack = (k_stack, ids)
            continue
        s = model.joint_subspace[i]
        hs = h[i] @ s
        d = float(s @ hs)
        if d <= 1e-12:
            raise SingularSystemError(f"degenerate articulated inertia at link {link.name!r}")
        xm = cache.xm[i]
        prop_h = xm.T @ (h[i] - np.outer(hs, hs) / d) @ xm
        if ids.size:
            ks = k_stack @ s
            coupling[np.ix_(ids, ids)] += np.outer(ks, ks) / d
            piece = ((k_stack - np.outer(ks, hs) / d) @ xm, ids)
        else:
            piece = None
        if link.parent == -1:
            if piece is not None:
                branch_of_row[piece[1]] = i
        else:
            h[link.parent] += prop_h
            if piece is not None:
                if link.parent == model.base_index:
                    branch_of_row[piece[1]] = i
                pending[link.parent].append(piece)

    inv_osim = coupling.copy()
    if model.floating_base:
        k_b, ids_b = base_stack
        base_inertia = h[0].copy()
        if ids_b.size:
            hinv_k = cho_solve(cho_factor(base_inertia), k_b.T)
            inv_osim[np.ix_(ids_b, ids_b)] += k_b @ hinv_k
        return OsimResult(
            inv_osim=inv_osim,
            coupling=coupling,
            branch_of_row=branch_of_row,
            floating=True,
            base_rows=ids_b,
            base_k=k_b,
            base_inertia=base_inertia,
        )
    return OsimResult(
        inv_osim=inv_osim,
        coupling=coupling,
        branch_of_row=branch_of_row,
        floating=False,
    )


class FastOsimOperator:
    """Applies the operational-space inertia using per-branch factors.

    Valid for floating-base models whose rows all hang below the base: the
    multiplier coupling then splits into independent positive-definite blocks,
    one per base branch, and the base contribution is a rank-6 update
    resolved by a 6x6 inner system.
    """

    def __init__(self, result: OsimResult):
        if not result.floating:
            raise SingularSystemError(
                "the fast operator needs a floating base; use pv_osim directly "
                "for fixed-base trees"
            )
        if np.any(result.branch_of_row < 0):
            raise SingularSystemError(
                "constraint rows on the base itself leave the coupling singular; "
                "use pv_osim directly"
            )
        m = result.num_rows
        self.num_rows = m
        self.blocks: list[tuple[np.ndarray, tuple]] = []
        for branch in np.unique(result.branch_of_row):
            rows = np.flatnonzero(result.branch_of_row == branch)
            block = result.coupling[np.ix_(rows, rows)]
            try:
                fac = cho_factor(block)
            except LinAlgError:
                raise SingularSystemError(
                    "branch coupling block is not positive definite (dependent "
                    "constraint rows within one branch); use pv_osim directly"
                ) from None
            self.blocks.append((rows, fac))
        k_rows = np.zeros((m, 6))
        k_rows[result.base_rows] = result.base_k
        self._k_rows = k_rows
        lk = np.zeros((m, 6))
        for rows, fac in self.blocks:
            lk[rows] = cho_solve(fac, k_rows[rows])
        self._lk = lk
        self._inner = cho_factor(result.base_inertia + k_rows.T @ lk)

    def apply(self, y: np.ndarray) -> np.ndarray:
        """x with inv_osim @ x = y, in original row order."""
        y = np.asarray(y, dtype=float).reshape(self.num_rows)
        out = np.zeros_like(y)
        for rows, fac in self.blocks:
            out[rows] = cho_solve(fac, y[rows])
        out -= self._lk @ cho_solve(self._inner, self._lk.T @ y)
        return out


def build_fast_operator(
    model: RobotModel,
    state: RobotState | np.ndarray,
    constraints: ConstraintSet,
    cache: KinematicsCache | None = None,
) -> FastOsimOperator:
    return FastOsimOperator(pv_osim(model, state, constraints, cache=cache))


def pv_osim_fast_apply(
    model: RobotModel,
    state: RobotState | np.ndarray,
    constraints: ConstraintSet,
    y: np.ndarray,
) -> np.ndarray:
    """Operational-space inertia times ``y`` without forming the dense matrix.

    One-shot convenience around :class:`FastOsimOperator`; build the operator
    once instead when applying it to many vectors.
    """
    return build_fast_operator(model, state, constraints).apply(y)
