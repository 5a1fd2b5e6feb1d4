"""Constrained forward dynamics by propagation over the kinematic tree.

Three solvers share one seeding and sweep structure:

* :func:`pv_solve` treats every constraint row exactly.  Rows are carried up
  the tree alongside the articulated-body quantities, a multiplier coupling
  matrix accumulates rank-1 terms at each eliminated joint, and the root
  resolves all multipliers at once before a forward rollout.
* :func:`pv_soft_solve` folds weighted rows into the articulated inertia and
  bias force up front and then runs the plain unconstrained recursion.
* :func:`pv_early_solve` eliminates one multiplier direction per joint with a
  Householder reflection as rows are propagated, so constraint work stays
  local to the subtree between a constraint and its supporting branch.
  Directions too weakly coupled for a stable elimination ride further toward
  the root carrying their accumulated coupling, and are eliminated at the
  first ancestor whose pivot is sound.

Gravity is handled by default through a fictitious base acceleration, which
shifts every link acceleration inside the sweep; constraint targets are
shifted to match and true accelerations are restored on output.  The explicit
mode (``gravity_trick=False``) applies per-link gravity wrenches instead and
exists to cross-check that equivalence.

Sign conventions: with joint-space quantities, solutions satisfy
``M qdd + c + J^T lam = tau`` and hard rows satisfy ``J qdd + jdqd = k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve

from .kinematics import KinematicsCache, forward_sweep
from .model import ConstraintSet, FLOATING, RobotModel, RobotState
from .spatial import cross_force6, rot6

__all__ = [
    "DynamicsSolution",
    "SolverWorkspace",
    "SolverInternals",
    "SingularSystemError",
    "OverConstrainedError",
    "rank1_reflector",
    "aba",
    "pv_solve",
    "pv_soft_solve",
    "pv_early_solve",
]

_EMPTY_ROWS = np.zeros((0, 6))
_EMPTY = np.zeros(0)
_EMPTY_IDS = np.zeros(0, dtype=int)


class SingularSystemError(RuntimeError):
    """Constraint rows are dependent or unresolvable at the root."""


class OverConstrainedError(RuntimeError):
    """More active constraint directions than a subtree can support."""


@dataclass
class DynamicsSolution:
    """Joint accelerations, constraint impulses per row, and link accelerations.

    ``link_acc`` holds true spatial accelerations in each link's world-aligned
    frame (gravity shift removed), so constraint rows evaluate directly as
    ``rows @ link_acc[link] == targets``.  ``residual`` is the worst row
    violation, measured on the returned accelerations rather than assumed from
    the solve; hard solvers leave it near machine precision, the penalty
    solver leaves the genuine softness gap.
    """

    qdd: np.ndarray
    lam: np.ndarray
    link_acc: np.ndarray
    residual: float = 0.0


@dataclass
class SolverInternals:
    """Intermediate sweep quantities, recorded for structural checks."""

    art_inertia: np.ndarray  # (nl, 6, 6) articulated inertias at elimination time
    projections: list  # per link: 6x6 force propagation projector, or None
    joint_d: np.ndarray  # per link: articulated inertia along the joint axis
    root_coupling: np.ndarray | None = None  # multiplier coupling at the root
    root_ids: np.ndarray | None = None
    base_inertia: np.ndarray | None = None


class SolverWorkspace:
    """Reusable per-model scratch arrays for the sweeps."""

    def __init__(self, model: RobotModel):
        nl = model.num_links
        self.num_links = nl
        self.art = np.empty((nl, 6, 6))
        self.force = np.empty((nl, 6))
        self.acc = np.empty((nl, 6))


def rank1_reflector(ks: np.ndarray, d: float, tol: float = 0.0) -> tuple[np.ndarray, float]:
    """Householder direction and pivot for a rank-1 multiplier coupling.

    Returns ``(w, sigma)`` with ``U = I - 2 w w^T / (w^T w)`` mapping ``ks`` to
    ``-sign(ks[0]) * ||ks|| * e0`` and ``sigma = ||ks||^2 / d`` the coupling of
    the single reflected direction.
    """
    ks = np.asarray(ks, dtype=float)
    nrm = np.linalg.norm(ks)
    if nrm <= tol:
        raise ValueError("cannot reflect a zero coupling vector")
    w = ks.copy()
    w[0] += nrm if ks[0] >= 0.0 else -nrm
    return w, nrm * nrm / d


def _reflect(w: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Apply the Householder map I - 2ww^T/(w^Tw) to vector or matrix rows."""
    return a - np.outer(w, (2.0 / (w @ w)) * (w @ a)) if a.ndim == 2 else a - w * (
        (2.0 / (w @ w)) * (w @ a)
    )


def _gravity6(model: RobotModel) -> np.ndarray:
    out = np.zeros(6)
    out[3:6] = model.gravity.linear
    return out


def _seed(
    model: RobotModel,
    state: RobotState,
    cache: KinematicsCache,
    gravity_trick: bool,
    ws: SolverWorkspace,
) -> tuple[np.ndarray, np.ndarray]:
    """Articulated inertia and bias-force seeds for every link.

    Joint torques enter as a wrench on the link with the matching reaction on
    the parent, which reproduces the generalized-force term exactly.
    """
    np.copyto(ws.art, model.link_inertia6)
    h, f = ws.art, ws.force
    grav = _gravity6(model)
    for i, link in enumerate(model.links):
        v = cache.vel[i]
        f[i] = -cross_force6(v, model.link_inertia6[i] @ v)
        if link.joint.kind == FLOATING:
            joint_wrench = state.tau[model.v_slice(i)]
        else:
            joint_wrench = model.joint_subspace[i] * state.tau[model.v_offsets[i]]
        f[i] += joint_wrench
        if link.parent != -1:
            f[link.parent] -= cache.xm[i].T @ joint_wrench
        if state.f_ext is not None:
            f[i] += rot6(cache.rot_world[i]).T @ state.f_ext[i]
        if not gravity_trick:
            grav_body = rot6(cache.rot_world[i]).T @ grav
            f[i] += model.link_inertia6[i] @ grav_body
    return h, f


def _body_rows(
    cache: KinematicsCache, entry, gravity_trick: bool, grav6: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Entry rows rotated to the link body frame, with shifted affine parts.

    Returns ``(K_body, l)`` encoding the constraint as ``K_body a + l = 0`` on
    the (possibly gravity-shifted) body-frame acceleration.
    """
    targets = entry.targets
    if gravity_trick:
        targets = targets - entry.rows @ grav6
    return entry.rows @ rot6(cache.rot_world[entry.link]), -targets


def _base_acc_shift(model: RobotModel, cache: KinematicsCache, gravity_trick: bool) -> np.ndarray:
    """World acceleration seen by root links inside the sweep."""
    return -_gravity6(model) if gravity_trick else np.zeros(6)


def _true_world_acc(
    model: RobotModel, cache: KinematicsCache, acc_shifted: np.ndarray, gravity_trick: bool
) -> np.ndarray:
    out = np.zeros_like(acc_shifted)
    grav = _gravity6(model)
    for i in range(model.num_links):
        out[i] = rot6(cache.rot_world[i]) @ acc_shifted[i]
        if gravity_trick:
            out[i] += grav
    return out


@dataclass
class _Elim:
    d: float
    u0: float
    hs: np.ndarray
    ks: np.ndarray
    ids: np.ndarray


def _constraint_residual(constraints: ConstraintSet | None, link_acc: np.ndarray) -> float:
    """Worst row violation max |K a - k| over all realized rows."""
    worst = 0.0
    if constraints is not None:
        for entry in constraints.entries:
            gap = entry.rows @ link_acc[entry.link] - entry.targets
            if gap.size:
                worst = max(worst, float(np.max(np.abs(gap))))
    return worst


def _require_no_soft(constraints: ConstraintSet, solver: str) -> None:
    if constraints.has_soft_weights:
        raise ValueError(
            f"{solver} treats rows exactly; soft-weighted entries belong to pv_soft_solve"
        )


def pv_solve(
    model: RobotModel,
    state: RobotState,
    constraints: ConstraintSet | None = None,
    cache: KinematicsCache | None = None,
    gravity_trick: bool = True,
    workspace: SolverWorkspace | None = None,
    collect_internals: bool = False,
):
    """Constrained forward dynamics with exact constraint rows.

    Returns a :class:`DynamicsSolution`; with ``collect_internals`` a
    ``(solution, SolverInternals)`` pair.
    """
    constraints = ConstraintSet() if constraints is None else constraints
    constraints.require_realized("pv_solve")
    _require_no_soft(constraints, "pv_solve")
    if cache is None:
        cache = forward_sweep(model, state)
    ws = workspace or SolverWorkspace(model)
    h, f = _seed(model, state, cache, gravity_trick, ws)
    grav6 = _gravity6(model)
    nl = model.num_links
    m = constraints.num_rows

    pending: list[list[tuple[np.ndarray, np.ndarray, np.ndarray]]] = [[] for _ in range(nl)]
    world_pending: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
    for e, off in zip(constraints.entries, constraints.row_offsets):
        k_body, l_aff = _body_rows(cache, e, gravity_trick, grav6)
        pending[e.link].append((k_body, l_aff, np.arange(off, off + e.num_rows)))

    coupling = np.zeros((m, m))
    elim: list[_Elim | None] = [None] * nl
    internals = (
        SolverInternals(
            art_inertia=np.zeros((nl, 6, 6)),
            projections=[None] * nl,
            joint_d=np.zeros(nl),
        )
        if collect_internals
        else None
    )

    for i in range(nl - 1, -1, -1):
        link = model.links[i]
        if pending[i]:
            k_stack = np.concatenate([p[0] for p in pending[i]])
            l_stack = np.concatenate([p[1] for p in pending[i]])
            ids = np.concatenate([p[2] for p in pending[i]])
        else:
            k_stack, l_stack, ids = _EMPTY_ROWS, _EMPTY, _EMPTY_IDS
        pending[i] = [(k_stack, l_stack, ids)]
        if internals is not None:
            internals.art_inertia[i] = h[i]
        if link.joint.kind == FLOATING:
            if internals is not None:
                internals.base_inertia = h[i].copy()
            continue
        s = model.joint_subspace[i]
        hs = h[i] @ s
        d = float(s @ hs)
        if internals is not None:
            internals.joint_d[i] = d
            internals.projections[i] = np.eye(6) - np.outer(hs, s) / d
        if d <= 1e-12:
            raise SingularSystemError(f"degenerate articulated inertia at link {link.name!r}")
        b = cache.bias_acc[i]
        f_net = f[i] - h[i] @ b
        u0 = float(s @ f_net)
        xm = cache.xm[i]
        prop_h = xm.T @ (h[i] - np.outer(hs, hs) / d) @ xm
        prop_f = xm.T @ (f_net - hs * (u0 / d))
        if ids.size:
            ks = k_stack @ s
            coupling[np.ix_(ids, ids)] += np.outer(ks, ks) / d
            k_prop = (k_stack - np.outer(ks, hs) / d) @ xm
            l_prop = l_stack + k_stack @ b + ks * (u0 / d)
            piece = (k_prop, l_prop, ids)
        else:
            ks = _EMPTY
            piece = None
        elim[i] = _Elim(d=d, u0=u0, hs=hs, ks=ks, ids=ids)
        if link.parent == -1:
            if piece is not None:
                world_pending.append(piece)
        else:
            h[link.parent] += prop_h
            f[link.parent] += prop_f
            if piece is not None:
                pending[link.parent].append(piece)

    lam = np.zeros(m)
    a0 = _base_acc_shift(model, cache, gravity_trick)
    acc = ws.acc
    qdd = np.zeros(model.dof)

    if model.floating_base:
        k_b, l_b, ids_b = pending[0][0]
        h_b, f_b = h[0], f[0]
        if ids_b.size == 0:
            acc_base = cho_solve(cho_factor(h_b), f_b)
        else:
            l_sub = coupling[np.ix_(ids_b, ids_b)]
            lam_b, acc_base = _resolve_floating(h_b, f_b, k_b, l_b, l_sub)
            lam[ids_b] = lam_b
        if internals is not None:
            internals.root_coupling = coupling[np.ix_(ids_b, ids_b)].copy()
            internals.root_ids = ids_b.copy()
        acc[0] = acc_base
        qdd[model.v_slice(0)] = acc_base - cache.xm[0] @ a0 - cache.bias_acc[0]
        start = 1
    else:
        if world_pending:
            k_w = np.concatenate([p[0] for p in world_pending])
            l_w = np.concatenate([p[1] for p in world_pending])
            ids_w = np.concatenate([p[2] for p in world_pending])
            l_sub = coupling[np.ix_(ids_w, ids_w)]
            rhs = k_w @ a0 + l_w
            try:
                lam[ids_w] = cho_solve(cho_factor(l_sub), rhs)
            except LinAlgError:
                raise SingularSystemError(
                    "dependent constraint rows: the root multiplier coupling is singular"
                ) from None
            if internals is not None:
                internals.root_coupling = l_sub.copy()
                internals.root_ids = ids_w.copy()
        start = 0

    for i in range(start, nl):
        link = model.links[i]
        a_parent = a0 if link.parent == -1 else acc[link.parent]
        rec = elim[i]
        a_thru = cache.xm[i] @ a_parent + cache.bias_acc[i]
        u = rec.u0 - float(rec.hs @ (cache.xm[i] @ a_parent))
        if rec.ids.size:
            u -= float(rec.ks @ lam[rec.ids])
        qdd_i = u / rec.d
        qdd[model.v_offsets[i]] = qdd_i
        acc[i] = a_thru + model.joint_subspace[i] * qdd_i

    link_acc = _true_world_acc(model, cache, acc, gravity_trick)
    sol = DynamicsSolution(
        qdd=qdd,
        lam=lam,
        link_acc=link_acc,
        residual=_constraint_residual(constraints, link_acc),
    )
    return (sol, internals) if collect_internals else sol


def _resolve_floating(h_b, f_b, k_b, l_b, l_sub):
    """Multipliers and base acceleration from the floating-base root system.

    Prefers eliminating the multipliers first, valid when every row picked up
    coupling below the base; rows constraining the base itself leave the
    coupling singular, in which case the base inertia is eliminated instead.
    """
    use_primary = False
    try:
        c = cho_factor(l_sub)
        piv = np.diag(c[0])
        # Rank-deficient couplings surface as pivots ~sqrt(eps); demand a
        # comfortably conditioned factor before eliminating multipliers first.
        if np.min(piv) > 1e-3 * np.max(piv):
            use_primary = True
    except LinAlgError:
        pass
    if use_primary:
        linv_k = cho_solve(c, k_b)
        linv_l = cho_solve(c, l_b)
        a_mat = h_b + k_b.T @ linv_k
        acc_base = cho_solve(cho_factor(a_mat), f_b - k_b.T @ linv_l)
        return linv_k @ acc_base + linv_l, acc_base
    hc = cho_factor(h_b)
    hin_k = cho_solve(hc, k_b.T)
    schur = l_sub + k_b @ hin_k
    try:
        lam_b = solve(schur, k_b @ cho_solve(hc, f_b) + l_b, assume_a="sym")
    except LinAlgError:
        raise SingularSystemError("dependent constraint rows at the floating base") from None
    return lam_b, cho_solve(hc, f_b - k_b.T @ lam_b)


def aba(
    model: RobotModel,
    state: RobotState,
    cache: KinematicsCache | None = None,
    gravity_trick: bool = True,
    workspace: SolverWorkspace | None = None,
) -> DynamicsSolution:
    """Unconstrained articulated-body forward dynamics."""
    if cache is None:
        cache = forward_sweep(model, state)
    ws = workspace or SolverWorkspace(model)
    h, f = _seed(model, state, cache, gravity_trick, ws)
    return _aba_finish(model, state, cache, gravity_trick, ws, h, f)


def _aba_finish(model, state, cache, gravity_trick, ws, h, f) -> DynamicsSolution:
    """Backward/forward unconstrained recursion on already-seeded h, f."""
    nl = model.num_links
    d_arr = np.zeros(nl)
    u_arr = np.zeros(nl)
    hs_arr = np.zeros((nl, 6))
    for i in range(nl - 1, -1, -1):
        link = model.links[i]
        if link.joint.kind == FLOATING:
            continue
        s = model.joint_subspace[i]
        hs = h[i] @ s
        d = float(s @ hs)
        if d <= 1e-12:
            raise SingularSystemError(f"degenerate articulated inertia at link {link.name!r}")
        f_net = f[i] - h[i] @ cache.bias_acc[i]
        u0 = float(s @ f_net)
        d_arr[i], u_arr[i], hs_arr[i] = d, u0, hs
        if link.parent != -1:
            xm = cache.xm[i]
            h[link.parent] += xm.T @ (h[i] - np.outer(hs, hs) / d) @ xm
            f[link.parent] += xm.T @ (f_net - hs * (u0 / d))

    a0 = _base_acc_shift(model, cache, gravity_trick)
    acc = ws.acc
    qdd = np.zeros(model.dof)
    start = 0
    if model.floating_base:
        acc[0] = cho_solve(cho_factor(h[0]), f[0])
        qdd[model.v_slice(0)] = acc[0] - cache.xm[0] @ a0 - cache.bias_acc[0]
        start = 1
    for i in range(start, nl):
        link = model.links[i]
        a_parent = a0 if link.parent == -1 else acc[link.parent]
        through = cache.xm[i] @ a_parent
        qdd_i = (u_arr[i] - float(hs_arr[i] @ through)) / d_arr[i]
        qdd[model.v_offsets[i]] = qdd_i
        acc[i] = through + cache.bias_acc[i] + model.joint_subspace[i] * qdd_i
    return DynamicsSolution(
        qdd=qdd,
        lam=np.zeros(0),
        link_acc=_true_world_acc(model, cache, acc, gravity_trick),
    )


def pv_soft_solve(
    model: RobotModel,
    state: RobotState,
    constraints: ConstraintSet,
    cache: KinematicsCache | None = None,
    gravity_trick: bool = True,
    workspace: SolverWorkspace | None = None,
) -> DynamicsSolution:
    """Forward dynamics with every constraint row as a quadratic penalty.

    Weighted rows fold into the link seeds, after which the unconstrained
    recursion runs unchanged.  Multipliers are recovered from the realized
    row violations scaled by the weights.
    """
    constraints.require_realized("pv_soft_solve")
    for e in constraints:
        if e.soft_weight is None:
            raise ValueError("pv_soft_solve requires a soft_weight on every entry")
    if cache is None:
        cache = forward_sweep(model, state)
    ws = workspace or SolverWorkspace(model)
    h, f = _seed(model, state, cache, gravity_trick, ws)
    grav6 = _gravity6(model)
    for e in constraints:
        k_body, l_aff = _body_rows(cache, e, gravity_trick, grav6)
        w = e.soft_weight
        h[e.link] += k_body.T @ (w[:, None] * k_body)
        f[e.link] += k_body.T @ (w * (-l_aff))
    sol = _aba_finish(model, state, cache, gravity_trick, ws, h, f)
    lam = np.zeros(constraints.num_rows)
    for e, off in zip(constraints.entries, constraints.row_offsets):
        acc_wa = sol.link_acc[e.link]
        lam[off : off + e.num_rows] = e.soft_weight * (e.rows @ acc_wa - e.targets)
    sol.lam = lam
    sol.residual = _constraint_residual(constraints, sol.link_acc)
    return sol


@dataclass
class _EarlyRecord:
    d: float
    u0: float
    hs: np.ndarray
    ks: np.ndarray  # coupling of the full pre-reduction stack
    own_ids: np.ndarray
    child_slices: list  # (child index, slice into the stack)
    reduced: bool = False
    householder: np.ndarray | None = None
    pivot: int = 0
    sigma: float = 0.0
    red_row_xm: np.ndarray | None = None  # reduced row mapped to parent coordinates
    red_aff: float = 0.0
    # Pivoted eliminations of carried coupling, in sweep order.  Each entry is
    # (position, pivot, row in parent coordinates, affine, cross couplings).
    schur: list = field(default_factory=list)


def pv_early_solve(
    model: RobotModel,
    state: RobotState,
    constraints: ConstraintSet | None = None,
    cache: KinematicsCache | None = None,
    gravity_trick: bool = True,
    workspace: SolverWorkspace | None = None,
) -> DynamicsSolution:
    """Constrained forward dynamics with per-joint multiplier elimination.

    At every joint the propagated rows are reflected so a single direction
    carries all the coupling gained there; that direction's multiplier is
    eliminated on the spot and its effect folded into the parent's inertia
    and bias force.  Only the unreduced remainder travels on, so at most six
    rows ever reach any link and none reach a fixed root.
    """
    constraints = ConstraintSet() if constraints is None else constraints
    constraints.require_realized("pv_early_solve")
    _require_no_soft(constraints, "pv_early_solve")
    if cache is None:
        cache = forward_sweep(model, state)
    ws = workspace or SolverWorkspace(model)
    h, f = _seed(model, state, cache, gravity_trick, ws)
    grav6 = _gravity6(model)
    nl = model.num_links
    m = constraints.num_rows

    own_rows: list[list] = [[] for _ in range(nl)]
    for e, off in zip(constraints.entries, constraints.row_offsets):
        k_body, l_aff = _body_rows(cache, e, gravity_trick, grav6)
        own_rows[e.link].append((k_body, l_aff, np.arange(off, off + e.num_rows)))

    # Surviving rows pushed to each parent, in parent coordinates.
    inbox: list[list] = [[] for _ in range(nl)]
    world_packets: list[tuple] = []
    base_stack = (_EMPTY_ROWS, _EMPTY, None)
    rec: list[_EarlyRecord | None] = [None] * nl

    for i in range(nl - 1, -1, -1):
        link = model.links[i]
        pieces_k, pieces_l = [], []
        own_ids = _EMPTY_IDS
        if own_rows[i]:
            pieces_k += [p[0] for p in own_rows[i]]
            pieces_l += [p[1] for p in own_rows[i]]
            own_ids = np.concatenate([p[2] for p in own_rows[i]])
        child_slices = []
        pos = sum(k.shape[0] for k in pieces_k)
        carried = []  # (slice, coupling block) for children with deferred rows
        for child, ck, cl, cc in inbox[i]:
            sl = slice(pos, pos + ck.shape[0])
            child_slices.append((child, sl))
            pieces_k.append(ck)
            pieces_l.append(cl)
            if cc is not None:
                carried.append((sl, cc))
            pos += ck.shape[0]
        k_stack = np.concatenate(pieces_k) if pieces_k else _EMPTY_ROWS
        l_stack = np.concatenate(pieces_l) if pieces_l else _EMPTY
        c_stack = None
        if carried:
            c_stack = np.zeros((k_stack.shape[0], k_stack.shape[0]))
            for sl, cc in carried:
                c_stack[sl, sl] = cc

        if link.joint.kind == FLOATING:
            if k_stack.shape[0] > 6:
                raise OverConstrainedError(
                    f"{k_stack.shape[0]} unreduced constraint rows reached the floating base"
                )
            base_stack = (k_stack, l_stack, c_stack)
            rec[i] = _EarlyRecord(
                d=0.0, u0=0.0, hs=np.zeros(6), ks=_EMPTY,
                own_ids=own_ids, child_slices=child_slices,
            )
            continue

        s = model.joint_subspace[i]
        hs = h[i] @ s
        d = float(s @ hs)
        if d <= 1e-12:
            raise SingularSystemError(f"degenerate articulated inertia at link {link.name!r}")
        b = cache.bias_acc[i]
        f_net = f[i] - h[i] @ b
        u0 = float(s @ f_net)
        xm = cache.xm[i]
        prop_h = xm.T @ (h[i] - np.outer(hs, hs) / d) @ xm
        prop_f = xm.T @ (f_net - hs * (u0 / d))

        r = _EarlyRecord(
            d=d, u0=u0, hs=hs, ks=_EMPTY, own_ids=own_ids, child_slices=child_slices
        )
        surv_k, surv_l, surv_c = _EMPTY_ROWS, _EMPTY, None
        if k_stack.shape[0]:
            ks = k_stack @ s
            r.ks = ks
            # Propagated rows before any reduction, still in this link's axes.
            k_prop = k_stack - np.outer(ks, hs) / d
            l_prop = l_stack + k_stack @ b + ks * (u0 / d)
            row_scale = 1.0 + float(np.linalg.norm(k_stack, np.inf))
            ks_norm = float(np.linalg.norm(ks))
            h_scale = max(1.0, float(np.linalg.norm(prop_h)))
            if c_stack is None:
                # No coupling carried in: the coupling gained here is rank
                # one, so a single reflected direction absorbs all of it and
                # the survivors stay coupling-free.
                reduced_here = False
                if ks_norm > 1e-10 * row_scale:
                    pivot = int(np.argmax(np.abs(ks)))
                    ks_sw = ks.copy()
                    ks_sw[[0, pivot]] = ks_sw[[pivot, 0]]
                    k_sw = k_prop.copy()
                    k_sw[[0, pivot]] = k_sw[[pivot, 0]]
                    l_sw = l_prop.copy()
                    l_sw[[0, pivot]] = l_sw[[pivot, 0]]
                    hh, sigma = rank1_reflector(ks_sw, d)
                    k_rot = _reflect(hh, k_sw)
                    l_rot = _reflect(hh, l_sw)
                    red_row = k_rot[0] @ xm
                    fold = float(red_row @ red_row) / sigma
                    # A weak pivot loses digits two ways: the fold spikes the
                    # parent inertia by |row|^2 / sigma, and the recovery
                    # divides the affine term by sigma.  Such rows ride on
                    # with their coupling carried; deferral is exact, only
                    # the elimination site moves.
                    if ks_norm > 1e-4 * row_scale and fold <= 1e5 * h_scale:
                        prop_h += np.outer(red_row, red_row) / sigma
                        prop_f -= red_row * (l_rot[0] / sigma)
                        r.reduced = True
                        r.householder = hh
                        r.pivot = pivot
                        r.sigma = sigma
                        r.red_row_xm = red_row
                        r.red_aff = float(l_rot[0])
                        surv_k, surv_l = k_rot[1:] @ xm, l_rot[1:]
                        reduced_here = True
                    else:
                        surv_c = np.outer(ks, ks) / d
                if not reduced_here:
                    surv_k, surv_l = k_prop @ xm, l_prop
            else:
                # Carried coupling: eliminate every direction whose pivot is
                # sound, Schur-complementing the remainder.  This is the
                # reflector step generalized to a full coupling matrix.
                c_cur = c_stack + np.outer(ks, ks) / d
                k_cur, l_cur = k_prop, l_prop
                while k_cur.shape[0]:
                    c_scale = 1e-8 * (1.0 + float(np.trace(c_cur)))
                    best, best_row = -1, None
                    for p in range(k_cur.shape[0]):
                        c_pp = float(c_cur[p, p])
                        if c_pp <= c_scale:
                            continue
                        if best >= 0 and c_pp <= float(c_cur[best, best]):
                            continue
                        k_par = k_cur[p] @ xm
                        if float(k_par @ k_par) / c_pp <= 1e5 * h_scale:
                            best, best_row = p, k_par
                    if best < 0:
                        break
                    p = best
                    c_pp = float(c_cur[p, p])
                    l_p = float(l_cur[p])
                    cross = np.delete(c_cur[p], p)
                    prop_h += np.outer(best_row, best_row) / c_pp
                    prop_f -= best_row * (l_p / c_pp)
                    r.schur.append((p, c_pp, best_row, l_p, cross))
                    keep = np.arange(k_cur.shape[0]) != p
                    k_cur = k_cur[keep] - np.outer(cross, k_cur[p]) / c_pp
                    l_cur = l_cur[keep] - cross * (l_p / c_pp)
                    c_cur = c_cur[np.ix_(keep, keep)] - np.outer(cross, cross) / c_pp
                surv_k, surv_l = k_cur @ xm, l_cur
                surv_c = c_cur
            if surv_k.shape[0] > 6:
                raise OverConstrainedError(
                    f"{surv_k.shape[0]} constraint rows survive past link {link.name!r}; "
                    "the subtree cannot support them"
                )
        rec[i] = r

        if link.parent == -1:
            if surv_k.shape[0]:
                world_packets.append((i, surv_k, surv_l, surv_c))
            h_dump, f_dump = prop_h, prop_f  # parent is the world; discarded
        else:
            h[link.parent] += prop_h
            f[link.parent] += prop_f
            if surv_k.shape[0]:
                inbox[link.parent].append((i, surv_k, surv_l, surv_c))

    a0 = _base_acc_shift(model, cache, gravity_trick)
    acc = ws.acc
    qdd = np.zeros(model.dof)
    lam = np.zeros(m)
    # Multipliers of surviving rows, handed down from the parent.
    lam_inbox: list[np.ndarray] = [_EMPTY] * nl

    for root, k_w, l_w, c_w in world_packets:
        # Rows that reached the fixed base with their coupling carried are
        # closed against the known world acceleration.  Rows without coupling
        # were never touched by a joint and cannot be satisfied.
        if c_w is None:
            raise SingularSystemError(
                f"{k_w.shape[0]} constraint rows reached the fixed base unresolved; "
                "the tree has too few joints along their support paths"
            )
        try:
            lam_inbox[root] = cho_solve(cho_factor(c_w), k_w @ a0 + l_w)
        except LinAlgError:
            raise SingularSystemError(
                f"{k_w.shape[0]} constraint rows reached the fixed base unresolved; "
                "the tree has too few joints along their support paths"
            ) from None

    start = 0
    if model.floating_base:
        k_b, l_b, c_b = base_stack
        if k_b.shape[0] == 0:
            acc_base = cho_solve(cho_factor(h[0]), f[0])
            stack_lam = _EMPTY
        else:
            nb = k_b.shape[0]
            sys_mat = np.zeros((6 + nb, 6 + nb))
            sys_mat[:6, :6] = h[0]
            sys_mat[:6, 6:] = k_b.T
            sys_mat[6:, :6] = k_b
            if c_b is not None:
                sys_mat[6:, 6:] = -c_b
            rhs = np.concatenate([f[0], -l_b])
            try:
                sol_b = solve(sys_mat, rhs, assume_a="sym")
            except LinAlgError:
                raise SingularSystemError("dependent constraint rows at the floating base") from None
            acc_base, stack_lam = sol_b[:6], sol_b[6:]
        acc[0] = acc_base
        qdd[model.v_slice(0)] = acc_base - cache.xm[0] @ a0 - cache.bias_acc[0]
        r = rec[0]
        if r.own_ids.size:
            lam[r.own_ids] = stack_lam[: r.own_ids.size]
        for child, sl in r.child_slices:
            lam_inbox[child] = stack_lam[sl]
        start = 1

    for i in range(start, nl):
        link = model.links[i]
        r = rec[i]
        a_parent = a0 if link.parent == -1 else acc[link.parent]
        through = cache.xm[i] @ a_parent
        if r.reduced:
            lam_red = (float(r.red_row_xm @ a_parent) + r.red_aff) / r.sigma
            lam_rot = np.concatenate([[lam_red], lam_inbox[i]])
            stack_lam = _reflect(r.householder, lam_rot)
            stack_lam[[0, r.pivot]] = stack_lam[[r.pivot, 0]]
        else:
            stack_lam = lam_inbox[i]
            # Undo the pivoted eliminations in reverse, re-inserting each
            # multiplier at the position it was removed from.
            for pos, c_pp, k_par, l_p, cross in reversed(r.schur):
                lam_p = (float(k_par @ a_parent) + l_p - float(cross @ stack_lam)) / c_pp
                stack_lam = np.insert(stack_lam, pos, lam_p)
        u = r.u0 - float(r.hs @ through)
        if stack_lam.size:
            u -= float(r.ks @ stack_lam)
        qdd_i = u / r.d
        qdd[model.v_offsets[i]] = qdd_i
        acc[i] = through + cache.bias_acc[i] + model.joint_subspace[i] * qdd_i
        if r.own_ids.size:
            lam[r.own_ids] = stack_lam[: r.own_ids.size]
        for child, sl in r.child_slices:
            lam_inbox[child] = stack_lam[sl]

    link_acc = _true_world_acc(model, cache, acc, gravity_trick)
    return DynamicsSolution(
        qdd=qdd,
        lam=lam,
        link_acc=link_acc,
        residual=_constraint_residual(constraints, link_acc),
    )
