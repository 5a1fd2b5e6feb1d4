"""Cross-equivalence suite: every fast path checked against a dense witness.

Each check pits two independent routes to the same quantity against each
other on randomized instances drawn from the built-in generators, so a bug
has to strike both routes identically to slip through.  Results aggregate
the worst relative error per check name; one failing instance fails the
check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import scenarios
from .baseline import (
    build_joint_space,
    crba,
    dense_mass_matrix,
    dense_osim,
    kkt_oracle,
    ltl_osim,
)
from .kinematics import forward_sweep
from .model import ConstraintEntry, ConstraintSet, RobotModel
from .osim import pv_osim
from .sim import realize_constraints
from .solvers import aba, pv_early_solve, pv_soft_solve, pv_solve

__all__ = ["CheckResult", "DebugHooks", "VerifyReport", "run_verification"]


@dataclass
class DebugHooks:
    """Fault-injection points for exercising the harness itself.

    ``constraint_force_sign`` scales the constraint-force term inside the
    stationarity check; anything but +1 must make that check fail.
    """

    constraint_force_sign: float = 1.0


@dataclass
class CheckResult:
    name: str
    tolerance: float
    worst: float = 0.0
    instances: int = 0
    detail: str = ""

    @property
    def passed(self) -> bool:
        return self.worst < self.tolerance

    def absorb(self, err: float, detail: str = "") -> None:
        self.instances += 1
        if err > self.worst:
            self.worst = err
            self.detail = detail


@dataclass
class VerifyReport:
    results: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def lines(self) -> list[str]:
        out = []
        for r in self.results:
            mark = "PASS" if r.passed else "FAIL"
            line = (
                f"{mark} {r.name}: worst {r.worst:.3e} (tol {r.tolerance:.1e}, "
                f"{r.instances} instances)"
            )
            if not r.passed and r.detail:
                line += f" [{r.detail}]"
            out.append(line)
        return out


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = 1.0 + max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0))
    return float(np.max(np.abs(a - b), initial=0.0)) / scale


def _generated_instances(rng: np.random.Generator, count: int):
    """Cycle the scenario families, yielding (label, model, state, constraints)."""
    quadruped = scenarios.quadruped()
    ladder = scenarios.ladder(2)
    for i in range(count):
        kind = i % 6
        if kind == 0:
            model = scenarios.chain(int(rng.integers(4, 13)))
        elif kind == 1:
            model = scenarios.chain(int(rng.integers(3, 9)), floating=True)
        elif kind == 2:
            model = scenarios.random_tree(rng, int(rng.integers(6, 14)))
        elif kind == 3:
            model = scenarios.branched(3, 2, floating=True)
        elif kind == 4:
            model = quadruped
        else:
            model = ladder
        state = scenarios.random_state(rng, model)
        cache = forward_sweep(model, state)
        if kind == 4:
            cset = realize_constraints(
                model, cache, scenarios.quadruped_foot_constraints(model), stabilize=False
            )
        elif kind == 5:
            cset = realize_constraints(
                model, cache, scenarios.ladder_constraints(model), stabilize=False
            )
        else:
            rows = int(rng.integers(1, min(7, model.dof + 1)))
            cset = scenarios.random_constraints(rng, model, rows, state=state)
        yield f"{model.num_links}-link-{i}", model, state, cset


def _stationarity_err(model, state, cset, sol, hooks: DebugHooks) -> float:
    # convention: M qdd + c + J^T lam = tau
    jsm = build_joint_space(model, state, cset)
    gen_force = state.tau - hooks.constraint_force_sign * (jsm.jacobian.T @ sol.lam)
    lhs = jsm.mass_matrix @ sol.qdd + jsm.bias
    return _rel_err(lhs, gen_force)


def _soft_checks(report_by_name):
    """Penalty behavior on a fixed straight-line arm with a held tip."""
    model = scenarios.chain(7)
    rng = np.random.default_rng(11)
    state = scenarios.random_state(rng, model, vel_scale=0.4)
    tip = model.num_links - 1
    rows = np.hstack([np.zeros((3, 3)), np.eye(3)])
    targets = rng.normal(scale=0.3, size=3)
    hard = ConstraintSet([ConstraintEntry(link=tip, rows=rows, targets=targets)])
    hard_sol = pv_solve(model, state, hard)

    residuals = []
    for w in (1e2, 1e4, 1e6, 1e8):
        soft = ConstraintSet(
            [ConstraintEntry(link=tip, rows=rows, targets=targets, soft_weight=np.full(3, w))]
        )
        sol = pv_soft_solve(model, state, soft)
        residuals.append(sol.residual)
    growth = max(
        (residuals[k + 1] - residuals[k]) / (1.0 + residuals[k]) for k in range(len(residuals) - 1)
    )
    report_by_name["soft-residual-monotone"].absorb(max(growth, 0.0), f"residuals {residuals}")
    report_by_name["soft-approaches-hard"].absorb(
        float(np.linalg.norm(sol.qdd - hard_sol.qdd)), "w=1e8 vs hard"
    )


def run_verification(
    seed: int = 0,
    count: int = 20,
    model: RobotModel | None = None,
    constraints: ConstraintSet | None = None,
    hooks: DebugHooks | None = None,
) -> VerifyReport:
    """Run every cross-check on ``count`` generated instances per cycle.

    ``model`` adds a user-supplied mechanism to the instance pool; its
    ``constraints`` (realized at each sampled state when anchored) ride
    along, otherwise random rows are drawn.
    """
    if count <= 0:
        raise ValueError("count must be a positive number of instances")
    hooks = hooks or DebugHooks()
    rng = np.random.default_rng(seed)

    checks = {
        "pv-vs-kkt-qdd": CheckResult("pv-vs-kkt-qdd", 1e-8),
        "pv-vs-kkt-lam": CheckResult("pv-vs-kkt-lam", 1e-8),
        "pv-early-vs-kkt-qdd": CheckResult("pv-early-vs-kkt-qdd", 1e-8),
        "pv-early-vs-kkt-lam": CheckResult("pv-early-vs-kkt-lam", 1e-8),
        "stationarity": CheckResult("stationarity", 1e-8),
        "constraint-residual": CheckResult("constraint-residual", 1e-8),
        "aba-reduction": CheckResult("aba-reduction", 1e-12),
        "mass-crba-vs-dense": CheckResult("mass-crba-vs-dense", 1e-8),
        "osim-pv-vs-ltl": CheckResult("osim-pv-vs-ltl", 1e-8),
        "osim-pv-vs-dense": CheckResult("osim-pv-vs-dense", 1e-8),
        "soft-residual-monotone": CheckResult("soft-residual-monotone", 1e-12),
        "soft-approaches-hard": CheckResult("soft-approaches-hard", 1e-4),
    }
    if model is not None:
        checks["user-model-pv-vs-kkt"] = CheckResult("user-model-pv-vs-kkt", 1e-8)

    for label, mdl, state, cset in _generated_instances(rng, count):
        ref_qdd, ref_lam = kkt_oracle(mdl, state, cset)
        sol = pv_solve(mdl, state, cset)
        early = pv_early_solve(mdl, state, cset)
        checks["pv-vs-kkt-qdd"].absorb(_rel_err(sol.qdd, ref_qdd), label)
        checks["pv-vs-kkt-lam"].absorb(_rel_err(sol.lam, ref_lam), label)
        checks["pv-early-vs-kkt-qdd"].absorb(_rel_err(early.qdd, ref_qdd), label)
        checks["pv-early-vs-kkt-lam"].absorb(_rel_err(early.lam, ref_lam), label)
        checks["stationarity"].absorb(_stationarity_err(mdl, state, cset, sol, hooks), label)
        checks["constraint-residual"].absorb(sol.residual, label)
        free = pv_solve(mdl, state, ConstraintSet())
        checks["aba-reduction"].absorb(_rel_err(free.qdd, aba(mdl, state).qdd), label)
        checks["mass-crba-vs-dense"].absorb(
            _rel_err(crba(mdl, state), dense_mass_matrix(mdl, state)), label
        )
        r = pv_osim(mdl, state, cset)
        checks["osim-pv-vs-ltl"].absorb(_rel_err(r.inv_osim, ltl_osim(mdl, state, cset)), label)
        checks["osim-pv-vs-dense"].absorb(_rel_err(r.inv_osim, dense_osim(mdl, state, cset)), label)

    _soft_checks(checks)

    if model is not None:
        for i in range(max(3, count // 4)):
            state = scenarios.random_state(rng, model, vel_scale=0.5)
            cache = forward_sweep(model, state)
            if constraints is not None and not constraints.empty:
                cset = realize_constraints(model, cache, constraints, stabilize=False)
            else:
                rows = int(rng.integers(1, min(7, model.dof + 1)))
                cset = scenarios.random_constraints(rng, model, rows, state=state)
            if cset.has_soft_weights:
                if not all(e.soft_weight is not None for e in cset):
                    raise ValueError(
                        "user constraints mix weighted and hard rows; the "
                        "propagation solvers take one kind at a time"
                    )
                sol = pv_soft_solve(model, state, cset)
            else:
                sol = pv_solve(model, state, cset)
            ref_qdd, ref_lam = kkt_oracle(model, state, cset)
            err = max(_rel_err(sol.qdd, ref_qdd), _rel_err(sol.lam, ref_lam))
            checks["user-model-pv-vs-kkt"].absorb(err, f"user-{i}")

    return VerifyReport(results=list(checks.values()))
