"""Desk-scale timing harness for the solver family.

One scenario instance is pinned per (family, size); every solver runs on that
same instance.  Before any timing, each solver's output is checked against a
dense reference solve, and the row's checksum is the reference's digest, so a
"fast but wrong" solver cannot produce a presentable row.  Timings use the
monotonic nanosecond clock with a warmup pass and report median and spread.
"""

from __future__ import annotations

import csv
import hashlib
import io
import time
from dataclasses import dataclass, field

import numpy as np

from . import scenarios
from .baseline import kkt_oracle, soft_oracle
from .kinematics import forward_sweep
from .model import ConstraintEntry, ConstraintSet
from .sim import realize_constraints
from .solvers import SolverWorkspace, pv_early_solve, pv_soft_solve, pv_solve

__all__ = ["BenchRow", "BenchReport", "run_bench", "BENCH_FAMILIES", "BENCH_SOLVERS"]

BENCH_FAMILIES = ("chain", "ladder", "branched")
BENCH_SOLVERS = ("pv", "pv-early", "pv-soft", "kkt")

_SOFT_WEIGHT = 1e6
_VERIFY_TOL = 1e-6


@dataclass
class BenchRow:
    scenario: str
    n: int  # links
    m: int  # constraint rows
    d: int  # tree depth
    solver: str
    median_ns: int
    p10_ns: int
    p90_ns: int
    iterations: int
    checksum: str


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)

    _COLUMNS = (
        "scenario",
        "n",
        "m",
        "d",
        "solver",
        "median_ns",
        "p10_ns",
        "p90_ns",
        "iterations",
        "checksum",
    )

    def write_csv(self, fh) -> None:
        writer = csv.writer(fh)
        writer.writerow(self._COLUMNS)
        for r in self.rows:
            writer.writerow([getattr(r, c) for c in self._COLUMNS])

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    def median(self, scenario: str, solver: str) -> int:
        for r in self.rows:
            if r.scenario == scenario and r.solver == solver:
                return r.median_ns
        raise KeyError(f"no row for {scenario}/{solver}")


def _chain_instance(n: int, rng):
    model = scenarios.chain(n)
    state = scenarios.random_state(rng, model, vel_scale=0.3)
    tip = model.num_links - 1
    cset = ConstraintSet([ConstraintEntry(link=tip, rows=np.eye(6), targets=np.zeros(6))])
    return model, state, cset


def _ladder_instance(rungs: int, rng):
    model = scenarios.ladder(rungs)
    state = scenarios.random_state(rng, model, vel_scale=0.1)
    cache = forward_sweep(model, state)
    cset = realize_constraints(model, cache, scenarios.ladder_constraints(model), stabilize=False)
    return model, state, cset


def _branched_instance(branches: int, rng):
    model = scenarios.branched(branches, 3, floating=True)
    state = scenarios.random_state(rng, model, vel_scale=0.3)
    entries = []
    for b in range(branches):
        tip = model.link_index(f"arm{b}_2")
        entries.append(
            ConstraintEntry(
                link=tip,
                rows=np.hstack([np.zeros((3, 3)), np.eye(3)]),
                targets=np.zeros(3),
            )
        )
    return model, state, ConstraintSet(entries)

_INSTANCES = {
    "chain": _chain_instance,
    "ladder": _ladder_instance,
    "branched": _branched_instance,
}


def _with_weights(cset: ConstraintSet) -> ConstraintSet:
    return ConstraintSet(
        [
            ConstraintEntry(
                link=e.link,
                rows=e.rows.copy(),
                targets=e.targets.copy(),
                soft_weight=np.full(e.num_rows, _SOFT_WEIGHT),
            )
            for e in cset
        ]
    )


def _digest(*arrays: np.ndarray) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(",".join("%.17g" % v for v in np.asarray(a).ravel()).encode())
        h.update(b";")
    return h.hexdigest()[:16]


def _time_call(fn, repetitions: int) -> np.ndarray:
    fn()
    fn()
    samples = np.empty(repetitions)
    for k in range(repetitions):
        t0 = time.perf_counter_ns()
        fn()
        samples[k] = time.perf_counter_ns() - t0
    return samples


def run_bench(
    family: str,
    sizes,
    solvers,
    repetitions: int = 100,
    seed: int = 0,
) -> BenchReport:
    """Time each solver on one pinned instance per size.

    ``repetitions`` is floored at 100 so percentiles mean something.  Raises
    ``ValueError`` on unknown family or solver names, or non-ascending sizes.
    """
    if family not in _INSTANCES:
        raise ValueError(f"unknown benchmark family {family!r}; options: {BENCH_FAMILIES}")
    sizes = [int(s) for s in sizes]
    if not sizes or any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ValueError("sizes must be strictly ascending")
    solvers = list(solvers)
    for s in solvers:
        if s not in BENCH_SOLVERS:
            raise ValueError(f"unknown solver {s!r}; options: {BENCH_SOLVERS}")
    repetitions = max(100, int(repetitions))

    rng = np.random.default_rng(seed)
    report = BenchReport()
    for size in sizes:
        model, state, cset = _INSTANCES[family](size, rng)
        scen = f"{family}-{size}"
        hard_qdd, hard_lam = kkt_oracle(model, state, cset)
        hard_sum = _digest(hard_qdd, hard_lam)
        soft_cset = _with_weights(cset) if "pv-soft" in solvers else None
        ws = SolverWorkspace(model)
        for solver in solvers:
            if solver == "pv-soft":
                ref_qdd, ref_lam = soft_oracle(model, state, soft_cset)
                checksum = _digest(ref_qdd, ref_lam)
                fn = lambda: pv_soft_solve(model, state, soft_cset, workspace=ws)
                out_qdd = fn().qdd
            else:
                ref_qdd, checksum = hard_qdd, hard_sum
                if solver == "pv":
                    fn = lambda: pv_solve(model, state, cset, workspace=ws)
                    out_qdd = fn().qdd
                elif solver == "pv-early":
                    fn = lambda: pv_early_solve(model, state, cset, workspace=ws)
                    out_qdd = fn().qdd
                else:
                    fn = lambda: kkt_oracle(model, state, cset)
                    out_qdd = fn()[0]
            err = np.max(np.abs(out_qdd - ref_qdd)) / (1.0 + np.max(np.abs(ref_qdd)))
            if err > _VERIFY_TOL:
                raise RuntimeError(
                    f"benchmark aborted: {solver} disagrees with the reference on "
                    f"{scen} (rel err {err:.3e})"
                )
            samples = _time_call(fn, repetitions)
            report.rows.append(
                BenchRow(
                    scenario=scen,
                    n=model.num_links,
                    m=cset.num_rows,
                    d=model.depth,
                    solver=solver,
                    median_ns=int(np.median(samples)),
                    p10_ns=int(np.percentile(samples, 10)),
                    p90_ns=int(np.percentile(samples, 90)),
                    iterations=repetitions,
                    checksum=checksum,
                )
            )
    return report
