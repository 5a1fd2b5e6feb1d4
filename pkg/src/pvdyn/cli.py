"""Command-line entry point: verify | bench | simulate | osim.

Exit codes: 0 success, 1 a check or simulation sanity failure, 2 usage or
input-file errors.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .bench import BENCH_FAMILIES, BENCH_SOLVERS, run_bench
from .kinematics import forward_sweep
from .model import ConstraintSet, ModelError, load_constraints, load_model
from .osim import pv_osim
from .sim import SimConfig, realize_constraints, simulate
from .verify import run_verification

__all__ = ["main", "cmd_verify", "cmd_bench", "cmd_simulate", "cmd_osim"]


class _InputError(Exception):
    """File or flag problem; maps to exit code 2."""


def _load_model_file(path):
    try:
        return load_model(path)
    except FileNotFoundError:
        raise _InputError(f"model file not found: {path}")
    except json.JSONDecodeError as e:
        raise _InputError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}")
    except ModelError as e:
        raise _InputError(f"{path}: {e}")


def _load_constraint_file(path, model):
    if model is None:
        raise _InputError("--constraints needs --model to resolve link names")
    try:
        return load_constraints(path, model)
    except FileNotFoundError:
        raise _InputError(f"constraint file not found: {path}")
    except json.JSONDecodeError as e:
        raise _InputError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}")
    except ModelError as e:
        raise _InputError(f"{path}: {e}")


def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", newline=""), True


def cmd_verify(
    model_file=None, seed: int = 0, count: int = 20, constraint_file=None, hooks=None
) -> int:
    """Run the cross-equivalence suite; print one line per check.

    ``hooks`` is a programmatic fault-injection point (no CLI flag); see
    :class:`pvdyn.verify.DebugHooks`.
    """
    model = _load_model_file(model_file) if model_file else None
    constraints = _load_constraint_file(constraint_file, model) if constraint_file else None
    try:
        report = run_verification(
            seed=seed, count=count, model=model, constraints=constraints, hooks=hooks
        )
    except ValueError as e:
        raise _InputError(str(e))
    for line in report.lines():
        print(line)
    print("verification:", "PASS" if report.passed else "FAIL")
    return 0 if report.passed else 1


def cmd_bench(family, sizes, solvers, repetitions: int = 100, seed: int = 0, out=None) -> int:
    """Time solvers on pinned scenario instances and emit the CSV report."""
    try:
        report = run_bench(family, sizes, solvers, repetitions=repetitions, seed=seed)
    except ValueError as e:
        raise _InputError(str(e))
    fh, close = _open_out(out)
    try:
        report.write_csv(fh)
    finally:
        if close:
            fh.close()
    return 0


def cmd_simulate(
    model_file,
    constraint_file=None,
    dt: float = 1e-3,
    duration: float = 1.0,
    integrator: str = "semi_implicit",
    solver: str = "pv",
    baumgarte_time: float = 0.1,
    baumgarte: bool = True,
    out=None,
) -> int:
    """Roll a model forward and write the trajectory CSV."""
    model = _load_model_file(model_file)
    constraints = _load_constraint_file(constraint_file, model) if constraint_file else ConstraintSet()
    try:
        config = SimConfig(
            dt=dt,
            duration=duration,
            integrator=integrator,
            solver=solver,
            baumgarte_time=baumgarte_time,
            baumgarte=baumgarte,
        )
        traj = simulate(model, model.neutral_state(), constraints, config)
    except (ValueError, ModelError) as e:
        raise _InputError(str(e))
    fh, close = _open_out(out)
    try:
        traj.write_csv(fh)
    finally:
        if close:
            fh.close()
    print(
        f"simulated {duration} s in {traj.num_samples - 1} steps; final "
        f"constraint errors: pos {traj.pos_err[-1]:.6e}, vel {traj.vel_err[-1]:.6e}",
        file=sys.stderr,
    )
    return 0


def cmd_osim(model_file, constraint_file, out=None) -> int:
    """Write the inverse operational-space inertia at the neutral pose."""
    model = _load_model_file(model_file)
    constraints = _load_constraint_file(constraint_file, model)
    if constraints.empty:
        raise _InputError("osim needs at least one constraint row")
    state = model.neutral_state()
    cache = forward_sweep(model, state)
    realized = realize_constraints(model, cache, constraints, stabilize=False)
    result = pv_osim(model, state, realized, cache=cache)
    fh, close = _open_out(out)
    try:
        for row in result.inv_osim:
            fh.write(",".join("%.17g" % v for v in row) + "\n")
    finally:
        if close:
            fh.close()
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pvdyn",
        description="Constrained rigid-body dynamics: verification, benchmarks, simulation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--model", metavar="PATH", help="model file (JSON)")
        p.add_argument("--constraints", metavar="PATH", help="constraint file (JSON)")
        p.add_argument("--seed", type=int, default=0, metavar="U64")
        p.add_argument("--out", metavar="PATH", help="output path (default stdout)")
        p.add_argument("--format", choices=["csv"], default="csv")

    p = sub.add_parser("verify", help="run the cross-equivalence suite")
    common(p)
    p.add_argument("--count", type=int, default=20, help="instances per family cycle")

    p = sub.add_parser("bench", help="time solvers on generated scenarios")
    common(p)
    p.add_argument("--family", choices=list(BENCH_FAMILIES), required=True)
    p.add_argument("--sizes", required=True, help="comma-separated ascending sizes")
    p.add_argument("--solvers", default="pv", help=f"comma-separated from {BENCH_SOLVERS}")
    p.add_argument("--reps", type=int, default=100, help="timed iterations per row")

    p = sub.add_parser("simulate", help="integrate a model and write the trajectory")
    common(p)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--duration", type=float, default=1.0)
    p.add_argument("--integrator", choices=["semi_implicit", "rk4"], default="semi_implicit")
    p.add_argument("--solver", choices=["pv", "pv-early", "pv-soft"], default="pv")
    p.add_argument("--baumgarte-T", type=float, default=0.1, dest="baumgarte_t")
    p.add_argument("--no-baumgarte", action="store_true", help="disable drift stabilization")

    p = sub.add_parser("osim", help="inverse operational-space inertia at the neutral pose")
    common(p)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "verify":
            return cmd_verify(
                model_file=args.model,
                seed=args.seed,
                count=args.count,
                constraint_file=args.constraints,
            )
        if args.command == "bench":
            return cmd_bench(
                family=args.family,
                sizes=[s for s in args.sizes.split(",") if s],
                solvers=[s for s in args.solvers.split(",") if s],
                repetitions=args.reps,
                seed=args.seed,
                out=args.out,
            )
        if args.command == "simulate":
            if not args.model:
                parser.error("simulate requires --model")
            return cmd_simulate(
                model_file=args.model,
                constraint_file=args.constraints,
                dt=args.dt,
                duration=args.duration,
                integrator=args.integrator,
                solver=args.solver,
                baumgarte_time=args.baumgarte_t,
                baumgarte=not args.no_baumgarte,
                out=args.out,
            )
        if args.command == "osim":
            if not args.model or not args.constraints:
                parser.error("osim requires --model and --constraints")
            return cmd_osim(args.model, args.constraints, out=args.out)
        parser.error(f"unknown command {args.command!r}")
    except _InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def _entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    _entry()
