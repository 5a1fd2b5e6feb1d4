"""Constrained simulation: constraint realization, stabilization, integration.

Anchored constraints (a link point pinned to a world point, or a link pose
welded to a world pose) are geometric; every step they are materialized into
acceleration rows at the current configuration.  Row targets command the
material acceleration of the anchored feature, so the velocity-product term
that separates material from spatial acceleration is folded in, and position
and velocity drift feed back through a critically damped second-order law
with one time constant.

Integrators: symplectic (semi-implicit) Euler, which advances velocities
first and then the configuration with the new velocities, and classical RK4
on the combined configuration/velocity state with quaternion renormalization.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .kinematics import (
    KinematicsCache,
    forward_sweep,
    link_world_velocity,
    point_world_position,
    point_world_velocity,
)
from .model import (
    ConstraintEntry,
    ConstraintSet,
    ModelError,
    RobotModel,
    RobotState,
    WorldPointAnchor,
    WorldWeldAnchor,
)
from .solvers import aba, pv_early_solve, pv_soft_solve, pv_solve
from .spatial import (
    quat_from_rotvec,
    quat_multiply,
    quat_to_rotation,
    rotvec_from_rotation,
    skew,
)

__all__ = [
    "SimConfig",
    "StepInfo",
    "Trajectory",
    "realize_constraints",
    "baumgarte_targets",
    "constraint_errors",
    "mechanical_energy",
    "step",
    "simulate",
]

_SOLVERS = {
    "pv": pv_solve,
    "pv-early": pv_early_solve,
    "pv-soft": pv_soft_solve,
}


@dataclass
class SimConfig:
    """Stepping parameters.

    ``baumgarte_time`` is the stabilization time constant; with ``baumgarte``
    off, anchored rows command zero material acceleration and drift is left
    uncorrected.  ``duration`` is the default horizon for ``simulate`` when no
    explicit step count is given.
    """

    dt: float
    duration: float | None = None
    integrator: str = "semi_implicit"
    solver: str = "pv"
    baumgarte_time: float = 0.1
    baumgarte: bool = True

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.duration is not None and self.duration < self.dt:
            raise ValueError("duration must cover at least one step")
        if self.integrator not in ("semi_implicit", "rk4"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.solver not in _SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}; options: {sorted(_SOLVERS)}")
        if self.baumgarte_time <= 0.0:
            raise ValueError("baumgarte_time must be positive")


def _anchored_geometry(cache: KinematicsCache, entry: ConstraintEntry):
    """Rows, position error, and velocity error for one anchored entry."""
    i = entry.link
    anchor = entry.anchor
    if isinstance(anchor, WorldPointAnchor):
        p_world = point_world_position(cache, i, anchor.point)
        arm = p_world - cache.origin_world[i]
        rows = np.hstack([-skew(arm), np.eye(3)])
        pos_err = p_world - anchor.anchor
        vel_err = point_world_velocity(cache, i, anchor.point)
        return rows, pos_err, vel_err
    if isinstance(anchor, WorldWeldAnchor):
        rows = np.eye(6)
        rot_err = rotvec_from_rotation(cache.rot_world[i] @ anchor.anchor_rotation().T)
        pos_err = np.concatenate([rot_err, cache.origin_world[i] - anchor.anchor_position])
        vel_err = link_world_velocity(cache, i)
        return rows, pos_err, vel_err
    raise ModelError(f"unknown anchor type {type(anchor).__name__}")


def _stabilization_law(pos_err: np.ndarray, vel_err: np.ndarray, time_constant: float) -> np.ndarray:
    """Critically damped corrective acceleration for a drift pair."""
    return -(2.0 / time_constant) * vel_err - pos_err / time_constant**2


def baumgarte_targets(
    model: RobotModel,
    state: RobotState,
    constraints: ConstraintSet,
    time_constant: float = 0.1,
) -> np.ndarray:
    """Stacked corrective acceleration targets for anchored constraints.

    Every entry must be anchored; raw acceleration rows carry no drift to
    correct, so their presence is an error and such systems should be
    simulated open loop (stabilization off) instead.
    """
    if time_constant <= 0.0:
        raise ValueError("time_constant must be positive")
    for e in constraints:
        if e.realized:
            raise ModelError(
                "stabilization targets exist only for anchored constraints; "
                "raw acceleration rows have no drift feedback, simulate them open loop"
            )
    cache = forward_sweep(model, state)
    out = []
    for e in constraints:
        _, pos_err, vel_err = _anchored_geometry(cache, e)
        out.append(_stabilization_law(pos_err, vel_err, time_constant))
    return np.concatenate(out) if out else np.zeros(0)


def realize_constraints(
    model: RobotModel,
    cache: KinematicsCache,
    constraints: ConstraintSet,
    time_constant: float = 0.1,
    stabilize: bool = True,
) -> ConstraintSet:
    """Materialize anchored entries into rows at the current configuration.

    Raw-row entries pass through unchanged.  Anchored targets command the
    material acceleration of the anchored feature (the stabilization law, or
    zero with ``stabilize`` off), converted to spatial-acceleration targets.
    """
    entries = []
    for e in constraints:
        if e.realized:
            entries.append(e)
            continue
        rows, pos_err, vel_err = _anchored_geometry(cache, e)
        if stabilize:
            material = _stabilization_law(pos_err, vel_err, time_constant)
        else:
            material = np.zeros(e.num_rows)
        # Material acceleration of a moving point differs from the spatial
        # rate by the velocity transport term; angular rows need none.
        omega = link_world_velocity(cache, e.link)[0:3]
        targets = material.copy()
        targets[-3:] -= np.cross(omega, vel_err[-3:])
        entries.append(
            ConstraintEntry(
                link=e.link,
                rows=rows,
                targets=targets,
                soft_weight=None if e.soft_weight is None else e.soft_weight.copy(),
            )
        )
    return ConstraintSet(entries)


def constraint_errors(
    model: RobotModel, cache: KinematicsCache, constraints: ConstraintSet
) -> tuple[float, float]:
    """Norms of stacked anchored-entry position and velocity drift."""
    pos, vel = [], []
    for e in constraints:
        if e.realized:
            continue
        _, pos_err, vel_err = _anchored_geometry(cache, e)
        pos.append(pos_err)
        vel.append(vel_err)
    if not pos:
        return 0.0, 0.0
    return float(np.linalg.norm(np.concatenate(pos))), float(np.linalg.norm(np.concatenate(vel)))


def mechanical_energy(
    model: RobotModel, state: RobotState, cache: KinematicsCache | None = None
) -> float:
    """Kinetic plus gravitational potential energy."""
    if cache is None:
        cache = forward_sweep(model, state)
    kinetic = 0.0
    potential = 0.0
    g = model.gravity.linear
    for i, link in enumerate(model.links):
        v = cache.vel[i]
        kinetic += 0.5 * float(v @ (model.link_inertia6[i] @ v))
        com_world = cache.origin_world[i] + cache.rot_world[i] @ link.inertia.com
        potential -= link.mass * float(g @ com_world)
    return kinetic + potential


def _advance_config(model: RobotModel, q: np.ndarray, qd: np.ndarray, dt: float) -> np.ndarray:
    out = q.copy()
    for i, link in enumerate(model.links):
        if link.joint.kind == "floating":
            quat = q[0:4]
            omega = qd[0:3]
            out[0:4] = quat_multiply(quat, quat_from_rotvec(omega * dt))
            out[0:4] /= np.linalg.norm(out[0:4])
            out[4:7] = q[4:7] + quat_to_rotation(quat) @ qd[3:6] * dt
        else:
            out[model.q_offsets[i]] += qd[model.v_offsets[i]] * dt
    return out


def _config_derivative(model: RobotModel, q: np.ndarray, qd: np.ndarray) -> np.ndarray:
    out = np.zeros_like(q)
    for i, link in enumerate(model.links):
        if link.joint.kind == "floating":
            quat = q[0:4]
            out[0:4] = 0.5 * quat_multiply(quat, np.concatenate([[0.0], qd[0:3]]))
            out[4:7] = quat_to_rotation(quat) @ qd[3:6]
        else:
            out[model.q_offsets[i]] = qd[model.v_offsets[i]]
    return out


def _normalized_q(model: RobotModel, q: np.ndarray) -> np.ndarray:
    if not model.floating_base:
        return q
    out = q.copy()
    out[0:4] /= np.linalg.norm(out[0:4])
    return out


@dataclass
class StepInfo:
    """Solver output sampled at the pre-step state."""

    qdd: np.ndarray
    lam: np.ndarray
    realized: ConstraintSet
    pos_err: float
    vel_err: float
    energy: float


def _solve_at(
    model: RobotModel,
    state: RobotState,
    constraints: ConstraintSet,
    config: SimConfig,
    cache: KinematicsCache | None = None,
):
    if cache is None:
        cache = forward_sweep(model, state)
    realized = realize_constraints(
        model, cache, constraints, config.baumgarte_time, config.baumgarte
    )
    solver = _SOLVERS[config.solver]
    if realized.empty and config.solver != "pv-soft":
        sol = aba(model, state, cache=cache)
        sol.lam = np.zeros(0)
    else:
        sol = solver(model, state, realized, cache=cache)
    return sol, realized, cache


def step(
    model: RobotModel,
    state: RobotState,
    tau: np.ndarray | None = None,
    constraints: ConstraintSet | None = None,
    config: SimConfig | None = None,
) -> tuple[RobotState, StepInfo]:
    """One integration step; returns the new state and pre-step solver info.

    ``tau`` overrides the torques stored on the state for this step.
    """
    if config is None:
        raise ValueError("step needs a SimConfig")
    constraints = ConstraintSet() if constraints is None else constraints
    if tau is not None:
        state = RobotState(state.q, state.qd, np.asarray(tau, dtype=float), state.f_ext)
    cache = forward_sweep(model, state)
    sol, realized, _ = _solve_at(model, state, constraints, config, cache)
    pos_err, vel_err = constraint_errors(model, cache, constraints)
    info = StepInfo(
        qdd=sol.qdd,
        lam=sol.lam,
        realized=realized,
        pos_err=pos_err,
        vel_err=vel_err,
        energy=mechanical_energy(model, state, cache),
    )
    dt = config.dt
    if config.integrator == "semi_implicit":
        qd_new = state.qd + dt * sol.qdd
        q_new = _advance_config(model, state.q, qd_new, dt)
    else:
        q0, v0 = state.q, state.qd

        def rates(q, v):
            st = RobotState(_normalized_q(model, q), v, state.tau, state.f_ext)
            s, _, _ = _solve_at(model, st, constraints, config)
            return _config_derivative(model, st.q, v), s.qdd

        kq1, kv1 = _config_derivative(model, q0, v0), sol.qdd
        kq2, kv2 = rates(q0 + 0.5 * dt * kq1, v0 + 0.5 * dt * kv1)
        kq3, kv3 = rates(q0 + 0.5 * dt * kq2, v0 + 0.5 * dt * kv2)
        kq4, kv4 = rates(q0 + dt * kq3, v0 + dt * kv3)
        q_new = _normalized_q(model, q0 + (dt / 6.0) * (kq1 + 2 * kq2 + 2 * kq3 + kq4))
        qd_new = v0 + (dt / 6.0) * (kv1 + 2 * kv2 + 2 * kv3 + kv4)
    new_state = RobotState(q_new, qd_new, state.tau.copy(), None if state.f_ext is None else state.f_ext.copy())
    return new_state, info


@dataclass
class Trajectory:
    """Sampled simulation history: one row per step plus the final state."""

    times: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    qdd: np.ndarray
    lam: np.ndarray
    pos_err: np.ndarray
    vel_err: np.ndarray
    energy: np.ndarray

    @property
    def num_samples(self) -> int:
        return self.times.shape[0]

    def final_state(self, model: RobotModel) -> RobotState:
        return RobotState(self.q[-1].copy(), self.qd[-1].copy(), np.zeros(model.dof))

    def write_csv(self, fh) -> None:
        header = (
            ["t"]
            + [f"q{i}" for i in range(self.q.shape[1])]
            + [f"qd{i}" for i in range(self.qd.shape[1])]
            + [f"qdd{i}" for i in range(self.qdd.shape[1])]
            + [f"lambda{i}" for i in range(self.lam.shape[1])]
            + ["con_pos_err", "con_vel_err", "energy"]
        )
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(self.num_samples):
            row = np.concatenate(
                [
                    [self.times[k]],
                    self.q[k],
                    self.qd[k],
                    self.qdd[k],
                    self.lam[k],
                    [self.pos_err[k], self.vel_err[k], self.energy[k]],
                ]
            )
            writer.writerow(["%.17g" % v for v in row])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            self.write_csv(fh)


def simulate(
    model: RobotModel,
    state: RobotState,
    constraints: ConstraintSet | None = None,
    config: SimConfig | None = None,
    steps: int | None = None,
    duration: float | None = None,
    tau: np.ndarray | None = None,
) -> Trajectory:
    """Roll the system forward, sampling before each step and once at the end."""
    if config is None:
        raise ValueError("simulate needs a SimConfig")
    constraints = ConstraintSet() if constraints is None else constraints
    if tau is not None:
        state = RobotState(state.q, state.qd, np.asarray(tau, dtype=float), state.f_ext)
    if steps is None:
        if duration is None:
            duration = config.duration
        if duration is None:
            raise ValueError("give steps or duration")
        steps = int(round(duration / config.dt))
    m = constraints.num_rows
    n_samp = steps + 1
    times = np.zeros(n_samp)
    qs = np.zeros((n_samp, model.config_size))
    qds = np.zeros((n_samp, model.dof))
    qdds = np.zeros((n_samp, model.dof))
    lams = np.zeros((n_samp, m))
    pos_errs = np.zeros(n_samp)
    vel_errs = np.zeros(n_samp)
    energies = np.zeros(n_samp)

    current = state.copy()
    for k in range(steps + 1):
        if k < steps:
            new_state, info = step(model, current, constraints=constraints, config=config)
        else:
            cache = forward_sweep(model, current)
            sol, realized, _ = _solve_at(model, current, constraints, config, cache)
            pe, ve = constraint_errors(model, cache, constraints)
            info = StepInfo(sol.qdd, sol.lam, realized, pe, ve, mechanical_energy(model, current, cache))
            new_state = current
        times[k] = k * config.dt
        qs[k] = current.q
        qds[k] = current.qd
        qdds[k] = info.qdd
        if m:
            lams[k] = info.lam if info.lam.size == m else 0.0
        pos_errs[k] = info.pos_err
        vel_errs[k] = info.vel_err
        energies[k] = info.energy
        current = new_state
    return Trajectory(
        times=times,
        q=qs,
        qd=qds,
        qdd=qdds,
        lam=lams,
        pos_err=pos_errs,
        vel_err=vel_errs,
        energy=energies,
    )
