"""Constrained articulated-body solvers against dense oracles and each other."""

import numpy as np
import pytest

from conftest import GRAV, hanging_pendulum, rel_err, single_rowset
from pvdyn import (
    ConstraintEntry,
    ConstraintSet,
    OverConstrainedError,
    SingularSystemError,
    SolverWorkspace,
    aba,
    build_joint_space,
    constraint_jacobian,
    kkt_oracle,
    pv_early_solve,
    pv_soft_solve,
    pv_solve,
    rank1_reflector,
    soft_oracle,
)
from pvdyn.scenarios import branched, chain, random_constraints, random_state, random_tree


def _instances(seed, count, floating=False, max_links=14):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        model = random_tree(rng, int(rng.integers(3, max_links)), floating=floating)
        state = random_state(rng, model)
        rows = int(rng.integers(1, min(7, model.dof + 1)))
        out.append((model, state, random_constraints(rng, model, rows, state=state)))
    return out


def test_unconstrained_pv_matches_aba():
    rng = np.random.default_rng(10)
    for floating in (False, True):
        for _ in range(10):
            model = random_tree(rng, int(rng.integers(2, 12)), floating=floating)
            state = random_state(rng, model)
            if rng.random() < 0.5:
                state.f_ext = rng.normal(scale=0.5, size=(model.num_links, 6))
            ref = aba(model, state)
            sol = pv_solve(model, state, ConstraintSet())
            assert rel_err(sol.qdd, ref.qdd) < 1e-12
            assert sol.lam.shape == (0,)
            early = pv_early_solve(model, state, ConstraintSet())
            assert rel_err(early.qdd, ref.qdd) < 1e-12


def test_tree_with_six_rows_matches_saddle_point_oracle():
    rng = np.random.default_rng(11)
    model = random_tree(rng, 12)
    state = random_state(rng, model)
    cset = random_constraints(rng, model, 6, state=state)
    sol = pv_solve(model, state, cset)
    qdd_ref, lam_ref = kkt_oracle(model, state, cset)
    assert rel_err(sol.qdd, qdd_ref) < 1e-8
    assert rel_err(sol.lam, lam_ref) < 1e-8


def test_solver_family_agrees_on_random_instances():
    for floating in (False, True):
        for model, state, cset in _instances(12 + floating, 12, floating=floating):
            sol = pv_solve(model, state, cset)
            early = pv_early_solve(model, state, cset)
            qdd_ref, lam_ref = kkt_oracle(model, state, cset)
            assert rel_err(sol.qdd, qdd_ref) < 1e-8
            assert rel_err(sol.lam, lam_ref) < 1e-8
            assert rel_err(early.qdd, qdd_ref) < 1e-8
            assert rel_err(early.lam, lam_ref) < 1e-8
            assert sol.residual < 1e-8
            assert early.residual < 1e-8


def test_double_pendulum_tip_vertical_acceleration_pinned():
    from pvdyn import forward_sweep, point_world_position

    model = chain(2, length=0.35)
    state = model.neutral_state()
    state.q[:] = [0.3, -0.4]
    state.qd[:] = [1.1, -0.6]
    cache = forward_sweep(model, state)
    # Zero vertical acceleration of the tip point, written as a row on the
    # tip link's spatial acceleration.
    lever = point_world_position(cache, 1, [0.35, 0.0, 0.0]) - cache.origin_world[1]
    ez = np.array([0.0, 0.0, 1.0])
    row = np.concatenate([np.cross(lever, ez), ez])
    cset = single_rowset(1, [row])
    sol = pv_solve(model, state, cset, cache=cache)
    assert sol.residual < 1e-10
    assert abs(cset.entries[0].rows[0] @ sol.link_acc[1]) < 1e-10


def test_pendulum_acceleration_analytic():
    length = 0.8
    model = hanging_pendulum(length=length)
    for theta in (0.0, np.pi / 2, 0.3, -1.2):
        state = model.neutral_state()
        state.q[0] = theta
        sol = aba(model, state)
        expected = -(GRAV / length) * np.sin(theta)
        assert abs(sol.qdd[0] - expected) < 1e-9


def test_aba_satisfies_joint_space_equation():
    from pvdyn import crba, rnea_bias

    rng = np.random.default_rng(14)
    for _ in range(8):
        model = chain(int(rng.integers(2, 9)))
        state = random_state(rng, model)
        sol = aba(model, state)
        lhs = crba(model, state) @ sol.qdd + rnea_bias(model, state)
        assert rel_err(lhs, state.tau) < 1e-9


def test_soft_limits():
    rng = np.random.default_rng(15)
    model = chain(7)
    state = random_state(rng, model)
    rows = np.eye(6)[3:6]
    targets = [0.1, -0.2, 0.05]
    hard = pv_solve(model, state, single_rowset(6, rows, targets))
    stiff = pv_soft_solve(model, state, single_rowset(6, rows, targets, soft_weight=1e8))
    assert np.linalg.norm(stiff.qdd - hard.qdd) < 1e-4
    # Vanishing weight recovers the unconstrained motion.
    loose = pv_soft_solve(model, state, single_rowset(6, rows, targets, soft_weight=1e-12))
    free = aba(model, state)
    assert rel_err(loose.qdd, free.qdd) < 1e-8


def test_soft_solver_matches_penalty_oracle():
    rng = np.random.default_rng(16)
    for _ in range(8):
        model = random_tree(rng, int(rng.integers(3, 10)))
        state = random_state(rng, model)
        rows = int(rng.integers(1, min(6, model.dof + 1)))
        weight = 10.0 ** rng.uniform(1, 6)
        cset = random_constraints(rng, model, rows, state=state, soft_weight=weight)
        sol = pv_soft_solve(model, state, cset)
        qdd_ref, lam_ref = soft_oracle(model, state, cset)
        assert rel_err(sol.qdd, qdd_ref) < 1e-9
        assert rel_err(sol.lam, lam_ref) < 1e-9


def test_soft_residual_nonincreasing_in_weight():
    rng = np.random.default_rng(17)
    model = chain(5)
    state = random_state(rng, model)
    rows = np.eye(6)[2:5]
    targets = [0.3, -0.1, 0.2]
    residuals = []
    for w in (1e2, 1e4, 1e6):
        sol = pv_soft_solve(model, state, single_rowset(4, rows, targets, soft_weight=w))
        residuals.append(sol.residual)
    assert residuals[0] >= residuals[1] >= residuals[2]
    assert residuals[2] < residuals[0]


def test_soft_solver_requires_weights():
    model = chain(3)
    state = model.neutral_state()
    cset = single_rowset(2, np.eye(6)[:2])
    with pytest.raises(ValueError, match="soft_weight"):
        pv_soft_solve(model, state, cset)


def test_early_elimination_pivot_swap_path():
    # First stacked row has zero coupling at the tip joint, so the reflector
    # must pivot before reducing.
    model = chain(3)
    a_mid = np.asarray(model.links[1].joint.axis, dtype=float)
    a_tip = np.asarray(model.links[2].joint.axis, dtype=float)
    assert abs(a_mid @ a_tip) < 1e-12
    rows = np.zeros((2, 6))
    rows[0, 0:3] = a_mid
    rows[1, 0:3] = a_tip
    rng = np.random.default_rng(18)
    state = model.neutral_state()
    state.qd[:] = rng.normal(size=3)
    state.tau[:] = rng.normal(size=3)
    cset = single_rowset(2, rows, targets=[0.1, -0.3])
    sol = pv_solve(model, state, cset)
    early = pv_early_solve(model, state, cset)
    assert rel_err(early.qdd, sol.qdd) < 1e-10
    assert rel_err(early.lam, sol.lam) < 1e-10


def test_more_than_six_rows_past_one_joint_is_over_constrained():
    model = chain(3)
    state = model.neutral_state()
    rows = np.vstack([np.eye(6), [0.5, 0.5, 0, 0, 0.5, 0.5]])
    rows = np.vstack([rows, [0, 0.5, 0.5, 0.5, 0, 0.5]])  # 8 rows on one link
    with pytest.raises(OverConstrainedError, match="survive"):
        pv_early_solve(model, state, single_rowset(2, rows))


def test_floating_base_cannot_absorb_more_than_six_rows():
    model = branched(branches=2, depth=1, floating=True)
    state = model.neutral_state()
    rows = np.vstack([np.eye(6), [0.5, 0, 0.5, 0, 0.5, 0.5]])
    with pytest.raises(OverConstrainedError, match="floating base"):
        pv_early_solve(model, state, single_rowset(0, rows))


def test_fixed_base_rejects_unsupported_rows():
    # A 1-dof chain cannot reduce two independent rows before the world.
    model = chain(1)
    state = model.neutral_state()
    with pytest.raises(SingularSystemError, match="fixed base"):
        pv_early_solve(model, state, single_rowset(0, np.eye(6)[:2]))


def test_duplicated_rows_raise_singular_error():
    rng = np.random.default_rng(19)
    model = chain(6)
    state = random_state(rng, model)
    row = np.array([[0.2, -0.4, 0.1, 0.7, 0.0, 0.5]])
    cset = ConstraintSet(
        [ConstraintEntry(link=5, rows=row), ConstraintEntry(link=5, rows=row.copy())]
    )
    with pytest.raises(SingularSystemError):
        pv_solve(model, state, cset)


def test_rank1_reflector_axis_aligned():
    w, sigma = rank1_reflector(np.array([1.0, 0.0, 0.0]), 1.0)
    u = np.eye(3) - 2.0 * np.outer(w, w) / (w @ w)
    assert abs(sigma - 1.0) < 1e-15
    np.testing.assert_allclose(u @ np.array([1.0, 0.0, 0.0]), [-1.0, 0.0, 0.0], atol=1e-14)
    np.testing.assert_allclose(u @ u.T, np.eye(3), atol=1e-14)


def test_rank1_reflector_rotates_into_first_coordinate():
    ks = np.array([3.0, 4.0])
    w, sigma = rank1_reflector(ks, 2.0)
    assert abs(sigma - 12.5) < 1e-12
    rotated = ks - 2.0 * w * (w @ ks) / (w @ w)
    assert abs(abs(rotated[0]) - 5.0) < 1e-12
    assert abs(rotated[1]) < 1e-12


def test_rank1_reflector_diagonalizes_coupling():
    rng = np.random.default_rng(20)
    for _ in range(10):
        ks = rng.normal(size=5)
        d = rng.uniform(0.5, 3.0)
        w, sigma = rank1_reflector(ks, d)
        u = np.eye(5) - 2.0 * np.outer(w, w) / (w @ w)
        diag = np.zeros((5, 5))
        diag[0, 0] = sigma
        np.testing.assert_allclose(u.T @ diag @ u, np.outer(ks, ks) / d, atol=1e-12)


def test_rank1_reflector_rejects_zero_vector():
    with pytest.raises(ValueError, match="zero"):
        rank1_reflector(np.zeros(4), 1.0)


def test_articulated_quantities_structure():
    # Force projectors annihilate the joint subspace; articulated inertias
    # stay symmetric positive definite; the root coupling matches the dense
    # inverse operational-space inertia.
    for floating in (False, True):
        for model, state, cset in _instances(21 + floating, 6, floating=floating):
            sol, internals = pv_solve(model, state, cset, collect_internals=True)
            for i, proj in enumerate(internals.projections):
                if proj is None:
                    continue
                s = model.joint_subspace[i].reshape(6)
                assert np.max(np.abs(s @ proj)) <= 1e-12
            for i in range(model.num_links):
                h = internals.art_inertia[i]
                assert np.max(np.abs(h - h.T)) < 1e-10
                assert np.min(np.linalg.eigvalsh(0.5 * (h + h.T))) > 0.0
            lsub = internals.root_coupling
            assert np.max(np.abs(lsub - lsub.T)) < 1e-10
            assert np.min(np.linalg.eigvalsh(0.5 * (lsub + lsub.T))) > -1e-10
            if not model.floating_base:
                js = build_joint_space(model, state, cset)
                dense = js.jacobian @ np.linalg.solve(js.mass_matrix, js.jacobian.T)
                ids = internals.root_ids
                assert rel_err(lsub, dense[np.ix_(ids, ids)]) < 1e-8


def test_gravity_handling_modes_agree():
    for floating in (False, True):
        for model, state, cset in _instances(23 + floating, 5, floating=floating):
            a = pv_solve(model, state, cset, gravity_trick=True)
            b = pv_solve(model, state, cset, gravity_trick=False)
            assert rel_err(a.qdd, b.qdd) < 1e-10
            assert rel_err(a.lam, b.lam) < 1e-10
            sa = pv_soft_solve(
                model,
                state,
                _soften(cset, 1e4),
                gravity_trick=True,
            )
            sb = pv_soft_solve(model, state, _soften(cset, 1e4), gravity_trick=False)
            assert rel_err(sa.qdd, sb.qdd) < 1e-10
            ea = pv_early_solve(model, state, cset, gravity_trick=True)
            eb = pv_early_solve(model, state, cset, gravity_trick=False)
            assert rel_err(ea.qdd, eb.qdd) < 1e-10


def _soften(cset, weight):
    return ConstraintSet(
        [
            ConstraintEntry(link=e.link, rows=e.rows, targets=e.targets, soft_weight=weight)
            for e in cset
        ]
    )


def test_solution_satisfies_stationarity_and_feasibility():
    from pvdyn import crba, rnea_bias

    for model, state, cset in _instances(25, 8):
        sol = pv_solve(model, state, cset)
        jac, jdqd = constraint_jacobian(model, state, cset)
        gen = crba(model, state) @ sol.qdd + rnea_bias(model, state) + jac.T @ sol.lam
        assert rel_err(gen, state.tau) < 1e-8
        targets = np.concatenate([e.targets for e in cset])
        assert rel_err(jac @ sol.qdd + jdqd, targets) < 1e-8


def test_workspace_reuse_gives_identical_answers():
    rng = np.random.default_rng(26)
    model = chain(6)
    ws = SolverWorkspace(model)
    for _ in range(4):
        state = random_state(rng, model)
        cset = random_constraints(rng, model, 3, state=state)
        with_ws = pv_solve(model, state, cset, workspace=ws)
        fresh = pv_solve(model, state, cset)
        np.testing.assert_array_equal(with_ws.qdd, fresh.qdd)
        np.testing.assert_array_equal(with_ws.lam, fresh.lam)
