"""Spatial vector algebra: transforms, cross products, inertias."""

import numpy as np
import pytest

from conftest import random_rotation, random_spatial_inertia
from pvdyn.spatial import (
    SpatialInertia,
    SpatialTransform,
    cross_force6,
    cross_motion6,
    rotation_about_axis,
    skew,
)


def test_identity_transform_returns_motion_unchanged():
    x = SpatialTransform(np.eye(3), np.zeros(3))
    v = np.array([0.1, -0.2, 0.3, 1.0, 2.0, -3.0])
    np.testing.assert_array_equal(x.apply_motion(v), v)


def test_pure_translation_transports_angular_into_linear():
    # Shifting the reference point by d turns angular velocity w into an
    # extra linear term w x d.
    d = np.array([0.3, -0.7, 1.1])
    x = SpatialTransform(np.eye(3), d)
    w = np.array([0.4, 1.3, -0.2])
    v = np.concatenate([w, np.zeros(3)])
    out = x.apply_motion(v)
    np.testing.assert_allclose(out[0:3], w, atol=1e-15)
    np.testing.assert_allclose(out[3:6], np.cross(w, d), atol=1e-14)


def test_apply_motion_matches_dense_matrix_form():
    rng = np.random.default_rng(7)
    for _ in range(25):
        x = SpatialTransform(random_rotation(rng), rng.normal(size=3))
        v = rng.normal(size=6)
        np.testing.assert_allclose(x.apply_motion(v), x.motion_matrix() @ v, atol=1e-13)
        f = rng.normal(size=6)
        np.testing.assert_allclose(x.apply_force(f), x.force_matrix() @ f, atol=1e-13)


def test_kinetic_energy_is_frame_invariant():
    rng = np.random.default_rng(42)
    for _ in range(100):
        x = SpatialTransform(random_rotation(rng), rng.normal(size=3))
        h = random_spatial_inertia(rng)
        v = rng.normal(size=6)
        e_src = 0.5 * v @ h.apply(v)
        v_dst = x.apply_motion(v)
        e_dst = 0.5 * v_dst @ x.apply_inertia(h).apply(v_dst)
        assert abs(e_src - e_dst) < 1e-10 * max(1.0, abs(e_src))


def test_motion_cross_with_itself_is_zero():
    rng = np.random.default_rng(3)
    for _ in range(20):
        v = rng.normal(size=6)
        np.testing.assert_allclose(cross_motion6(v, v), np.zeros(6), atol=1e-14)


def test_motion_force_cross_duality():
    # (v x m) . f == -m . (v x* f) for all motion m and force f.
    rng = np.random.default_rng(11)
    for _ in range(100):
        v = rng.normal(size=6)
        m = rng.normal(size=6)
        f = rng.normal(size=6)
        lhs = cross_motion6(v, m) @ f
        rhs = -m @ cross_force6(v, f)
        assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(lhs))


def test_spinning_body_about_principal_axis_has_no_axis_moment():
    inertia = SpatialInertia.from_params(2.0, np.zeros(3), np.diag([0.3, 0.5, 0.8]))
    for axis in range(3):
        v = np.zeros(6)
        v[axis] = 4.0
        bias = cross_force6(v, inertia.apply(v))
        assert abs(bias[axis]) < 1e-12


def test_transform_composition_is_associative():
    rng = np.random.default_rng(5)
    for _ in range(10):
        xs = [SpatialTransform(random_rotation(rng), rng.normal(size=3)) for _ in range(10)]
        # Fold the chain from both ends; grouping must not matter.
        left = xs[0]
        for x in xs[1:]:
            left = x.compose(left)
        right = xs[-1]
        for x in reversed(xs[:-1]):
            right = right.compose(x)
        dense = np.eye(6)
        for x in xs:
            dense = x.motion_matrix() @ dense
        np.testing.assert_allclose(left.motion_matrix(), right.motion_matrix(), atol=1e-11)
        np.testing.assert_allclose(left.motion_matrix(), dense, atol=1e-11)


def test_motion_force_pairing_preserved_by_transforms():
    # Power v . f is invariant when both sides move to the new frame.
    rng = np.random.default_rng(13)
    for _ in range(50):
        x = SpatialTransform(random_rotation(rng), rng.normal(size=3))
        v = rng.normal(size=6)
        f = rng.normal(size=6)
        before = v @ f
        after = x.apply_motion(v) @ x.apply_force(f)
        assert abs(before - after) < 1e-11 * max(1.0, abs(before))


def test_inertia_matrix_symmetric_positive_definite():
    rng = np.random.default_rng(17)
    for _ in range(30):
        mat = random_spatial_inertia(rng).matrix()
        assert np.max(np.abs(mat - mat.T)) < 1e-12
        assert np.min(np.linalg.eigvalsh(mat)) > 0.0


def test_inertia_apply_matches_dense_matrix():
    rng = np.random.default_rng(19)
    for _ in range(30):
        h = random_spatial_inertia(rng)
        v = rng.normal(size=6)
        np.testing.assert_allclose(h.apply(v), h.matrix() @ v, atol=1e-12)


def test_rotation_about_axis_basics():
    r = rotation_about_axis(np.array([0.0, 0.0, 1.0]), np.pi / 2)
    np.testing.assert_allclose(r @ np.array([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-14)
    assert abs(np.linalg.det(r) - 1.0) < 1e-14


def test_skew_reproduces_cross_product():
    rng = np.random.default_rng(23)
    a = rng.normal(size=3)
    b = rng.normal(size=3)
    np.testing.assert_allclose(skew(a) @ b, np.cross(a, b), atol=1e-14)
    with pytest.raises(Exception):
        skew(np.zeros(2))
