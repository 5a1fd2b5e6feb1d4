"""Shared builders for the test suite."""

import numpy as np

from pvdyn import ConstraintEntry, ConstraintSet, RobotState, load_model
from pvdyn.spatial import SpatialInertia, rotation_about_axis

GRAV = 9.81


def hanging_pendulum(length: float = 1.0, mass: float = 1.0):
    """Point-mass pendulum hinged about z, hanging along -y at q = 0.

    The swing angle is measured from the straight-down rest pose, so the
    analytic acceleration is -(g/l) sin(q).
    """
    doc = {
        "gravity": [0.0, -GRAV, 0.0],
        "links": [
            {
                "name": "bob",
                "parent": -1,
                "joint": {"kind": "revolute", "axis": [0.0, 0.0, 1.0]},
                "mass": mass,
                "com": [0.0, -length, 0.0],
                "inertia6": [1e-12, 1e-12, 1e-12, 0.0, 0.0, 0.0],
            }
        ],
    }
    return load_model(doc)


def two_link_doc() -> dict:
    return {
        "links": [
            {
                "name": "upper",
                "parent": -1,
                "joint": {"kind": "revolute", "axis": [0.0, 1.0, 0.0]},
                "mass": 1.2,
                "com": [0.4, 0.0, 0.0],
                "inertia6": [0.01, 0.02, 0.02, 0.0, 0.0, 0.0],
            },
            {
                "name": "lower",
                "parent": "upper",
                "joint": {"kind": "revolute", "axis": [0.0, 1.0, 0.0], "xyz": [0.8, 0.0, 0.0]},
                "mass": 0.9,
                "com": [0.35, 0.0, 0.0],
                "inertia6": [0.008, 0.015, 0.015, 0.0, 0.0, 0.0],
            },
        ]
    }


def random_rotation(rng) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return rotation_about_axis(axis, rng.uniform(-np.pi, np.pi))


def random_spd3(rng, scale: float = 1.0) -> np.ndarray:
    a = rng.normal(size=(3, 3))
    return scale * (a @ a.T) + 0.1 * scale * np.eye(3)


def random_spatial_inertia(rng) -> SpatialInertia:
    mass = rng.uniform(0.3, 4.0)
    com = rng.normal(scale=0.4, size=3)
    return SpatialInertia.from_params(mass, com, random_spd3(rng, 0.1))


def rel_err(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = max(1.0, float(np.max(np.abs(b))) if b.size else 0.0)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - b))) / denom


def rows_entry(link: int, rows, targets=None, soft_weight=None) -> ConstraintEntry:
    return ConstraintEntry(link=link, rows=np.asarray(rows, dtype=float), targets=targets, soft_weight=soft_weight)


def single_rowset(link: int, rows, targets=None, soft_weight=None) -> ConstraintSet:
    return ConstraintSet([rows_entry(link, rows, targets, soft_weight)])


def randomized_state(rng, model, vel_scale: float = 0.6) -> RobotState:
    from pvdyn.scenarios import random_state

    return random_state(rng, model, vel_scale=vel_scale)
