"""Constrained rigid-body dynamics on kinematic trees.

Propagation-based solvers (exact, penalty, and early-elimination variants),
operational-space inertia algorithms, dense joint-space baselines, a
constrained simulator, and a benchmarking CLI.
"""

from .model import (
    ConstraintEntry,
    ConstraintSet,
    Joint,
    Link,
    ModelError,
    RobotModel,
    RobotState,
    WorldPointAnchor,
    WorldWeldAnchor,
    constraints_to_document,
    load_constraints,
    load_model,
    model_to_document,
    motion_subspace,
    save_constraints,
    save_model,
)
from .kinematics import (
    KinematicsCache,
    acceleration_sweep,
    constraint_jacobian,
    forward_sweep,
    link_world_velocity,
    point_world_position,
    point_world_velocity,
)
from .solvers import (
    DynamicsSolution,
    OverConstrainedError,
    SingularSystemError,
    SolverInternals,
    SolverWorkspace,
    aba,
    pv_early_solve,
    pv_soft_solve,
    pv_solve,
    rank1_reflector,
)
from .osim import (
    FastOsimOperator,
    OsimResult,
    build_fast_operator,
    pv_osim,
    pv_osim_fast_apply,
)
from .baseline import (
    JointSpaceModel,
    build_joint_space,
    crba,
    dense_mass_matrix,
    dense_osim,
    dof_parents,
    inverse_dynamics,
    kkt_oracle,
    link_jacobians,
    ltl_factor,
    ltl_osim,
    rnea_bias,
    soft_oracle,
)
from .sim import (
    SimConfig,
    StepInfo,
    Trajectory,
    baumgarte_targets,
    constraint_errors,
    mechanical_energy,
    realize_constraints,
    simulate,
    step,
)
from .verify import CheckResult, DebugHooks, VerifyReport, run_verification
from .bench import BenchReport, BenchRow, run_bench
from . import scenarios

__version__ = "0.1.0"
