"""Time integration, physical right-hand sides and hybrid models."""

from geps.dynamics.hybrid import (
    HybridModel,
    UnresolvedPhysicsError,
    hybrid_rhs,
    init_physics_params,
    physics_params_for_env,
)
from geps.dynamics.integrate import (
    IntegrationDivergedError,
    integrate_rk4,
    rk4_step,
    rollout_node,
    rollout_onestep,
    stack_history,
)
from geps.dynamics.physics import (
    rhs_burgers_known,
    rhs_combined,
    rhs_gray_scott_full,
    rhs_pendulum,
    rhs_pendulum_known,
)

__all__ = [
    "HybridModel", "UnresolvedPhysicsError", "hybrid_rhs", "init_physics_params",
    "physics_params_for_env", "IntegrationDivergedError", "integrate_rk4", "rk4_step",
    "rollout_node", "rollout_onestep", "stack_history", "rhs_burgers_known",
    "rhs_combined", "rhs_gray_scott_full", "rhs_pendulum", "rhs_pendulum_known",
]
