"""Interactive co-design of legged robot structure and periodic motion.

The package couples two optimizations: an inner Newton solve that shapes a
periodic motion trajectory for a fixed structure, and an outer quasi-Newton
loop that moves the structure parameters along an adjoint gradient taken on
the manifold of motion-optimal trajectories.  Robots, tasks, and trajectories
round-trip through JSON documents; an HTTP session service exposes the
optimizer to interactive clients.
"""
from .kinematics import RobotTopology, StructureParams, Pose
from .gait import FootfallPattern, FrameLayout, MotionTrajectory, make_footfall
from .objective import RobotCostModel, TaskSpec, eval_total
from .motion_opt import MotionOptSettings, MotionResult, optimize_motion
from .design_opt import (
    CoDesignResult,
    DesignOptSettings,
    RunControl,
    adjoint_gradient,
    co_optimize,
    co_optimize_multi,
)
from ._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = [
    "RobotTopology",
    "StructureParams",
    "Pose",
    "FootfallPattern",
    "FrameLayout",
    "MotionTrajectory",
    "make_footfall",
    "RobotCostModel",
    "TaskSpec",
    "eval_total",
    "MotionOptSettings",
    "MotionResult",
    "optimize_motion",
    "DesignOptSettings",
    "CoDesignResult",
    "RunControl",
    "adjoint_gradient",
    "co_optimize",
    "co_optimize_multi",
    "KERNEL_BACKEND",
    "__version__",
]
