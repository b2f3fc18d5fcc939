"""Movement-primitive reinforcement learning on desk-scale control tasks.

Episodic policies predict distributions over movement-primitive parameters;
trajectories follow in closed form, trajectory distributions follow
analytically, and policy updates maximize segment-wise importance-weighted
advantages under per-state trust-region projections. Step-based PPO and
episode-likelihood baselines share the same environments and metrics.
"""

from ._backend import active_backend, get_kernels
from .mp import (
    MpConfig,
    MpKernel,
    Trajectory,
    build_kernel,
    compute_trajectory,
    finite_diff_derivatives,
)

__all__ = [
    "MpConfig",
    "MpKernel",
    "Trajectory",
    "active_backend",
    "build_kernel",
    "compute_trajectory",
    "finite_diff_derivatives",
    "get_kernels",
]
