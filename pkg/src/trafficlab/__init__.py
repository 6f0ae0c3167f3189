"""trafficlab: kinematic multi-agent traffic simulation with map-aware
trajectory scoring, attention-based policy repair of infeasible
trajectories, and a scenario-quality metrics suite."""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
