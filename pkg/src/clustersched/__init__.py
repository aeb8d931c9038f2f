"""Slot-based cluster scheduling: Best-Fit and virtual-queue policies, exact capacity oracles."""
from ._accel import backend
from .configs import Configuration, TypedSystem, enumerate_maximal, k_red, max_weight, weight
from .model import GRID, CapacityViolation, Job, QueueState, ServerState, apply_slot_accounting, normalize_workload
from .oracle import (
    WorkloadProblem,
    kred_problem,
    prop1_campaign,
    prop1_check,
    prop2_instance,
    rho_star,
    rho_star_restricted,
    rounded_bounds,
)
from .partition import choose_J, quantile_partition, type_of, universal_partition
from .schedulers import (
    SchedulerState,
    bf_j_step,
    bf_js_step,
    bf_s_step,
    fifo_ff_step,
    vqs_bf_step,
    vqs_step,
)
from .sim import RunMetrics, Scenario, replicate, run, stability_verdict
from .workload import empirical_cdf, mean_size, trace_prepare

__version__ = "0.1.0"

__all__ = [
    "GRID", "CapacityViolation", "Configuration", "Job", "QueueState", "RunMetrics", "Scenario",
    "SchedulerState", "ServerState", "TypedSystem", "WorkloadProblem", "apply_slot_accounting", "backend",
    "bf_j_step", "bf_js_step", "bf_s_step", "choose_J", "empirical_cdf", "enumerate_maximal", "fifo_ff_step",
    "k_red", "kred_problem", "max_weight", "mean_size", "normalize_workload", "prop1_campaign", "prop1_check",
    "prop2_instance", "quantile_partition", "replicate", "rho_star", "rho_star_restricted", "rounded_bounds",
    "run", "stability_verdict", "trace_prepare", "type_of", "universal_partition", "vqs_bf_step", "vqs_step",
    "weight",
]
