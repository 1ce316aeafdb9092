"""Slot-accurate simulator and frame schedulers for a shared underlay uplink.

N secondary users share one channel under an always-on primary receiver;
schedulers must respect an instantaneous interference cap every slot and an
average interference budget in the long run while meeting per-user average
delay bounds.
"""

from .channel import (GainDistribution, apply_csi_error, capped_power,
                      sample_gain, transmission_rate)
from .policies import (FramePlan, GridStats, build_grid_stats, csma_plan,
                       doac_brute, doac_opt, doic_plan, maxweight_plan,
                       priority_by_weight, schedule_slot, subopt_plan)
from .queueing import FrameRecord, FrameTracker, Packet, UserQueue, long_run_delay
from .simulator import (Metrics, RunSetup, SimConfig, SweepRow, aggregate,
                        prepare_run, replay_metrics, run, stability_monitor,
                        sweep)
from .stats import (InfeasibleError, ServiceLaw, ServiceStats, StatsTable,
                    UserProfile, estimate_rate, estimate_service_moments,
                    min_stable_power, service_law, total_load)
from .validation import (batch_mean_se, predicted_sojourns,
                         priority_formula_report, priority_queue_sojourns)

__all__ = [
    "GainDistribution", "apply_csi_error", "capped_power", "sample_gain",
    "transmission_rate",
    "FramePlan", "GridStats", "build_grid_stats", "csma_plan", "doac_brute",
    "doac_opt", "doic_plan", "maxweight_plan", "priority_by_weight",
    "schedule_slot", "subopt_plan",
    "FrameRecord", "FrameTracker", "Packet", "UserQueue", "long_run_delay",
    "Metrics", "RunSetup", "SimConfig", "SweepRow", "aggregate",
    "prepare_run", "replay_metrics", "run", "stability_monitor", "sweep",
    "InfeasibleError", "ServiceLaw", "ServiceStats", "StatsTable",
    "UserProfile", "estimate_rate", "estimate_service_moments",
    "min_stable_power", "service_law", "total_load",
    "batch_mean_se", "predicted_sojourns", "priority_formula_report",
    "priority_queue_sojourns",
]
