"""Independent oracles used to validate the analytic machinery.

The centerpiece is an event-driven preemptive-resume priority queue with
Poisson arrivals: the waiting_time formula is exact for that model class,
so simulated sojourn times must match it within Monte-Carlo error.  The
simulator here shares no code with the formula side on purpose.
"""
from __future__ import annotations

import math
from collections import deque

import numpy as np

from .stats import waiting_time


def priority_queue_sojourns(lams, service_samplers, n_packets: int,
                            seed: int) -> list[np.ndarray]:
    """Simulate a continuous-time preemptive-resume priority queue.

    Class 0 has the highest priority.  `service_samplers[i](rng)` draws one
    service requirement.  Runs until `n_packets` departures in total and
    returns per-class sojourn-time arrays (arrival to last-bit departure).
    """
    k = len(lams)
    rng = np.random.Generator(np.random.PCG64(seed))
    queues: list[deque] = [deque() for _ in range(k)]  # [arrival_time, remaining]
    next_arrival = [rng.exponential(1.0 / l) if l > 0 else math.inf for l in lams]
    sojourns: list[list[float]] = [[] for _ in range(k)]
    t = 0.0
    done = 0
    while done < n_packets:
        serving = next((i for i in range(k) if queues[i]), None)
        t_completion = t + queues[serving][0][1] if serving is not None else math.inf
        i_arr = int(np.argmin(next_arrival))
        t_arrival = next_arrival[i_arr]
        if t_arrival <= t_completion:
            # progress the served job up to the arrival, then enqueue
            if serving is not None:
                queues[serving][0][1] -= t_arrival - t
            t = t_arrival
            queues[i_arr].append([t, service_samplers[i_arr](rng)])
            next_arrival[i_arr] = t + rng.exponential(1.0 / lams[i_arr])
        else:
            t = t_completion
            job = queues[serving].popleft()
            sojourns[serving].append(t - job[0])
            done += 1
    return [np.asarray(s) for s in sojourns]


def batch_mean_se(x: np.ndarray, n_batches: int = 20) -> tuple[float, float]:
    """Mean and batch-means standard error (sojourns are autocorrelated)."""
    n = x.size // n_batches
    if n == 0:
        return float(x.mean()), float(x.std() / math.sqrt(max(x.size, 1)))
    means = x[: n * n_batches].reshape(n_batches, n).mean(axis=1)
    return float(x.mean()), float(means.std(ddof=1) / math.sqrt(n_batches))


def predicted_sojourns(lams, moments) -> list[float]:
    """Formula-side per-class sojourn predictions.

    `moments[i]` is (E[s], E[s^2]) for class i; classes are listed in
    descending priority.  Exact for Poisson arrivals and preemptive resume.
    """
    out = []
    prefix_load = 0.0
    residual = 0.0
    for lam, (es, es2) in zip(lams, moments):
        rho = lam * es
        residual += 0.5 * lam * es2
        out.append(waiting_time(1.0 / es, rho, prefix_load, residual))
        prefix_load += rho
    return out


def priority_formula_report(lams, service_samplers, moments, n_packets: int,
                            seed: int, n_se: float = 3.0) -> dict:
    """Compare formula predictions against the event-driven oracle.

    Returns per-class (prediction, simulated mean, SE, ok) where ok means
    the prediction sits within n_se batch-mean standard errors.
    """
    sims = priority_queue_sojourns(lams, service_samplers, n_packets, seed)
    preds = predicted_sojourns(lams, moments)
    rows = []
    for pred, s in zip(preds, sims):
        mean, se = batch_mean_se(s)
        rows.append({
            "predicted": pred,
            "simulated": mean,
            "se": se,
            "ok": abs(pred - mean) <= n_se * se,
        })
    return {"classes": rows, "ok": all(r["ok"] for r in rows)}
