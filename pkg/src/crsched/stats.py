"""Per-user service statistics and the analytic queueing formulas.

Service of one packet takes a random number of slots because the rate
fades slot to slot.  Everything the schedulers need is summarized by
three numbers per (user, power): the packet service rate in packets/slot,
the mean service time in slots, and its second moment.  They are
estimated by Monte Carlo once and memoized; all draws are seeded from
the parameters themselves so results are reproducible across runs and
processes.
"""
from __future__ import annotations

import csv
import hashlib
import math
import struct
from dataclasses import dataclass

import numpy as np

from .channel import GainDistribution

MU_SAMPLES = 100_000      # gain draws behind each rate estimate
MOMENT_TRIALS = 20_000    # packet transmissions behind each moment estimate
_BLOCK_ELEMS = 1 << 22    # scratch-array size cap for service sampling


class InfeasibleError(RuntimeError):
    """Raised when no admissible configuration can stabilize the system."""


@dataclass(frozen=True)
class UserProfile:
    """Traffic and channel description of one user."""

    lam: float                  # Bernoulli packet arrival probability per slot
    delay_bound: float          # average-delay budget in slots
    gamma: GainDistribution     # own-link fading law
    g: GainDistribution         # interference-link fading law (toward the PU)

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"arrival probability out of range: {self.lam}")
        if self.delay_bound <= 0.0:
            raise ValueError("delay_bound must be positive")


@dataclass(frozen=True)
class ServiceLaw:
    """Everything that determines the per-slot service distribution."""

    gamma: GainDistribution
    g: GainDistribution
    i_inst: float
    packet_length: float


@dataclass(frozen=True)
class ServiceStats:
    """Frozen summary of the packet service-time law at one power setting."""

    rate: float           # packets per slot, E[per-slot work] / packet_length
    slots_mean: float     # E[s], slots to push one packet through
    slots_sq_mean: float  # E[s^2]


def service_law(profile: UserProfile, i_inst: float, packet_length: float) -> ServiceLaw:
    return ServiceLaw(profile.gamma, profile.g, i_inst, packet_length)


def _seed_ints(law: ServiceLaw, purpose: str, power: float | None = None) -> list[int]:
    # derive a stable seed from the exact parameter bytes
    payload = struct.pack(
        "<7d", law.gamma.mean, law.gamma.max_gain, law.g.mean, law.g.max_gain,
        law.i_inst, law.packet_length, -1.0 if power is None else power,
    ) + purpose.encode()
    digest = hashlib.blake2b(payload, digest_size=16).digest()
    return [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]


_GAIN_SAMPLE_CACHE: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}


def _gain_samples(law: ServiceLaw, n_samples: int) -> tuple[np.ndarray, np.ndarray]:
    """Common random gain draws reused across all powers of one law.

    Sharing the draws makes the estimated rate exactly monotone in power.
    """
    key = (law, n_samples)
    found = _GAIN_SAMPLE_CACHE.get(key)
    if found is None:
        rng = np.random.Generator(np.random.PCG64(_seed_ints(law, "rate-samples")))
        gammas = law.gamma.sample(rng.random(n_samples))
        gs = law.g.sample(rng.random(n_samples))
        found = (gammas, gs)
        _GAIN_SAMPLE_CACHE[key] = found
    return found


def _capped(law: ServiceLaw, power: float, gs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.minimum(np.where(gs > 0.0, law.i_inst / gs, np.inf), power)


def estimate_rate(law: ServiceLaw, power: float, n_samples: int = MU_SAMPLES) -> float:
    """Packet service rate in packets/slot at transmit-power parameter `power`."""
    if power <= 0.0:
        return 0.0
    if law.gamma.degenerate and law.g.degenerate:
        p = min(law.i_inst / law.g.mean, power) if law.g.mean > 0 else power
        return math.log1p(p * law.gamma.mean) / law.packet_length
    gammas, gs = _gain_samples(law, n_samples)
    work = np.log1p(_capped(law, power, gs) * gammas)
    return float(work.mean()) / law.packet_length


def service_time_samples(law: ServiceLaw, power: float, n_trials: int,
                         rng: np.random.Generator) -> np.ndarray:
    """Slots needed to transmit one packet, simulated exactly per trial.

    Each slot sends min(rate, remaining work); the packet finishes in the
    first slot where the accumulated rate reaches the packet length.
    """
    if power <= 0.0:
        raise InfeasibleError("zero power cannot serve packets")
    length = law.packet_length
    out = np.zeros(n_trials, dtype=np.int64)
    acc = np.zeros(n_trials)
    active = np.arange(n_trials)
    slots_done = 0
    # block sized near 1.5x the rough mean service time so most trials
    # finish in the first draw
    rough_rate = max(estimate_rate(law, power), 1e-12)  # packets/slot
    block = max(4, math.ceil(1.5 / rough_rate) + 4)
    while active.size:
        m = active.size
        # keep each pass's scratch arrays bounded; slow services just loop
        step = min(block, max(4, _BLOCK_ELEMS // m))
        gammas = law.gamma.sample(rng.random((m, step)))
        gs = law.g.sample(rng.random((m, step)))
        rates = np.log1p(_capped(law, power, gs) * gammas)
        cum = np.cumsum(rates, axis=1) + acc[active, None]
        crossed = cum[:, -1] >= length
        if np.any(crossed):
            rows = np.nonzero(crossed)[0]
            first = (cum[rows] >= length).argmax(axis=1)
            out[active[rows]] = slots_done + first + 1
        acc[active] = cum[:, -1]
        active = active[~crossed]
        slots_done += step
    return out


def estimate_service_moments(law: ServiceLaw, power: float,
                             n_trials: int = MOMENT_TRIALS) -> tuple[float, float]:
    """(E[s], E[s^2]) of the packet service time in slots."""
    rng = np.random.Generator(np.random.PCG64(_seed_ints(law, "service-moments", power)))
    s = service_time_samples(law, power, n_trials, rng)
    sf = s.astype(float)
    return float(sf.mean()), float((sf * sf).mean())


class StatsTable:
    """Memoized (law, power) -> ServiceStats with a CSV round trip."""

    def __init__(self, n_samples: int = MU_SAMPLES, n_trials: int = MOMENT_TRIALS):
        self.n_samples = n_samples
        self.n_trials = n_trials
        self._cache: dict[tuple[ServiceLaw, float], ServiceStats] = {}
        self._rate_cache: dict[tuple[ServiceLaw, float], float] = {}

    def stats(self, law: ServiceLaw, power: float) -> ServiceStats:
        key = (law, float(power))
        found = self._cache.get(key)
        if found is None:
            rate = self.rate(law, power)
            if rate <= 0.0:
                found = ServiceStats(rate=0.0, slots_mean=math.inf, slots_sq_mean=math.inf)
            else:
                es, es2 = estimate_service_moments(law, power, self.n_trials)
                found = ServiceStats(rate=rate, slots_mean=es, slots_sq_mean=es2)
            self._cache[key] = found
        return found

    def rate(self, law: ServiceLaw, power: float) -> float:
        """Rate-only lookup: cheap (no service-moment sampling), so load
        bisection can probe arbitrarily low powers."""
        key = (law, float(power))
        found = self._rate_cache.get(key)
        if found is None:
            cached = self._cache.get(key)
            found = cached.rate if cached is not None else \
                estimate_rate(law, power, self.n_samples)
            self._rate_cache[key] = found
        return found

    _CSV_FIELDS = ("gamma_mean", "gamma_max", "g_mean", "g_max", "i_inst",
                   "packet_length", "power", "rate", "slots_mean", "slots_sq_mean")

    def export_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self._CSV_FIELDS)
            for (law, power), st in sorted(
                    self._cache.items(),
                    key=lambda kv: (kv[0][0].gamma.mean, kv[0][0].g.mean, kv[0][1])):
                w.writerow([repr(v) for v in (
                    law.gamma.mean, law.gamma.max_gain, law.g.mean, law.g.max_gain,
                    law.i_inst, law.packet_length, power,
                    st.rate, st.slots_mean, st.slots_sq_mean)])

    def import_csv(self, path: str) -> int:
        n = 0
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            if tuple(header) != self._CSV_FIELDS:
                raise ValueError(f"unexpected stats csv header: {header}")
            for row in r:
                vals = [float(x) for x in row]
                law = ServiceLaw(
                    GainDistribution(vals[0], vals[1]), GainDistribution(vals[2], vals[3]),
                    i_inst=vals[4], packet_length=vals[5])
                self._cache[(law, vals[6])] = ServiceStats(vals[7], vals[8], vals[9])
                n += 1
        return n


def residual_time(lams, slots_sq_means) -> float:
    """Mean residual workload seen by an arrival: sum of lam * E[s^2] / 2."""
    return 0.5 * float(np.dot(np.asarray(lams, dtype=float),
                              np.asarray(slots_sq_means, dtype=float)))


def waiting_time(mu: float, rho: float, rho_bar_prev: float, residual: float) -> float:
    """Mean system time of a priority class under preemptive resume.

    `rho_bar_prev` is the total load of strictly higher-priority classes and
    `residual` the mean residual workload of this class and the ones above
    it.  Returns +inf when either denominator closes (saturated prefix).
    """
    if mu <= 0.0:
        return math.inf
    d1 = 1.0 - rho_bar_prev
    d2 = d1 - rho
    if d1 <= 0.0 or d2 <= 0.0:
        return math.inf
    return (1.0 / mu + residual / d2) / d1


def waiting_time_upper(mu: float, rho: float, rho_bar_max_prev: float,
                       residual: float) -> float:
    """waiting_time evaluated at a load bound >= the true prefix load.

    The formula is increasing in the prefix load, so feeding an upper
    bound yields an upper bound on the waiting time.
    """
    return waiting_time(mu, rho, rho_bar_max_prev, residual)


def rho_bar_max_recursion(order, psi_argmin):
    """Decoupled cumulative load bounds along a priority order.

    `psi_argmin(user, load_prev, residual_prev)` returns
    (psi_value, load_increment, residual_increment) for the power that
    minimizes the user's cost given its prefix context.  Returns
    (bounds, total_psi, increments) where bounds[j] is the load bound
    after the first j users (bounds[0] == 0).
    """
    bounds = [0.0]
    residual = 0.0
    total = 0.0
    increments = []
    for user in order:
        psi, d_load, d_resid = psi_argmin(user, bounds[-1], residual)
        total += psi
        bounds.append(bounds[-1] + d_load)
        residual += d_resid
        increments.append((psi, d_load, d_resid))
    return bounds, total, increments


def total_load(table: StatsTable, laws, lams, power: float) -> float:
    """Sum over users of lam / rate at a common power parameter."""
    load = 0.0
    for law, lam in zip(laws, lams):
        if lam == 0.0:
            continue
        rate = table.rate(law, power)
        if rate <= 0.0:
            return math.inf
        load += lam / rate
    return load


def min_stable_power(table: StatsTable, laws, lams, p_max: float, eps: float,
                     n_grid: int = 256) -> float:
    """Smallest grid power keeping the total load at or below 1 - eps.

    Searches a fine log-spaced grid on (0, p_max] by bisection; the load
    is monotone in power because rate estimates share their gain draws.
    Raises InfeasibleError when even p_max cannot reach the margin.
    """
    target = 1.0 - eps
    if total_load(table, laws, lams, p_max) > target * (1.0 + 1e-12):
        raise InfeasibleError(
            f"total load at max power exceeds margin {target}")
    grid = np.geomspace(p_max * 1e-4, p_max, n_grid)
    lo, hi = 0, n_grid - 1  # invariant: grid[hi] is feasible
    if total_load(table, laws, lams, grid[0]) <= target:
        return float(grid[0])
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if total_load(table, laws, lams, grid[mid]) <= target:
            hi = mid
        else:
            lo = mid
    return float(grid[hi])


def admission_scale(lams, rates_at_pmax, eps: float) -> list[float]:
    """Shrink arrival rates proportionally so the load at max power is 1 - eps."""
    load = sum(lam / r for lam, r in zip(lams, rates_at_pmax))
    if load < 1.0:
        raise ValueError("admission scaling applies only to overloaded input")
    factor = (1.0 - eps) / load
    return [lam * factor for lam in lams]


def discrete_service_time_samples(values, probs, length: int, n_trials: int,
                                  rng: np.random.Generator) -> np.ndarray:
    """Service times for an integer-valued discrete rate law (test fixture).

    Exact accounting: each slot sends min(rate, remaining).
    """
    values = np.asarray(values, dtype=np.int64)
    probs = np.asarray(probs, dtype=float)
    assert np.all(values >= 0) and np.all((values == 0) | (values >= 1))
    out = np.zeros(n_trials, dtype=np.int64)
    remaining = np.full(n_trials, length, dtype=np.int64)
    active = np.arange(n_trials)
    slot = 0
    while active.size:
        slot += 1
        draws = rng.choice(values, size=active.size, p=probs)
        sent = np.minimum(draws, remaining[active])
        remaining[active] -= sent
        done = remaining[active] == 0
        out[active[done]] = slot
        active = active[~done]
    return out


def bounding_service_time_samples(zero_prob: float, length: int, n_trials: int,
                                  rng: np.random.Generator) -> np.ndarray:
    """Samples of the pessimistic service time: slots to collect `length`
    non-zero-rate slots, i.e. `length` plus a negative-binomial count of
    zero-rate slots."""
    return length + rng.negative_binomial(length, 1.0 - zero_prob, size=n_trials)


def service_time_bound_report(values, probs, length: int, n_trials: int,
                              seed: int) -> dict:
    """Empirical check that the true service time is stochastically smaller
    than its negative-binomial-based bound.

    Both sides are simulated independently; the comparison runs over all
    integer points up to the bound's 99.9th percentile.
    """
    rng_s = np.random.Generator(np.random.PCG64([seed, 1]))
    rng_b = np.random.Generator(np.random.PCG64([seed, 2]))
    s = discrete_service_time_samples(values, probs, length, n_trials, rng_s)
    zero_prob = float(sum(p for v, p in zip(values, probs) if v == 0))
    sb = bounding_service_time_samples(zero_prob, length, n_trials, rng_b)
    hi = int(np.quantile(sb, 0.999))
    xs = np.arange(1, hi + 1)
    ecdf_s = np.searchsorted(np.sort(s), xs, side="right") / n_trials
    ecdf_b = np.searchsorted(np.sort(sb), xs, side="right") / n_trials
    return {
        "x": xs,
        "ecdf_service": ecdf_s,
        "ecdf_bound": ecdf_b,
        "dominates": bool(np.all(ecdf_s >= ecdf_b)),
    }
