"""Frame-level scheduling policies and their shared optimization machinery.

All frame-based policies produce a FramePlan at the start of each frame:
a priority order over users plus one transmit-power parameter per user,
valid for the whole frame.  The plan is chosen from two debt counters that
the simulator maintains across frames:

* `delay_debt[i]` grows when user i's packets exceed their average-delay
  allowance and shrinks otherwise (never below zero);
* `interference_debt` does the same for interference energy versus the
  long-run average budget.

Mean-rate stability of those counters is what enforces the corresponding
long-run constraints, so the planners only ever need the counters, the
arrival rates, and the per-power service statistics.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .stats import StatsTable, UserProfile, service_law


def choose_allowance(delay_debt, lams, v_weight: float, delay_bounds):
    """Per-frame delay allowance: the full bound when the debt pressure
    exceeds the tradeoff weight, else zero.  Ties give zero."""
    delay_debt = np.asarray(delay_debt, dtype=float)
    lams = np.asarray(lams, dtype=float)
    bounds = np.asarray(delay_bounds, dtype=float)
    return np.where(delay_debt * lams > v_weight, bounds, 0.0)


def update_delay_debt(debt, delay_sum, n_arrivals, allowance):
    """One frame of the per-user delay counter: add realized delay, credit
    the allowance per arrival, clamp at zero."""
    out = np.asarray(debt, dtype=float) + np.asarray(delay_sum, dtype=float) \
        - np.asarray(n_arrivals, dtype=float) * np.asarray(allowance, dtype=float)
    return np.maximum(out, 0.0)


def update_interference_debt(debt: float, frame_interference: float,
                             i_avg: float, frame_len: int) -> float:
    """One frame of the interference counter: energy in, budget out, clamp."""
    return max(debt + frame_interference - i_avg * frame_len, 0.0)


@dataclass(frozen=True)
class FramePlan:
    """Scheduling instructions for one frame.

    kind is "priority" (serve the first backlogged user in `priority`),
    "random" (uniform among backlogged users), or "per_slot" (the policy
    decides each slot; only the power parameters apply).
    """

    kind: str
    power_params: tuple[float, ...]
    priority: tuple[int, ...] = ()
    fallback: bool = False
    cost: float = math.nan


def schedule_slot(plan: FramePlan, backlogged, rng=None):
    """Pick the user to transmit this slot, or None when nobody is backlogged.

    `backlogged` is an indexable of booleans.  Random plans draw uniformly
    among backlogged users from `rng`.
    """
    if plan.kind == "random":
        candidates = [i for i, b in enumerate(backlogged) if b]
        if not candidates:
            return None
        return candidates[int(rng.random() * len(candidates))]
    for user in plan.priority:
        if backlogged[user]:
            return user
    return None


def priority_by_weight(weights) -> tuple[int, ...]:
    """Users sorted by descending weight, ties broken by ascending index."""
    weights = np.asarray(weights, dtype=float)
    return tuple(int(i) for i in np.lexsort((np.arange(weights.size), -weights)))


@dataclass
class GridStats:
    """Per-user service statistics tabulated over the power grid.

    Rows are users, columns grid powers.  The grid floor is the minimum
    stable power, so every tabulated rate is positive and any power choice
    keeps each user individually stable.
    """

    grid: np.ndarray       # (M,) power parameters, ascending
    lams: np.ndarray       # (N,) arrival probabilities
    rate: np.ndarray       # (N, M) packets/slot
    slots_sq: np.ndarray   # (N, M) E[s^2]
    g_mean: np.ndarray     # (N,) mean true interference gain
    rate_pmax: np.ndarray = field(init=False)
    rate_pmin: np.ndarray = field(init=False)
    inv_rate: np.ndarray = field(init=False)
    load: np.ndarray = field(init=False)
    resid_own: np.ndarray = field(init=False)
    intf: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.grid = np.asarray(self.grid, dtype=float)
        self.lams = np.asarray(self.lams, dtype=float)
        self.rate = np.asarray(self.rate, dtype=float)
        self.slots_sq = np.asarray(self.slots_sq, dtype=float)
        self.g_mean = np.asarray(self.g_mean, dtype=float)
        assert np.all(self.rate > 0.0), "grid must sit above the stability floor"
        self.rate_pmax = self.rate[:, -1].copy()
        self.rate_pmin = self.rate[:, 0].copy()
        self.inv_rate = 1.0 / self.rate
        self.load = self.lams[:, None] * self.inv_rate
        self.resid_own = 0.5 * self.lams[:, None] * self.slots_sq
        self.intf = self.load * self.grid[None, :] * self.g_mean[:, None]

    @property
    def n_users(self) -> int:
        return self.rate.shape[0]

    @property
    def p_min(self) -> float:
        return float(self.grid[0])

    @property
    def p_max(self) -> float:
        return float(self.grid[-1])


def build_grid_stats(profiles: list[UserProfile], i_inst: float, packet_length: float,
                     p_min: float, p_max: float, m: int, table: StatsTable) -> GridStats:
    grid = np.geomspace(p_min, p_max, m) if p_min < p_max else np.full(m, p_max)
    laws = [service_law(p, i_inst, packet_length) for p in profiles]
    rate = np.empty((len(profiles), grid.size))
    slots_sq = np.empty_like(rate)
    for i, law in enumerate(laws):
        for j, p in enumerate(grid):
            st = table.stats(law, float(p))
            rate[i, j] = st.rate
            slots_sq[i, j] = st.slots_sq_mean
    return GridStats(
        grid=grid,
        lams=np.array([p.lam for p in profiles]),
        rate=rate,
        slots_sq=slots_sq,
        g_mean=np.array([p.g.truncated_mean for p in profiles]),
    )


def _cost_rows(gs: GridStats, users, y_lams, x_debt, load_prevs, resid_prevs):
    # caller must suppress divide/invalid fp warnings
    y_lams = y_lams[:, None]
    d1 = (1.0 - load_prevs)[:, None]
    d2 = d1 - gs.load[users]
    wup = (gs.inv_rate[users] + (resid_prevs[:, None] + gs.resid_own[users]) / d2) / d1
    delay = np.where(y_lams > 0.0, y_lams * wup, 0.0)
    psi = delay + x_debt * gs.intf[users]
    psi[((d2 <= 0.0) | (d1 <= 0.0)) & (y_lams > 0.0)] = math.inf
    return psi


def frame_cost_rows(gs: GridStats, users, y_lams, x_debt: float,
                    load_prevs, resid_prevs) -> np.ndarray:
    """Cost of assigning each of `users` the next priority position, per grid
    power; row r belongs to users[r] under prefix context (load_prevs[r],
    resid_prevs[r]).

    Each entry sums the delay pressure (debt * arrival rate * waiting-time
    upper bound at the prefix load bound) and the interference pressure
    (interference debt * expected interference energy rate).  +inf where
    the prefix plus own load saturates.  Zero delay debt contributes zero
    even where the waiting time diverges.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        return _cost_rows(gs, np.asarray(users, dtype=np.int64),
                          np.asarray(y_lams, dtype=float), x_debt,
                          np.asarray(load_prevs, dtype=float),
                          np.asarray(resid_prevs, dtype=float))


def frame_cost_row(gs: GridStats, user: int, y_lam: float, x_debt: float,
                   load_prev: float, resid_prev: float) -> np.ndarray:
    """Single-user view of frame_cost_rows."""
    return frame_cost_rows(gs, [user], [y_lam], x_debt,
                           [load_prev], [resid_prev])[0]


def doac_opt(gs: GridStats, delay_debt, x_debt: float) -> FramePlan:
    """Joint priority order and power parameters by subset dynamic programming.

    Stage i assigns the i-th priority.  A state is the set of users already
    placed *together with* the cumulative (load bound, residual) the chosen
    powers produced: the per-position power argmin depends on that context,
    so two orderings of the same set can leave different contexts and the
    cheaper prefix is not always the better one to extend.  Keeping every
    distinct context per set (duplicates merged to their cheapest cost)
    makes the search exact — the minimum matches the exhaustive twin,
    doac_brute.  Whenever the power argmin is context-free (e.g. no
    interference debt, where full power is always cheapest), every ordering
    leaves the same context and each set carries a single state, which is
    the textbook subset recursion and cost.
    """
    n = gs.rate.shape[0]
    ylam = np.asarray(delay_debt, dtype=float) * gs.lams
    size = 1 << n
    # states[mask]: {(load, resid) -> (cost, parent_key, user, pidx)}
    states: list[dict] = [dict() for _ in range(size)]
    states[0][(0.0, 0.0)] = (0.0, None, -1, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        for mask in range(1, size):
            # gather (user, prev-context) candidates, users ascending so the
            # first minimum breaks ties toward the lowest user index
            cand_users = []
            cand_costs = []
            cand_ctx = []
            for u in range(n):
                if not mask >> u & 1:
                    continue
                for ctx, (cost, _, _, _) in states[mask ^ (1 << u)].items():
                    cand_users.append(u)
                    cand_costs.append(cost)
                    cand_ctx.append(ctx)
            if not cand_users:
                continue
            users = np.array(cand_users, dtype=np.int64)
            prev_cost = np.array(cand_costs)
            loads = np.array([c[0] for c in cand_ctx])
            resids = np.array([c[1] for c in cand_ctx])
            rows = _cost_rows(gs, users, ylam[users], x_debt, loads, resids)
            pick = np.argmin(rows, axis=1)  # first minimum: lowest power on ties
            totals = prev_cost + rows[np.arange(len(users)), pick]
            here = states[mask]
            for k in range(len(users)):
                if totals[k] == math.inf:
                    continue
                u, pidx = int(users[k]), int(pick[k])
                ctx = (float(loads[k] + gs.load[u, pidx]),
                       float(resids[k] + gs.resid_own[u, pidx]))
                kept = here.get(ctx)
                if kept is None or totals[k] < kept[0]:
                    here[ctx] = (float(totals[k]), cand_ctx[k], u, pidx)
    full = size - 1
    if not states[full]:
        # nothing schedulable under the surrogate: fall back to a static
        # low-power priority plan and flag it
        weights = np.asarray(delay_debt, dtype=float) * gs.rate_pmin
        return FramePlan(kind="priority", power_params=(gs.p_min,) * n,
                         priority=priority_by_weight(weights), fallback=True)
    best_ctx = min(states[full], key=lambda c: states[full][c][0])
    order = []
    powers = [0.0] * n
    mask, ctx = full, best_ctx
    while mask:
        cost, prev_ctx, u, pidx = states[mask][ctx]
        order.append(u)
        powers[u] = float(gs.grid[pidx])
        mask ^= 1 << u
        ctx = prev_ctx
    order.reverse()
    return FramePlan(kind="priority", power_params=tuple(powers),
                     priority=tuple(order), cost=float(states[full][best_ctx][0]))


def doac_brute(gs: GridStats, delay_debt, x_debt: float) -> FramePlan:
    """Exhaustive twin of doac_opt: walk every permutation, each with its
    own decoupled load-bound chain, and keep the cheapest.  Exponential;
    meant for small instances and as the optimality oracle."""
    n = gs.rate.shape[0]
    ylam = np.asarray(delay_debt, dtype=float) * gs.lams
    best_cost = math.inf
    best_perm: tuple[int, ...] | None = None
    best_pidx: tuple[int, ...] = ()
    for perm in itertools.permutations(range(n)):
        load_prev = 0.0
        resid_prev = 0.0
        total = 0.0
        pidxs = []
        for u in perm:
            row = frame_cost_row(gs, u, ylam[u], x_debt, load_prev, resid_prev)
            pidx = int(np.argmin(row))
            total += row[pidx]
            if total == math.inf:
                break
            load_prev += gs.load[u, pidx]
            resid_prev += gs.resid_own[u, pidx]
            pidxs.append(pidx)
        else:
            if total < best_cost:
                best_cost = total
                best_perm = perm
                best_pidx = tuple(pidxs)
    if best_perm is None:
        weights = np.asarray(delay_debt, dtype=float) * gs.rate_pmin
        return FramePlan(kind="priority", power_params=(gs.p_min,) * n,
                         priority=priority_by_weight(weights), fallback=True)
    powers = [0.0] * n
    for u, pidx in zip(best_perm, best_pidx):
        powers[u] = float(gs.grid[pidx])
    return FramePlan(kind="priority", power_params=tuple(powers),
                     priority=best_perm, cost=float(best_cost))


def doic_plan(gs: GridStats, delay_debt) -> FramePlan:
    """Max-power plan ordered by debt times max-power service rate.

    Honors only the instantaneous interference cap (via per-slot power
    clipping); the average-interference debt is ignored by design.
    """
    weights = np.asarray(delay_debt, dtype=float) * gs.rate_pmax
    return FramePlan(kind="priority", power_params=(gs.p_max,) * gs.n_users,
                     priority=priority_by_weight(weights))


def subopt_plan(gs: GridStats, delay_debt, x_debt: float) -> FramePlan:
    """Two-level power rule with the same debt-rate priority idea.

    A user whose delay debt is dominated by the interference debt drops to
    the minimum stable power (ties keep max power); priorities then sort by
    debt times the rate at the power actually chosen.  O(N log N).
    """
    debt = np.asarray(delay_debt, dtype=float)
    low = x_debt > debt
    powers = np.where(low, gs.p_min, gs.p_max)
    rates = np.where(low, gs.rate_pmin, gs.rate_pmax)
    return FramePlan(kind="priority", power_params=tuple(float(p) for p in powers),
                     priority=priority_by_weight(debt * rates))


def csma_plan(power_params) -> FramePlan:
    """Uniform random scheduling with externally supplied (genie) powers."""
    return FramePlan(kind="random", power_params=tuple(float(p) for p in power_params))


def maxweight_plan(n_users: int, p_max: float) -> FramePlan:
    """Marker plan: per-slot backlog-times-rate scheduling at max power."""
    return FramePlan(kind="per_slot", power_params=(p_max,) * n_users)
