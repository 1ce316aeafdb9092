"""Command-line front end: single runs, multi-scheme sweeps, validation.

Scenario files are flat `key = value` text (see `scenarios/` and the
README schema).  Exit codes: 0 success, 1 infeasible scenario, 2
validation failure or bad invocation.
"""
from __future__ import annotations

import argparse
import csv
import os
import sys

import numpy as np

from .channel import GainDistribution
from .policies import GridStats, doac_brute, doac_opt
from .simulator import POLICIES, Metrics, SimConfig, aggregate, run, sweep
from .stats import (
    InfeasibleError,
    StatsTable,
    UserProfile,
    service_time_bound_report,
)
from .validation import priority_formula_report

CONFIG_DIR_ENV = "CRSCHED_SCENARIOS"

# sweep scheme -> what it runs; the last three reuse the doac optimizer
SCHEMES = {
    "maxweight": "per-slot queue-length x rate argmax at max power",
    "csma": "uniform random among backlogged users, powers from a shadow doac run",
    "subopt": "threshold powers (floor once X exceeds Y_i) with weighted priority",
    "doic": "max-power weighted priority; interference debt tracked, not enforced",
    "doac": "frame optimizer enforcing both debt constraints, perfect estimates",
    "doac_csi": "doac with the scenario's channel-estimate error level alpha",
    "doac_unc": "doac with the last user's delay bound lifted to d_high",
}


def load_scenario(path: str) -> dict[str, str]:
    """Parse a flat key=value file; '#' lines are comments."""
    out: dict[str, str] = {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected key = value")
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out


def resolve_config_path(name: str) -> str:
    if os.path.exists(name):
        return name
    candidates = []
    base = name if name.endswith(".cfg") else name + ".cfg"
    env_dir = os.environ.get(CONFIG_DIR_ENV)
    if env_dir:
        candidates.append(os.path.join(env_dir, base))
    candidates.append(os.path.join("scenarios", base))
    for c in candidates:
        if os.path.exists(c):
            return c
    raise FileNotFoundError(f"scenario {name!r} not found (tried {candidates})")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",")]


def _per_user(sc: dict, key: str, n: int, default: float | None = None) -> list[float]:
    if key not in sc:
        if default is None:
            raise KeyError(f"scenario key {key!r} missing")
        return [default] * n
    vals = _floats(sc[key])
    if len(vals) == 1:
        return vals * n
    if len(vals) != n:
        raise ValueError(f"{key} needs 1 or {n} values, got {len(vals)}")
    return vals


def build_profiles(sc: dict, lam: float, delay_bounds=None) -> tuple[UserProfile, ...]:
    n = int(sc["n_users"])
    shape = _per_user(sc, "lam_shape", n, default=1.0)
    gamma_means = _per_user(sc, "gamma_mean", n)
    g_means = _per_user(sc, "g_mean", n)
    gamma_f = float(sc.get("gamma_max_factor", "10"))
    g_f = float(sc.get("g_max_factor", "10"))
    bounds = list(delay_bounds) if delay_bounds is not None else \
        _per_user(sc, "delay_bound", n)
    return tuple(
        UserProfile(lam=shape[i] * lam, delay_bound=bounds[i],
                    gamma=GainDistribution(gamma_means[i], gamma_f * gamma_means[i]),
                    g=GainDistribution(g_means[i], g_f * g_means[i]))
        for i in range(n))


def build_config(sc: dict, lam: float | None = None, seed: int | None = None,
                 policy: str | None = None, alpha: float | None = None,
                 horizon: int | None = None, v_weight: float | None = None,
                 delay_bounds=None) -> SimConfig:
    lam = float(sc["lam"]) if lam is None else lam
    return SimConfig(
        profiles=build_profiles(sc, lam, delay_bounds),
        packet_length=float(sc["packet_length"]),
        i_inst=float(sc["i_inst"]),
        i_avg=float(sc["i_avg"]),
        p_max=float(sc["p_max"]),
        v_weight=float(sc["v_weight"]) if v_weight is None else v_weight,
        alpha=float(sc.get("alpha", "0")) if alpha is None else alpha,
        eps=float(sc.get("eps", "0.1")),
        policy=(policy or sc.get("policy", "doac")),
        grid_size=int(sc.get("grid_size", "16")),
        horizon=int(sc["horizon"]) if horizon is None else horizon,
        seed=int(sc.get("seed", "0")) if seed is None else seed,
        debt_stride=int(sc.get("debt_stride", "0")),
    )


def scheme_config(sc: dict, scheme: str, lam: float, seed: int) -> SimConfig:
    """SimConfig for one sweep scheme: comparison runs use perfect
    estimates except doac_csi, which applies the scenario's alpha."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r} (choose from {sorted(SCHEMES)})")
    alpha = float(sc.get("alpha", "0")) if scheme == "doac_csi" else 0.0
    bounds = None
    if scheme == "doac_unc":
        n = int(sc["n_users"])
        bounds = _per_user(sc, "delay_bound", n)
        bounds[-1] = float(sc["d_high"])
    policy = scheme if scheme in POLICIES else "doac"
    return build_config(sc, lam=lam, seed=seed, policy=policy, alpha=alpha,
                        delay_bounds=bounds)


def _metrics_columns(n: int) -> list[str]:
    cols = ["scheme", "lam", "seed", "horizon", "frames", "sum_delay",
            "avg_interference", "max_slot_interference", "inst_violations",
            "multi_tx_violations", "fallback_frames", "admission_scaled",
            "x_over_k"]
    cols += [f"w_{i+1}" for i in range(n)]
    cols += [f"y_over_k_{i+1}" for i in range(n)]
    cols += [f"lam_eff_{i+1}" for i in range(n)]
    return cols


def _metrics_row(scheme: str, lam: float, seed: int, m: Metrics) -> list:
    row = [scheme, repr(lam), seed, m.horizon, m.frames, repr(m.sum_delay),
           repr(m.avg_interference), repr(m.max_slot_interference),
           m.inst_violations, m.multi_tx_violations, m.fallback_frames,
           int(m.admission_scaled), repr(m.x_over_k)]
    row += ["" if w is None else repr(float(w)) for w in m.per_user_delay]
    row += [repr(float(v)) for v in m.y_over_k]
    row += [repr(float(v)) for v in m.effective_lams]
    return row


def write_metrics_csv(path: str, entries: list[tuple[str, float, int, Metrics]]) -> None:
    n = len(entries[0][3].per_user_delay)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_metrics_columns(n))
        for scheme, lam, seed, m in entries:
            w.writerow(_metrics_row(scheme, lam, seed, m))


def write_aggregate_csv(path: str, agg: dict) -> None:
    keys = sorted(agg)
    n = len(agg[keys[0]]["per_user_delay_mean"])
    cols = ["scheme", "lam", "n_seeds", "sum_delay_mean", "sum_delay_se",
            "interference_mean", "interference_se", "x_over_k_mean",
            "fallback_frames", "admission_scaled"]
    cols += [f"w_mean_{i+1}" for i in range(n)]
    cols += [f"w_se_{i+1}" for i in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for scheme, lam in keys:
            c = agg[(scheme, lam)]
            row = [scheme, repr(lam), c["n_seeds"], repr(c["sum_delay_mean"]),
                   repr(c["sum_delay_se"]), repr(c["interference_mean"]),
                   repr(c["interference_se"]), repr(c["x_over_k_mean"]),
                   c["fallback_frames"], int(c["admission_scaled"])]
            row += ["" if v is None else repr(float(v)) for v in c["per_user_delay_mean"]]
            row += [repr(float(v)) for v in c["per_user_delay_se"]]
            w.writerow(row)


def write_trace_csv(path: str, trace: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["slot", "arrival_mask", "served_user", "power", "rate",
                    "interference"])
        for row in trace:
            w.writerow([row[0], row[1], row[2], repr(row[3]), repr(row[4]),
                        repr(row[5])])


def write_plans_csv(path: str, plans: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "kind", "fallback", "priority", "powers",
                    "delay_debt", "interference_debt"])
        for frame, plan, y, x in plans:
            w.writerow([frame, plan.kind, int(plan.fallback),
                        ";".join(str(u) for u in plan.priority),
                        ";".join(repr(float(p)) for p in plan.power_params),
                        ";".join(repr(float(v)) for v in y), repr(float(x))])


def _print_summary(scheme: str, m: Metrics) -> None:
    delays = ", ".join("-" if w is None else f"{w:.2f}" for w in m.per_user_delay)
    print(f"{scheme}: frames={m.frames} delays=[{delays}] "
          f"sum={m.sum_delay:.2f} I={m.avg_interference:.4f} "
          f"maxI={m.max_slot_interference:.4f} X/K={m.x_over_k:.4g} "
          f"violations={m.inst_violations}+{m.multi_tx_violations} "
          f"fallback={m.fallback_frames} scaled={int(m.admission_scaled)}")


def cmd_run(args) -> int:
    sc = load_scenario(resolve_config_path(args.config))
    cfg = build_config(sc, lam=args.lam, seed=args.seed, policy=args.policy,
                       alpha=args.alpha, horizon=args.horizon,
                       v_weight=args.v_weight)
    trace = [] if args.trace else None
    plans = [] if args.trace else None
    metrics = run(cfg, trace=trace, plan_log=plans)
    _print_summary(cfg.policy, metrics)
    if args.out:
        lam = args.lam if args.lam is not None else float(sc["lam"])
        write_metrics_csv(args.out, [(cfg.policy, lam, cfg.seed, metrics)])
    if args.trace:
        write_trace_csv(args.trace, trace)
        write_plans_csv(args.trace + ".plans.csv", plans)
    return 0


def cmd_sweep(args) -> int:
    sc = load_scenario(resolve_config_path(args.config))
    lam_values = [args.lam] if args.lam is not None else _floats(sc["lam_values"])
    seeds = [args.seed] if args.seed is not None else \
        [int(s) for s in sc["seeds"].split(",")]
    schemes = [s.strip() for s in sc.get("schemes", ",".join(SCHEMES)).split(",")]
    if args.policy:
        schemes = [args.policy]
    if args.horizon is not None:
        sc = dict(sc, horizon=str(args.horizon))

    def make(lam, seed, scheme):
        return scheme_config(sc, scheme, lam, seed)

    rows = sweep(make, lam_values, seeds, schemes, jobs=args.jobs)
    entries = [(r.policy, r.lam, r.seed, r.metrics) for r in rows]
    agg = aggregate(rows)
    for scheme, lam in sorted(agg):
        c = agg[(scheme, lam)]
        print(f"{scheme:10s} lam={lam:<8g} sum_delay={c['sum_delay_mean']:8.2f} "
              f"(se {c['sum_delay_se']:.2f}) I={c['interference_mean']:.4f}")
    if args.out:
        write_metrics_csv(args.out, entries)
        write_aggregate_csv(args.out + ".agg.csv", agg)
    return 0


def _synth_grid_stats(rng: np.random.Generator, n: int, m: int = 16) -> GridStats:
    """Random concave rate curves for optimizer cross-checks (no Monte Carlo),
    scaled so total load at the grid floor is 0.9."""
    pmin = rng.uniform(0.5, 5.0)
    grid = np.geomspace(pmin, pmin * rng.uniform(5.0, 50.0), m)
    a = rng.uniform(0.002, 0.05, (n, 1))
    b = rng.uniform(0.05, 2.0, (n, 1))
    rate = a * np.log1p(b * grid[None, :])
    slots_sq = rng.uniform(1.0, 3.0, (n, 1)) / rate ** 2
    lams = rng.uniform(0.2, 1.2, n) * rate[:, 0]
    lams *= 0.9 / float(np.sum(lams / rate[:, 0]))
    return GridStats(grid=grid, lams=lams, rate=rate, slots_sq=slots_sq,
                     g_mean=rng.uniform(0.05, 0.5, n))


def _random_debts(rng: np.random.Generator, n: int) -> tuple[np.ndarray, float]:
    y = np.exp(rng.uniform(0.0, 8.0, n))
    y[rng.random(n) < 0.2] = 0.0
    x = 0.0 if rng.random() < 0.3 else float(np.exp(rng.uniform(0.0, 6.0)))
    return y, x


def validate_checks(n_dp: int = 60, n_packets: int = 30_000,
                    n_trials: int = 30_000, run_slots: int = 30_000) -> list[tuple[str, bool, str]]:
    """The oracle suites behind `crsched validate`; see the test suite for
    the full-strength versions of each property."""
    results = []

    rng = np.random.Generator(np.random.PCG64(20260816))
    pair_exact = True
    floor_exact = True
    mixed_exact = True
    for _ in range(n_dp):
        gs2 = _synth_grid_stats(rng, 2)
        y, x = _random_debts(rng, 2)
        a, b = doac_opt(gs2, y, x), doac_brute(gs2, y, x)
        pair_exact &= (a.cost == b.cost)
        gs = _synth_grid_stats(rng, int(rng.integers(3, 5)))
        y, _ = _random_debts(rng, gs.n_users)
        a, b = doac_opt(gs, y, 0.0), doac_brute(gs, y, 0.0)
        floor_exact &= (a.cost == b.cost)
        y, x = _random_debts(rng, gs.n_users)
        a, b = doac_opt(gs, y, x), doac_brute(gs, y, x)
        mixed_exact &= ((a.fallback and b.fallback) or a.cost == b.cost)
    results.append(("optimizer-two-user-exact", pair_exact,
                    f"{n_dp} random instances"))
    results.append(("optimizer-no-interference-debt-exact", floor_exact,
                    f"{n_dp} random instances"))
    results.append(("optimizer-mixed-debts-exact", mixed_exact,
                    f"{n_dp} random instances"))

    lams = [0.05, 0.08]
    means = [4.0, 5.0]
    samplers = [lambda r, m=m: r.exponential(m) for m in means]
    moments = [(m, 2.0 * m * m) for m in means]
    rep = priority_formula_report(lams, samplers, moments, n_packets, seed=5)
    detail = "; ".join(f"pred {r['predicted']:.2f} sim {r['simulated']:.2f}"
                       f"+-{r['se']:.2f}" for r in rep["classes"])
    results.append(("priority-queue-formula", rep["ok"], detail))

    bound = service_time_bound_report([0, 1, 2], [0.5, 0.3, 0.2], 5,
                                      n_trials, seed=9)
    results.append(("service-time-stochastic-bound", bool(bound["dominates"]),
                    f"{n_trials} trials"))

    profs = tuple(
        UserProfile(lam=0.02 * (i + 1), delay_bound=150.0 if i < 4 else 50.0,
                    gamma=GainDistribution(1.0, 10.0),
                    g=GainDistribution(gm, 10.0 * gm))
        for i, gm in enumerate([0.1, 0.1, 0.1, 0.1, 0.4]))
    cfg = SimConfig(profiles=profs, packet_length=5.0, i_inst=20.0, i_avg=5.0,
                    p_max=100.0, v_weight=100.0, alpha=0.1, policy="doac",
                    horizon=run_slots, seed=1)
    table = StatsTable(n_samples=20_000, n_trials=4_000)
    m = run(cfg, table)
    ok = (m.inst_violations == 0 and m.multi_tx_violations == 0
          and m.frames > 100)
    results.append(("constrained-run-clean", ok,
                    f"{run_slots} slots, {m.frames} frames, "
                    f"maxI={m.max_slot_interference:.4f}"))
    return results


def cmd_validate(args) -> int:
    rows = validate_checks()
    all_ok = True
    for name, ok, detail in rows:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        all_ok &= ok
    return 0 if all_ok else 2


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="crsched",
        description="Slot simulator and schedulers for the shared uplink")
    sub = parser.add_subparsers(dest="cmd", required=True)

    def add_common(p):
        p.add_argument("--config", required=True,
                       help=f"scenario name or path (also searched in "
                            f"${CONFIG_DIR_ENV} and ./scenarios)")
        p.add_argument("--policy", help="override the policy/scheme")
        p.add_argument("--lambda", dest="lam", type=float,
                       help="override the base arrival rate")
        p.add_argument("--seed", type=int, help="override the seed")
        p.add_argument("--horizon", type=int, help="override the slot horizon")
        p.add_argument("--out", help="write per-run metrics CSV here")

    p_run = sub.add_parser("run", help="one simulation run")
    add_common(p_run)
    p_run.add_argument("--V", dest="v_weight", type=float,
                       help="override the allowance weight")
    p_run.add_argument("--alpha", type=float,
                       help="override the estimate-error level")
    p_run.add_argument("--trace", help="write the slot trace CSV here "
                                       "(plan log goes to <path>.plans.csv)")
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="scheme x lambda x seed grid")
    add_common(p_sweep)
    p_sweep.add_argument("--jobs", type=int, default=1,
                         help="parallel worker processes")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_val = sub.add_parser("validate", help="run the oracle cross-checks")
    p_val.set_defaults(fn=cmd_validate)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except InfeasibleError as e:
        print(f"infeasible scenario: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(str(e), file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
