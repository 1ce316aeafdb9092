"""Command-line front end: scenario parsing, scheme variants, CSV output."""
import csv
import os

import numpy as np
import pytest

from crsched.cli import (SCHEMES, build_config, build_profiles, load_scenario,
                         main, resolve_config_path, scheme_config,
                         validate_checks, _per_user)

SCENARIO = """\
# five users, one heavy
n_users = 3
lam = 0.01
lam_shape = 1, 1, 4
gamma_mean = 1.0
gamma_max_factor = 1
g_mean = 0.1, 0.1, 0.4
g_max_factor = 1
delay_bound = 150, 150, 40
d_high = 150
packet_length = 5
i_inst = 20
i_avg = 8
p_max = 100
v_weight = 50
alpha = 0.1
horizon = 4000
seed = 7
policy = doac

lam_values = 0.01, 0.02
seeds = 1, 2
schemes = doac, csma
"""


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SCENARIO)
    return str(path)


def test_load_scenario_parses_keys_and_skips_comments(scenario_file):
    sc = load_scenario(scenario_file)
    assert sc["n_users"] == "3"
    assert sc["lam_shape"] == "1, 1, 4"
    assert "#" not in "".join(sc)


def test_load_scenario_rejects_bare_lines(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("n_users\n")
    with pytest.raises(ValueError, match="key = value"):
        load_scenario(str(path))


def test_resolve_path_prefers_literal_then_env_then_scenarios(tmp_path, monkeypatch):
    direct = tmp_path / "direct.cfg"
    direct.write_text("x = 1\n")
    assert resolve_config_path(str(direct)) == str(direct)

    env_dir = tmp_path / "envdir"
    env_dir.mkdir()
    (env_dir / "byname.cfg").write_text("x = 1\n")
    monkeypatch.setenv("CRSCHED_SCENARIOS", str(env_dir))
    assert resolve_config_path("byname") == str(env_dir / "byname.cfg")

    monkeypatch.chdir(tmp_path)
    local = tmp_path / "scenarios"
    local.mkdir()
    (local / "here.cfg").write_text("x = 1\n")
    assert resolve_config_path("here") == os.path.join("scenarios", "here.cfg")

    with pytest.raises(FileNotFoundError):
        resolve_config_path("no-such-scenario")


def test_per_user_broadcasts_single_value():
    assert _per_user({"k": "2.5"}, "k", 3) == [2.5, 2.5, 2.5]
    assert _per_user({"k": "1,2,3"}, "k", 3) == [1.0, 2.0, 3.0]
    assert _per_user({}, "k", 2, default=9.0) == [9.0, 9.0]
    with pytest.raises(KeyError):
        _per_user({}, "k", 2)
    with pytest.raises(ValueError, match="1 or 3"):
        _per_user({"k": "1,2"}, "k", 3)


def test_build_profiles_shapes_and_bounds(scenario_file):
    sc = load_scenario(scenario_file)
    profs = build_profiles(sc, lam=0.01)
    assert [p.lam for p in profs] == pytest.approx([0.01, 0.01, 0.04])
    assert [p.delay_bound for p in profs] == [150.0, 150.0, 40.0]
    # max factor 1 collapses the gain law to a point mass
    assert profs[0].gamma.degenerate and profs[0].gamma.mean == 1.0
    assert profs[2].g.degenerate and profs[2].g.mean == pytest.approx(0.4)


def test_build_config_reads_scalars_and_overrides(scenario_file):
    sc = load_scenario(scenario_file)
    cfg = build_config(sc)
    assert cfg.packet_length == 5.0 and cfg.i_avg == 8.0 and cfg.seed == 7
    assert cfg.alpha == 0.1 and cfg.policy == "doac" and cfg.horizon == 4000
    over = build_config(sc, lam=0.02, seed=11, policy="csma", alpha=0.0,
                        horizon=100, v_weight=9.0)
    assert over.seed == 11 and over.policy == "csma" and over.alpha == 0.0
    assert over.horizon == 100 and over.v_weight == 9.0
    assert over.profiles[2].lam == pytest.approx(0.08)


def test_scheme_config_variants(scenario_file):
    sc = load_scenario(scenario_file)
    base = scheme_config(sc, "doac", lam=0.01, seed=1)
    assert base.alpha == 0.0 and base.policy == "doac"
    assert base.profiles[2].delay_bound == 40.0

    csi = scheme_config(sc, "doac_csi", lam=0.01, seed=1)
    assert csi.alpha == 0.1 and csi.policy == "doac"

    unc = scheme_config(sc, "doac_unc", lam=0.01, seed=1)
    assert unc.alpha == 0.0
    assert unc.profiles[2].delay_bound == 150.0
    assert unc.profiles[0].delay_bound == 150.0

    mw = scheme_config(sc, "maxweight", lam=0.01, seed=1)
    assert mw.policy == "maxweight"

    with pytest.raises(ValueError, match="unknown scheme"):
        scheme_config(sc, "nope", lam=0.01, seed=1)


def test_run_command_writes_metrics_trace_and_plans(scenario_file, tmp_path):
    out = tmp_path / "m.csv"
    trace = tmp_path / "t.csv"
    rc = main(["run", "--config", scenario_file, "--alpha", "0",
               "--horizon", "3000", "--out", str(out), "--trace", str(trace)])
    assert rc == 0

    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    row = rows[0]
    assert row["scheme"] == "doac" and int(row["seed"]) == 7
    assert int(row["inst_violations"]) == 0
    assert float(row["sum_delay"]) > 0
    for col in ("w_1", "w_2", "w_3", "y_over_k_1", "lam_eff_3", "x_over_k"):
        assert col in row

    with open(trace, newline="") as fh:
        trows = list(csv.DictReader(fh))
    assert len(trows) == 3000
    served = {int(r["served_user"]) for r in trows}
    assert served <= {-1, 0, 1, 2} and len(served) > 1
    # the slot trace is fully numeric
    float(trows[0]["interference"]), float(trows[0]["rate"])

    with open(str(trace) + ".plans.csv", newline="") as fh:
        prows = list(csv.DictReader(fh))
    assert prows and prows[0]["kind"] in ("priority", "random", "per_slot")
    assert ";" in prows[0]["powers"] or float(prows[0]["powers"].split(";")[0]) > 0
    np.fromstring(prows[0]["delay_debt"], sep=";")  # parses as numbers


def test_run_exit_codes(tmp_path, scenario_file):
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == 2
    # a load in (1 - eps, 1) has no stable power floor: infeasible, exit 1
    assert main(["run", "--config", scenario_file, "--lambda", "0.13"]) == 1


def test_sweep_writes_rows_and_aggregates(scenario_file, tmp_path, capsys):
    out = tmp_path / "sweep.csv"
    rc = main(["sweep", "--config", scenario_file, "--out", str(out)])
    assert rc == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    # schemes x lam_values x seeds from the scenario file
    assert len(rows) == 2 * 2 * 2
    assert {r["scheme"] for r in rows} == {"doac", "csma"}
    assert {float(r["lam"]) for r in rows} == {0.01, 0.02}

    with open(str(out) + ".agg.csv", newline="") as fh:
        arows = list(csv.DictReader(fh))
    assert len(arows) == 4  # scheme x lam cells
    cell = arows[0]
    assert int(cell["n_seeds"]) == 2
    assert float(cell["sum_delay_se"]) >= 0.0
    assert "w_mean_3" in cell and "w_se_3" in cell
    assert "sum_delay" in capsys.readouterr().out


def test_sweep_single_cell_override(scenario_file, tmp_path):
    out = tmp_path / "cell.csv"
    rc = main(["sweep", "--config", scenario_file, "--policy", "doac",
               "--lambda", "0.01", "--seed", "3", "--out", str(out)])
    assert rc == 0
    with open(out, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and int(rows[0]["seed"]) == 3


def test_reference_scenarios_parse_and_build():
    here = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    for name in ("desk", "tableI"):
        sc = load_scenario(os.path.join(here, "scenarios", name + ".cfg"))
        cfg = build_config(sc)
        assert cfg.n_users == 5
        schemes = [s.strip() for s in sc["schemes"].split(",")]
        assert set(schemes) == set(SCHEMES)
        for scheme in schemes:
            scheme_config(sc, scheme, lam=float(sc["lam"]), seed=1)


def test_validate_checks_pass_at_reduced_size():
    rows = validate_checks(n_dp=8, n_packets=4_000, n_trials=4_000,
                           run_slots=4_000)
    assert [name for name, ok, _ in rows if not ok] == []
    assert len(rows) == 6
