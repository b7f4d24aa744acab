import csv
import json
import math

import numpy as np
import pytest

from robust_mpc import cli
from robust_mpc import experiments as ex
from robust_mpc import servo
from robust_mpc.filters import Robust, Standard
from robust_mpc.results import ScenarioResult, mse, settling_time


def test_settling_time_examples():
    r = math.pi / 2
    assert settling_time(np.full(100, r), r) == 0.0
    y = np.zeros(200)
    y[80:] = r
    assert settling_time(y, r, T=0.1) == pytest.approx(8.0)
    y = np.where(np.arange(200) % 2 == 0, r, 0.0)  # last sample outside
    assert settling_time(y, r) is None
    with pytest.raises(ValueError):
        settling_time(y, 0.0)


def test_mse_window_inclusive():
    t = np.arange(0, 30.0, 0.1)
    y = np.zeros_like(t)
    # samples with 0 < t <= 20: 200 of them, each with error 1
    assert mse(y, 1.0, t, 20.0) == pytest.approx(1.0)
    y[0] = 100.0  # t = 0 is outside the window
    y[t > 20.0 + 1e-9] = 100.0
    assert mse(y, 1.0, t, 20.0) == pytest.approx(1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        ex.ScenarioConfig(scenario="other")
    with pytest.raises(ValueError):
        ex.ScenarioConfig(duration=0.0)
    with pytest.raises(ValueError):
        ex.ScenarioConfig(runs=0)
    with pytest.raises(ValueError):
        ex.ScenarioConfig(horizon_pairs=((3, 4),))
    assert ex.ScenarioConfig(scenario="mismatch").steps == 350
    assert ex.ScenarioConfig(scenario="nominal_match").steps == 200


def test_config_round_trip():
    cfg = ex.ScenarioConfig(c_list=(0.2, 0.02), horizon_pairs=((5, 2),), theta_bar=3.0)
    back = ex.ScenarioConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back.to_dict() == cfg.to_dict()


def test_noise_free_nominal_match():
    cfg = ex.ScenarioConfig(scenario="nominal_match", plant_noise=0.0, theta_bar=100.0)
    out = ex.run_scenario(cfg)
    assert not out.failures
    for res in out.results.values():
        assert res.settling_time() is not None
    np.testing.assert_allclose(out.results["S-MPC"].y, out.results["R-MPC"].y, atol=0.02)


def test_mismatch_with_nominal_plant_reduces_to_match():
    cfg = ex.ScenarioConfig(scenario="nominal_match", plant_noise=0.0, duration=5.0, substeps=40)
    plant_params = servo.default_nominal_params()  # nonlinear plant, L = 0, no friction
    a = ex.simulate(cfg, Standard(), None, 0)
    b = ex.simulate(cfg, Standard(), plant_params, 0)
    np.testing.assert_allclose(a.y, b.y, atol=1e-7)


def test_failure_isolated(monkeypatch):
    cfg = ex.ScenarioConfig(scenario="nominal_match", duration=2.0)
    variants = {"S-MPC": Standard(), "R-MPC": Robust(1e10)}
    out = ex.run_scenario(cfg, variants)
    assert "R-MPC" in out.failures and "tolerance out of range" in out.failures["R-MPC"]
    assert "S-MPC" in out.results


def test_paired_noise_across_controllers():
    cfg = ex.ScenarioConfig(scenario="montecarlo", runs=2, duration=3.0, seed=4)
    s = ex.run_montecarlo(cfg)
    rec = next(r for r in s.records if r["controller"] == "R-MPC2")
    params = servo.perturb_params(servo.real_base_params(), cfg.perturbation, np.random.default_rng([rec["seed"], 0]))
    alone = ex.simulate(cfg, Robust(0.01), params, np.random.default_rng([rec["seed"], 1]), "R-MPC2")
    assert alone.mse(cfg.mse_window) == rec["mse"]


def test_montecarlo_deterministic():
    cfg = ex.ScenarioConfig(scenario="montecarlo", runs=3, duration=3.0, seed=9)
    a, b = ex.run_montecarlo(cfg), ex.run_montecarlo(cfg)
    assert a.records == b.records
    assert len(a.samples("S-MPC")) == 3


def test_degenerate_campaign_collapses():
    cfg = ex.ScenarioConfig(scenario="montecarlo", runs=3, duration=3.0, plant_noise=0.0,
                            perturbation=servo.PerturbationSpec(0.0, 0.0, 0.0))
    s = ex.run_montecarlo(cfg)
    for c in s.controllers:
        q25, med, q75 = s.quartiles(c)
        assert q25 == med == q75


def test_minimal_horizons():
    cfg = ex.ScenarioConfig(scenario="horizons", runs=1, duration=2.0, horizon_pairs=((1, 1),))
    out = ex.run_horizons(cfg)
    assert len(out[(1, 1)].samples("S-MPC")) == 1


def test_empty_campaign_header_only(tmp_path):
    s = ex.CampaignSummary(["S-MPC"], [], [], 10, 3)
    ex.write_campaign_csv(s, tmp_path / "c.csv")
    ex.write_summary_csv(s, tmp_path / "s.csv")
    assert (tmp_path / "c.csv").read_text().splitlines() == [",".join(ex.CAMPAIGN_COLUMNS)]
    assert (tmp_path / "s.csv").read_text().splitlines() == [",".join(ex.SUMMARY_COLUMNS)]


def test_export_byte_identical_and_manifest_round_trip(tmp_path):
    cfg = ex.ScenarioConfig(scenario="montecarlo", runs=2, duration=3.0, seed=1)
    ex.export_campaigns({(cfg.Hp, cfg.Hu): ex.run_montecarlo(cfg)}, cfg, tmp_path / "a")
    cfg2, manifest = ex.load_manifest(tmp_path / "a" / "manifest.json")
    ex.export_campaigns({(cfg2.Hp, cfg2.Hu): ex.run_montecarlo(cfg2)}, cfg2, tmp_path / "b")
    for name in ("campaign_Hp10_Hu3.csv", "boxplot_summary_Hp10_Hu3.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert set(ex.variants_from_manifest(manifest)) == {"S-MPC", "R-MPC1", "R-MPC2", "R-MPC3"}


def test_scenario_export(tmp_path):
    cfg = ex.ScenarioConfig(scenario="nominal_match", duration=2.0, theta_bar=50.0)
    paths = ex.export_scenario(ex.run_scenario(cfg), cfg, tmp_path)
    assert {p.name for p in paths} >= {"nominal_match_S-MPC.csv", "manifest.json"}
    rows = list(csv.reader(open(tmp_path / "nominal_match_R-MPC.csv")))
    assert rows[0][:6] == ["t_seconds", "r", "y", "u", "y_hat", "theta"]
    assert len(rows) == 21
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["variants"]["RS-MPC"] == {"kind": "risk_sensitive", "theta_bar": 50.0}


def test_export_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="cannot create output directory"):
        ex.export_campaign(ex.CampaignSummary([], [], [], 1, 1), ex.ScenarioConfig(), blocker / "sub")


def test_result_series_lengths():
    cfg = ex.ScenarioConfig(scenario="nominal_match", duration=1.0)
    res = ex.simulate(cfg, Standard(), None, 0)
    assert isinstance(res, ScenarioResult)
    n = len(res)
    assert res.y.shape[0] == res.u.shape[0] == res.x_hat.shape[0] == res.theta.shape[0] == n == 10


# -- CLI -----------------------------------------------------------------------


def test_cli_simulate(tmp_path, capsys):
    rc = cli.main(["simulate", "--scenario", "nominal", "--duration", "2", "--theta-bar", "50", "--out", str(tmp_path)])
    assert rc == 0
    assert (tmp_path / "nominal_match_outputs.png").stat().st_size > 0
    assert (tmp_path / "nominal_match_RS-MPC.csv").exists()
    assert "S-MPC" in capsys.readouterr().out


def test_cli_montecarlo_and_config_override(tmp_path):
    conf = tmp_path / "conf.json"
    conf.write_text(json.dumps({"runs": 2, "duration": 2.0}))
    rc = cli.main(["montecarlo", "--runs", "5", "--config", str(conf), "--c-list", "0.1,0.01", "--out", str(tmp_path / "o")])
    assert rc == 0
    rows = list(csv.reader(open(tmp_path / "o" / "campaign_Hp10_Hu3.csv")))
    assert len(rows) == 1 + 2 * 3  # config wins over --runs
    assert (tmp_path / "o" / "boxplot_Hp10_Hu3.png").exists()


def test_cli_horizons(tmp_path):
    rc = cli.main(["horizons", "--pairs", "4:2,1:1", "--runs", "1", "--duration", "1", "--no-plots", "--out", str(tmp_path)])
    assert rc == 0
    assert (tmp_path / "campaign_Hp4_Hu2.csv").exists() and (tmp_path / "campaign_Hp1_Hu1.csv").exists()


def test_cli_failures_exit_nonzero(tmp_path, capsys):
    assert cli.main(["simulate", "--c", "1e10", "--duration", "1", "--theta-bar", "1", "--no-plots", "--out", str(tmp_path)]) != 0
    assert cli.main(["montecarlo", "--runs", "0", "--out", str(tmp_path)]) != 0
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli.main(["horizons", "--pairs", "10-8"])
