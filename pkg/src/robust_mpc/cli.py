"""Command line entry point: ``simulate``, ``montecarlo`` and ``horizons``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments as ex
from . import plotting
from .filters import FilterError
from .mpc import ClosedLoopError
from .servo import DivergenceError

SCENARIO_ALIASES = {"nominal": "nominal_match", "nominal_match": "nominal_match", "mismatch": "mismatch"}


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}")


def _pairs(text: str) -> tuple[tuple[int, int], ...]:
    out = []
    for item in text.split(","):
        try:
            hp, hu = item.split(":")
            out.append((int(hp), int(hu)))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected Hp:Hu pairs like 10:8,15:3, got {item!r}")
    return tuple(out)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    p.add_argument("--config", type=Path, help="JSON file whose keys override any flag")
    p.add_argument("--Hp", type=int, help="prediction horizon")
    p.add_argument("--Hu", type=int, help="control horizon")
    p.add_argument("--duration", type=float, help="simulated time in seconds")
    p.add_argument("--accel-std", type=float, help="acceleration noise std on both shafts")
    p.add_argument("--meas-std", type=float, help="load angle measurement noise std [rad]")
    p.add_argument("--plant-noise", type=float, help="multiplier on plant noise, 0 for deterministic runs")
    p.add_argument("--no-plots", action="store_true", help="skip PNG figures")


def _campaign(p: argparse.ArgumentParser) -> None:
    p.add_argument("--runs", type=int, help="Monte Carlo runs (default 50)")
    p.add_argument("--c-list", type=_floats, help="robust tolerances, e.g. 0.1,0.01,0.001")
    p.add_argument("--workers", type=int, help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robust-mpc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="matched or mismatched plant, one run per controller")
    sim.add_argument("--scenario", choices=sorted(SCENARIO_ALIASES), default="mismatch")
    sim.add_argument("--c", type=float, help="R-MPC tolerance (default 0.1)")
    sim.add_argument("--theta-bar", type=float, help="RS-MPC risk parameter (default: derived from R-MPC)")
    _common(sim)

    mc = sub.add_parser("montecarlo", help="campaign over perturbed plants")
    _campaign(mc)
    _common(mc)

    hz = sub.add_parser("horizons", help="Monte Carlo campaign per horizon pair")
    hz.add_argument("--pairs", type=_pairs, help="Hp:Hu pairs, default 10:8,15:3")
    _campaign(hz)
    _common(hz)
    return parser


FLAG_KEYS = {
    "seed": "seed",
    "Hp": "Hp",
    "Hu": "Hu",
    "duration": "duration",
    "accel_std": "accel_std",
    "meas_std": "meas_std",
    "plant_noise": "plant_noise",
    "c": "c",
    "theta_bar": "theta_bar",
    "runs": "runs",
    "c_list": "c_list",
    "workers": "workers",
    "pairs": "horizon_pairs",
}


def config_from_args(args: argparse.Namespace) -> ex.ScenarioConfig:
    scenario = {"simulate": None, "montecarlo": "montecarlo", "horizons": "horizons"}[args.command]
    d = {"scenario": scenario or SCENARIO_ALIASES[args.scenario]}
    for attr, key in FLAG_KEYS.items():
        v = getattr(args, attr, None)
        if v is not None:
            d[key] = v
    if args.config is not None:
        with open(args.config) as fh:
            over = json.load(fh)
        if "config" in over:  # a manifest written by a previous run
            over = over["config"]
        d.update(over)
    if "scenario" in d:
        d["scenario"] = SCENARIO_ALIASES.get(d["scenario"], d["scenario"])
    return ex.ScenarioConfig.from_dict(d)


def _simulate(cfg: ex.ScenarioConfig, out: Path, plots: bool) -> int:
    outcome = ex.run_scenario(cfg)
    ex.export_scenario(outcome, cfg, out)
    if plots and outcome.results:
        plotting.plot_outputs(outcome.results, out / f"{cfg.scenario}_outputs.png", cfg.band)
        plotting.plot_inputs(outcome.results, out / f"{cfg.scenario}_inputs.png")
    for label, res in outcome.results.items():
        m = res.metrics(cfg.mse_window, cfg.band)
        ts = "not settled" if m["settling_time"] is None else f"{m['settling_time']:.1f} s"
        print(f"{label:8s} mse={m['mse']:.5f} settling={ts} energy={m['input_energy']:.4g}")
    for label, msg in outcome.failures.items():
        print(f"{label:8s} FAILED: {msg}", file=sys.stderr)
    return 1 if outcome.failures else 0


def _report(summary: ex.CampaignSummary, tag: str) -> None:
    print(f"[{tag}] Hp={summary.Hp} Hu={summary.Hu}")
    for c in summary.controllers:
        q25, med, q75 = summary.quartiles(c)
        print(f"  {c:8s} n={summary.samples(c).size} median={med:.5f} iqr=({q25:.5f}, {q75:.5f})")
    if summary.failures:
        print(f"  {len(summary.failures)} runs failed and were excluded", file=sys.stderr)


def _campaigns(cfg: ex.ScenarioConfig, out: Path, plots: bool) -> int:
    if cfg.scenario == "montecarlo":
        campaigns = {(cfg.Hp, cfg.Hu): ex.run_montecarlo(cfg)}
    else:
        campaigns = ex.run_horizons(cfg)
    ex.export_campaigns(campaigns, cfg, out)
    for (hp, hu), s in campaigns.items():
        tag = f"Hp{hp}_Hu{hu}"
        _report(s, tag)
        if plots:
            plotting.plot_boxplot(s, out / f"boxplot_{tag}.png", f"Hp = {hp}, Hu = {hu}")
    return 1 if any(s.failures for s in campaigns.values()) else 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        if args.command == "simulate":
            return _simulate(cfg, args.out, not args.no_plots)
        return _campaigns(cfg, args.out, not args.no_plots)
    except (ValueError, TypeError, OSError, FilterError, ClosedLoopError, DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
