"""Servomechanism studies: matched and mismatched plants, Monte Carlo over
the tolerance, and the horizon comparison.

Every run is reproducible from the master seed. Within one Monte Carlo run
all controllers see the same perturbed plant and the same noise sequence.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import servo
from .filters import (
    FilterState,
    FilterVariant,
    Robust,
    RiskSensitive,
    Standard,
    steady_state,
    variant_from_dict,
    variant_to_dict,
)
from .model import LinearModel
from .mpc import ClosedLoopError, LinearPlant, MpcConfig, build_predictor, closed_loop
from .results import ScenarioResult

log = logging.getLogger(__name__)

SCENARIOS = ("nominal_match", "mismatch", "montecarlo", "horizons")
DEFAULT_DURATION = {"nominal_match": 20.0, "mismatch": 35.0, "montecarlo": 20.0, "horizons": 20.0}
THETA_SETTLE_TOL = 1e-8


@dataclass
class ScenarioConfig:
    """Everything needed to reproduce a study.

    Output and input weights act on normalized signals: the load angle is
    divided by ``output_scale`` and the voltage by ``input_scale`` before
    ``Q`` and ``R`` are applied.
    """

    scenario: str = "mismatch"
    reference: float = math.pi / 2
    duration: float | None = None
    T: float = 0.1
    Hp: int = 10
    Hu: int = 3
    Q: float = 0.1
    R: float = 0.1
    output_scale: float = 2 * math.pi
    input_scale: float = 1500.0
    theta_convention: str = "held_input"
    cost: str = "input"
    c: float = 0.1
    theta_bar: float | None = None
    c_list: tuple[float, ...] = (0.1, 0.01, 0.001)
    accel_std: float = 0.03
    meas_std: float = 0.0025
    plant_noise: float = 1.0
    substeps: int = 10
    mse_window: float = 20.0
    band: float = 0.05
    seed: int = 0
    runs: int = 50
    horizon_pairs: tuple[tuple[int, int], ...] = ((10, 8), (15, 3))
    perturbation: servo.PerturbationSpec = field(default_factory=servo.PerturbationSpec)
    workers: int = 1

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.duration is not None and not self.duration > 0:
            raise ValueError("duration must be positive")
        if self.runs < 1:
            raise ValueError("run count must be at least 1")
        self.c_list = tuple(float(c) for c in self.c_list)
        self.horizon_pairs = tuple((int(a), int(b)) for a, b in self.horizon_pairs)
        for hp, hu in self.horizon_pairs:
            if not 1 <= hu <= hp:
                raise ValueError(f"invalid horizon pair Hp={hp}, Hu={hu}")
        if isinstance(self.perturbation, dict):
            self.perturbation = servo.PerturbationSpec.from_dict(self.perturbation)

    @property
    def steps(self) -> int:
        dur = self.duration if self.duration is not None else DEFAULT_DURATION[self.scenario]
        return int(round(dur / self.T))

    def mpc_config(self, Hp: int | None = None, Hu: int | None = None) -> MpcConfig:
        return MpcConfig(
            Hp or self.Hp,
            Hu or self.Hu,
            self.Q / self.output_scale**2,
            self.R / self.input_scale**2,
            self.theta_convention,
            self.cost,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["c_list"] = list(self.c_list)
        d["horizon_pairs"] = [list(p) for p in self.horizon_pairs]
        d.pop("workers")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if "perturbation" in d and isinstance(d["perturbation"], dict):
            d["perturbation"] = servo.PerturbationSpec.from_dict(d["perturbation"])
        return cls(**d)


def nominal_model(cfg: ScenarioConfig) -> LinearModel:
    return servo.nominal_linear_model(accel_std=cfg.accel_std, meas_std=cfg.meas_std, T=cfg.T)


def initial_filter_state(model: LinearModel) -> FilterState:
    return FilterState.initial(np.zeros(model.n), servo.initial_covariance(model), model.p)


def make_plant(cfg: ScenarioConfig, params: servo.ServoParams | None, rng: np.random.Generator):
    """Linear nominal plant when ``params`` is None, the nonlinear plant otherwise."""
    if params is None:
        model = nominal_model(cfg)
        return LinearPlant(model, np.zeros(model.n), rng, noise_scale=cfg.plant_noise)
    return servo.ServoPlant(
        params,
        rng,
        T=cfg.T,
        substeps=cfg.substeps,
        accel_std=cfg.accel_std * cfg.plant_noise,
        meas_std=cfg.meas_std * cfg.plant_noise,
    )


def simulate(cfg: ScenarioConfig, variant: FilterVariant, params, seed, label: str = "",
             Hp: int | None = None, Hu: int | None = None, steps: int | None = None) -> ScenarioResult:
    model = nominal_model(cfg)
    mcfg = cfg.mpc_config(Hp, Hu)
    n_steps = steps if steps is not None else cfg.steps
    refs = np.full(n_steps + mcfg.Hp + 1, cfg.reference)
    plant = make_plant(cfg, params, np.random.default_rng(seed))
    res = closed_loop(plant, model, mcfg, variant, refs, n_steps, initial_filter_state(model), T=cfg.T, label=label)
    res.seed = seed if isinstance(seed, int) else None
    return res


def derive_theta_bar(cfg: ScenarioConfig, c: float | None = None) -> float:
    """Steady-state ``theta`` of R-MPC on the nominal-parameter nonlinear plant.

    The last-step value is used when it has settled to ``1e-8``; otherwise
    the covariance recursion is iterated to its fixed point.
    """
    c = cfg.c if c is None else c
    params = servo.real_base_params()
    res = simulate(replace(cfg, scenario="mismatch", duration=None), Robust(c), params, cfg.seed)
    th = res.theta
    if len(th) > 1 and abs(th[-1] - th[-2]) < THETA_SETTLE_TOL:
        return float(th[-1])
    model = nominal_model(cfg)
    ss = steady_state(model, Robust(c), servo.initial_covariance(model))
    return float(ss.theta)


def scenario_variants(cfg: ScenarioConfig) -> dict[str, FilterVariant]:
    theta_bar = cfg.theta_bar if cfg.theta_bar is not None else derive_theta_bar(cfg)
    return {"S-MPC": Standard(), "R-MPC": Robust(cfg.c), "RS-MPC": RiskSensitive(theta_bar)}


@dataclass
class ScenarioOutcome:
    results: dict[str, ScenarioResult]
    failures: dict[str, str]
    variants: dict[str, FilterVariant]


def run_scenario(cfg: ScenarioConfig, variants: dict[str, FilterVariant] | None = None) -> ScenarioOutcome:
    """Run S-MPC, R-MPC and RS-MPC on the matched or mismatched plant.

    A controller whose run fails is reported in ``failures``; the others
    still complete.
    """
    if cfg.scenario not in ("nominal_match", "mismatch"):
        raise ValueError(f"run_scenario handles nominal_match and mismatch, not {cfg.scenario!r}")
    params = None if cfg.scenario == "nominal_match" else servo.default_real_params()
    variants = variants if variants is not None else scenario_variants(cfg)
    results, failures = {}, {}
    for label, v in variants.items():
        try:
            results[label] = simulate(cfg, v, params, cfg.seed, label)
        except (ClosedLoopError, servo.DivergenceError) as exc:
            log.warning("%s failed: %s", label, exc)
            failures[label] = str(exc)
    return ScenarioOutcome(results, failures, dict(variants))


# -- Monte Carlo --------------------------------------------------------------


def campaign_variants(c_list) -> dict[str, FilterVariant]:
    out: dict[str, FilterVariant] = {"S-MPC": Standard()}
    for i, c in enumerate(c_list, 1):
        out[f"R-MPC{i}"] = Robust(c)
    return out


def run_seeds(master_seed: int, runs: int) -> list[int]:
    children = np.random.SeedSequence(master_seed).spawn(runs)
    return [int(ch.generate_state(1)[0]) for ch in children]


@dataclass
class CampaignSummary:
    controllers: list[str]
    records: list[dict]
    failures: list[dict]
    Hp: int
    Hu: int

    def samples(self, controller: str, metric: str = "mse") -> np.ndarray:
        return np.array([r[metric] for r in self.records if r["controller"] == controller], dtype=float)

    def quartiles(self, controller: str, metric: str = "mse") -> tuple[float, float, float]:
        s = self.samples(controller, metric)
        if s.size == 0:
            return (math.nan, math.nan, math.nan)
        q = np.percentile(s, [25, 50, 75])
        return float(q[0]), float(q[1]), float(q[2])

    def median(self, controller: str, metric: str = "mse") -> float:
        return self.quartiles(controller, metric)[1]


def _one_run(args):
    cfg, k, seed, Hp, Hu = args
    params = servo.perturb_params(servo.real_base_params(), cfg.perturbation, np.random.default_rng([seed, 0]))
    recs, fails = [], []
    for label, v in campaign_variants(cfg.c_list).items():
        try:
            res = simulate(cfg, v, params, np.random.default_rng([seed, 1]), label, Hp, Hu)
        except (ClosedLoopError, servo.DivergenceError) as exc:
            fails.append({"controller": label, "run": k, "seed": seed, "error": str(exc)})
            continue
        m = res.metrics(cfg.mse_window, cfg.band)
        recs.append({"controller": label, "run": k, "seed": seed, **m})
    return recs, fails


def run_montecarlo(cfg: ScenarioConfig, Hp: int | None = None, Hu: int | None = None) -> CampaignSummary:
    """Simulate every controller on ``cfg.runs`` randomly perturbed plants."""
    Hp, Hu = Hp or cfg.Hp, Hu or cfg.Hu
    seeds = run_seeds(cfg.seed, cfg.runs)
    jobs = [(cfg, k, s, Hp, Hu) for k, s in enumerate(seeds)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as ex:
            outs = list(ex.map(_one_run, jobs))
    else:
        outs = [_one_run(j) for j in jobs]
    records = [r for recs, _ in outs for r in recs]
    failures = [f for _, fails in outs for f in fails]
    if failures:
        log.warning("%d controller runs failed and were excluded", len(failures))
    return CampaignSummary(list(campaign_variants(cfg.c_list)), records, failures, Hp, Hu)


def run_horizons(cfg: ScenarioConfig, pairs=None) -> dict[tuple[int, int], CampaignSummary]:
    pairs = pairs if pairs is not None else cfg.horizon_pairs
    return {(hp, hu): run_montecarlo(cfg, hp, hu) for hp, hu in pairs}


# -- export -------------------------------------------------------------------

CAMPAIGN_COLUMNS = ["controller", "run", "seed", "mse", "settling_time", "input_energy"]
SUMMARY_COLUMNS = ["controller", "n", "q25", "median", "q75", "median_input_energy"]


def _fmt(v) -> str:
    if v is None:
        return "not settled"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _ensure_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc}") from exc
    return path


def write_campaign_csv(summary: CampaignSummary, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CAMPAIGN_COLUMNS)
        for r in summary.records:
            w.writerow([_fmt(r[k]) for k in CAMPAIGN_COLUMNS])


def write_summary_csv(summary: CampaignSummary, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for c in summary.controllers:
            n = summary.samples(c).size
            if n == 0:
                continue
            q25, med, q75 = summary.quartiles(c)
            w.writerow([c, n, repr(q25), repr(med), repr(q75), repr(summary.median(c, "input_energy"))])


def write_manifest(cfg: ScenarioConfig, path, extra: dict | None = None) -> dict:
    manifest = {"config": cfg.to_dict()}
    if extra:
        manifest.update(extra)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def load_manifest(path) -> tuple[ScenarioConfig, dict]:
    with open(path) as fh:
        manifest = json.load(fh)
    return ScenarioConfig.from_dict(manifest["config"]), manifest


def export_scenario(outcome: ScenarioOutcome, cfg: ScenarioConfig, out) -> list[Path]:
    out = _ensure_dir(out)
    C = nominal_model(cfg).C
    written = []
    for label, res in outcome.results.items():
        p = out / f"{cfg.scenario}_{label}.csv"
        res.to_csv(p, C)
        written.append(p)
    metrics = {k: r.metrics(cfg.mse_window, cfg.band) for k, r in outcome.results.items()}
    extra = {
        "variants": {k: variant_to_dict(v) for k, v in outcome.variants.items()},
        "metrics": metrics,
        "failures": outcome.failures,
    }
    p = out / "manifest.json"
    write_manifest(cfg, p, extra)
    written.append(p)
    return written


def export_campaign(summary: CampaignSummary, cfg: ScenarioConfig, out, tag: str = "") -> list[Path]:
    out = _ensure_dir(out)
    suffix = f"_{tag}" if tag else ""
    p1 = out / f"campaign{suffix}.csv"
    p2 = out / f"boxplot_summary{suffix}.csv"
    write_campaign_csv(summary, p1)
    write_summary_csv(summary, p2)
    return [p1, p2]


def export_campaigns(campaigns: dict, cfg: ScenarioConfig, out) -> list[Path]:
    """Write one campaign/summary pair per entry plus a shared manifest."""
    out = _ensure_dir(out)
    written = []
    for key, summary in campaigns.items():
        tag = f"Hp{key[0]}_Hu{key[1]}" if isinstance(key, tuple) else str(key)
        written += export_campaign(summary, cfg, out, tag)
    extra = {
        "run_seeds": run_seeds(cfg.seed, cfg.runs),
        "variants": {k: variant_to_dict(v) for k, v in campaign_variants(cfg.c_list).items()},
        "failures": sum((s.failures for s in campaigns.values()), []),
    }
    p = out / "manifest.json"
    write_manifest(cfg, p, extra)
    written.append(p)
    return written


def variants_from_manifest(manifest: dict) -> dict[str, FilterVariant]:
    return {k: variant_from_dict(v) for k, v in manifest.get("variants", {}).items()}
