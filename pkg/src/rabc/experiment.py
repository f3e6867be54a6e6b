"""Declarative experiments: config schema, presets, replication runner and persistence."""

from __future__ import annotations

import copy
import functools
import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import distributions as dist
from . import models
from .abc import regression_adjust
from .bsl import default_gamma_prior, rbsl_mh
from .diagnostics import mc_metrics, randomization_location_test
from .distributions import JointPrior, RandomStream
from .errors import AdjustmentError, ConfigurationError, IngestionError, RabcError
from .robust import run_rabc
from .smc import SmcConfig, smc_abc
from .summaries import SUMMARY_LABELS, Partition, build_summary_map

log = logging.getLogger(__name__)

ALGORITHMS = ("abc-smc", "abc-smc-reg", "rabc-laplace", "rabc-spike-slab", "bsl", "rbsl-m", "rbsl-v")
DEFAULT_SUMMARY = {"normal": "mean-var", "gk": "robust-gk", "ma2": "autocov", "stable-sv": "garch-score"}
DEFAULT_PARTITION = {
    "normal": (["mean"], ["variance"]),
    "gk": (["S3"], ["S1", "S2", "S4"]),
    "ma2": (["eta2"], ["eta0", "eta1"]),
    "stable-sv": (["S1"], ["S2", "S3", "S4"]),
}
# Data used when a config names no data source: the model's benchmark design.
DEFAULT_DATA = {
    "normal": {"dgp": "normal", "params": {"theta": 1.0, "sigma": 2.0}, "n": 100},
    "gk": {"dgp": "mixture", "params": {"w": 0.6, "mu1": 1.0, "mu2": 7.0, "var1": 2.0, "var2": 2.0}, "n": 2000},
    "ma2": {"dgp": "sv", "params": {"omega": -0.76, "rho": 0.9, "sigma_v": 0.36}, "n": 1000},
    "stable-sv": {"dgp": "stable-sv", "params": {"theta2": 0.9, "theta3": 0.3, "theta4": 1.7}, "n": 2000},
}
DGP_PARAMS = {
    "normal": ("theta", "sigma"),
    "mixture": ("w", "mu1", "mu2", "var1", "var2"),
    "gk": ("a", "b", "g", "k"),
    "ma2": ("theta1", "theta2"),
    "sv": ("omega", "rho", "sigma_v"),
    "stable-sv": ("theta2", "theta3", "theta4"),
}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class PriorConfig(_Strict):
    kind: Literal["uniform", "gaussian", "laplace", "exponential", "spike_slab"]
    lo: Optional[float] = None
    hi: Optional[float] = None
    mean: Optional[float] = None
    variance: Optional[float] = None
    location: Optional[float] = None
    scale: Optional[float] = None
    p: Optional[float] = None

    def build(self) -> dist.PriorSpec:
        try:
            if self.kind == "uniform":
                return dist.uniform(self.lo, self.hi)
            if self.kind == "gaussian":
                return dist.gaussian(self.mean, self.variance)
            if self.kind == "laplace":
                return dist.laplace(self.location if self.location is not None else 0.0, self.scale)
            if self.kind == "exponential":
                return dist.exponential(scale=self.scale)
            return dist.spike_slab(self.p, self.scale)
        except TypeError as exc:
            raise ConfigurationError(f"missing hyperparameter for {self.kind} prior", "priors") from exc


class PartitionConfig(_Strict):
    psi: List[Union[str, int]]
    phi: List[Union[str, int]] = Field(default_factory=list)


class Settings(_Strict):
    """Algorithm hyperparameters; unused ones are ignored by each algorithm."""

    N: Optional[int] = Field(default=None, ge=4)
    N1: int = Field(default=25000, ge=1000)
    retain_fraction: float = Field(default=0.05, gt=0, le=1)
    m: int = Field(default=50, ge=2)
    iters: int = Field(default=10000, ge=2)
    burnin: int = Field(default=5000, ge=0)
    thin: int = Field(default=5, ge=1)
    lam: float = Field(default=0.125, gt=0, alias="lambda")
    p: float = Field(default=0.5, gt=0, lt=1)
    p_acc_min: float = Field(default=0.01, gt=0, lt=1)
    alpha: float = Field(default=0.5, gt=0, lt=1)
    R_init: int = Field(default=5, ge=1)
    c_moves: float = Field(default=0.01, gt=0, lt=1)
    proposal_scale: float = Field(default=1.0, gt=0)
    init: Union[Literal["prior", "pilot"], List[float]] = "pilot"
    n_perm: int = Field(default=999, ge=999)
    level: float = Field(default=0.95, gt=0, lt=1)

    @model_validator(mode="after")
    def _check(self):
        if self.burnin >= self.iters:
            raise ConfigurationError("must be smaller than iters", "burnin")
        return self


class SyntheticData(_Strict):
    kind: Literal["synthetic"] = "synthetic"
    dgp: Literal["normal", "mixture", "gk", "ma2", "sv", "stable-sv"]
    params: Dict[str, float]
    n: int = Field(ge=8)


class CsvData(_Strict):
    kind: Literal["csv"] = "csv"
    path: str
    column: str


class ExperimentConfig(_Strict):
    name: str = "experiment"
    model: Literal["normal", "gk", "ma2", "stable-sv"]
    model_params: Dict[str, float] = Field(default_factory=dict)
    priors: Optional[List[PriorConfig]] = None
    summary: Optional[Literal["mean-var", "autocov", "robust-gk", "garch-score"]] = None
    partition: Optional[PartitionConfig] = None
    algorithm: Literal["abc-smc", "abc-smc-reg", "rabc-laplace", "rabc-spike-slab", "bsl", "rbsl-m", "rbsl-v"]
    settings: Settings = Field(default_factory=Settings)
    replications: int = Field(default=1, ge=1)
    data: Optional[Union[SyntheticData, CsvData]] = Field(default=None, discriminator="kind")
    theta_star: Optional[List[float]] = None
    seed: int = Field(default=0, ge=0, lt=2**64)
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _fill(self):
        if self.summary is None:
            self.summary = DEFAULT_SUMMARY[self.model]
        labels = SUMMARY_LABELS[self.summary]
        if self.partition is None:
            psi, phi = DEFAULT_PARTITION[self.model] if self.summary == DEFAULT_SUMMARY[self.model] else (list(labels), [])
            self.partition = PartitionConfig(psi=list(psi), phi=list(phi))
        Partition.from_labels(labels, self.partition.psi, self.partition.phi)
        if self.data is None:
            self.data = SyntheticData.model_validate(DEFAULT_DATA[self.model])
        if isinstance(self.data, SyntheticData):
            want = set(DGP_PARAMS[self.data.dgp])
            if set(self.data.params) != want:
                raise ConfigurationError(f"{self.data.dgp} needs exactly {sorted(want)}", "data.params")
        if self.priors is not None and len(self.priors) != len(build_model(self.model, self.model_params).param_names):
            raise ConfigurationError("one entry per model parameter", "priors")
        if self.theta_star is not None and len(self.theta_star) != len(build_model(self.model, self.model_params).param_names):
            raise ConfigurationError("one value per model parameter", "theta_star")
        if self.output_dir is None:
            self.output_dir = str(Path("runs") / self.name)
        return self


def build_model(name: str, params: dict) -> models.Model:
    if name == "normal":
        unknown = set(params) - {"sigma", "prior_variance"}
        if unknown:
            raise ConfigurationError(f"unknown normal model parameters {sorted(unknown)}", "model_params")
        sigma = float(params.get("sigma", 1.0))
        if not sigma > 0:
            raise ConfigurationError("sigma must be positive", "model_params")
        base = models.normal_location_model(float(params.get("prior_variance", 25.0)))
        return models.Model(base.name, base.prior, functools.partial(base.simulate, sigma=sigma))
    if params:
        raise ConfigurationError(f"model {name} takes no fixed parameters", "model_params")
    return models.MODELS[name]()


def _config_error(exc: ValidationError) -> ConfigurationError:
    err = exc.errors()[0]
    loc = ".".join(str(p) for p in err["loc"] if not isinstance(p, int))
    cause = (err.get("ctx") or {}).get("error")
    if isinstance(cause, ConfigurationError):
        field = cause.field if not loc else f"{loc}.{cause.field}" if cause.field else loc
        msg = str(cause).split(": ", 1)[-1] if cause.field else str(cause)
        return ConfigurationError(msg, field)
    return ConfigurationError(err["msg"], loc or "config")


def config_from_dict(raw: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise _config_error(exc) from None


def read_config_dict(path) -> dict:
    """Read a JSON config file without validating it."""
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigurationError(f"no such config file: {path}", "path") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"invalid JSON at line {exc.lineno}: {exc.msg}", "config") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError("top level must be an object", "config")
    return raw


def load_config(path) -> ExperimentConfig:
    """Parse and validate a JSON experiment config, filling defaults."""
    return config_from_dict(read_config_dict(path))


def ingest_returns_csv(path, column: str) -> np.ndarray:
    """Read one numeric column of a headed CSV; rows are numbered from 1 after the header."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or column not in reader.fieldnames:
        raise IngestionError(f"column {column!r} not found; available columns: {reader.fieldnames or []}")
    values = []
    for row_no, row in enumerate(reader, start=1):
        cell = (row.get(column) or "").strip()
        if cell == "":
            raise IngestionError(f"row {row_no}, column {column!r}: blank cell")
        try:
            v = float(cell)
        except ValueError:
            raise IngestionError(f"row {row_no}, column {column!r}: non-numeric value {cell!r}") from None
        if not math.isfinite(v):
            raise IngestionError(f"row {row_no}, column {column!r}: value {cell!r} is not finite")
        values.append(v)
    if not values:
        raise IngestionError("no data rows")
    return np.asarray(values)


def generate_data(data: SyntheticData, rng) -> np.ndarray:
    p, n = data.params, data.n
    if data.dgp == "normal":
        return models.simulate_normal_location(p["theta"], p["sigma"], n, rng)
    if data.dgp == "mixture":
        return models.simulate_gaussian_mixture(models.MixtureParams(**p), n, rng)
    if data.dgp == "gk":
        return models.simulate_gk(models.GkParams(**p), n, rng)
    if data.dgp == "ma2":
        return models.simulate_ma2(p["theta1"], p["theta2"], n, rng)
    if data.dgp == "sv":
        return models.simulate_sv(models.SvParams(**p), n, rng)
    return models.simulate_stable_sv(models.StableSvParams(**p), n, rng)


# --------------------------------------------------------------------------
# presets (desk scale)

PRESETS = {
    "normal-toy": {
        "name": "normal-toy",
        "model": "normal",
        "algorithm": "rabc-spike-slab",
        "settings": {"N1": 100000},
        "replications": 50,
        "data": {"kind": "synthetic", "dgp": "normal", "params": {"theta": 1.0, "sigma": 2.0}, "n": 100},
        "theta_star": [1.0],
        "seed": 1,
    },
    "ma2": {
        "name": "ma2",
        "model": "ma2",
        "algorithm": "rabc-spike-slab",
        "settings": {"N1": 25000, "m": 200, "iters": 3000, "burnin": 1000, "thin": 2},
        "replications": 20,
        "data": {"kind": "synthetic", "dgp": "sv", "params": {"omega": -0.76, "rho": 0.9, "sigma_v": 0.36}, "n": 1000},
        "theta_star": [0.0, 0.0],
        "seed": 2,
    },
    "gnk": {
        "name": "gnk",
        "model": "gk",
        "algorithm": "rabc-spike-slab",
        "settings": {"N1": 25000},
        "replications": 10,
        "data": {
            "kind": "synthetic",
            "dgp": "mixture",
            "params": {"w": 0.6, "mu1": 1.0, "mu2": 7.0, "var1": 2.0, "var2": 2.0},
            "n": 2000,
        },
        "theta_star": [2.3663, 4.1757, 1.7850, 0.1001],
        "seed": 3,
    },
    "stable-sv": {
        "name": "stable-sv",
        "model": "stable-sv",
        "algorithm": "rabc-spike-slab",
        "settings": {"N1": 10000},
        "replications": 2,
        "data": {"kind": "synthetic", "dgp": "stable-sv", "params": {"theta2": 0.9, "theta3": 0.3, "theta4": 1.7}, "n": 2000},
        "theta_star": [0.9, 0.3, 1.7],
        "seed": 4,
    },
}


def merge_config(base: dict, override: dict) -> dict:
    """Recursive dict merge; values in ``override`` win."""
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("params", "data", "partition"):
            out[k] = merge_config(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


# --------------------------------------------------------------------------
# one replication


def _theta_prior(cfg: ExperimentConfig, model: models.Model) -> JointPrior:
    if cfg.priors is None:
        return model.prior
    comps = tuple(pc.build() for pc in cfg.priors)
    return JointPrior(comps, names=model.prior.names, constraint=model.prior.constraint)


def _gamma_prior_spec(cfg: ExperimentConfig, d_eta: int):
    s = cfg.settings
    if cfg.algorithm == "rabc-laplace":
        return [dist.laplace(0.0, s.lam)] * d_eta
    if cfg.algorithm == "rabc-spike-slab":
        return [dist.spike_slab(s.p, s.lam)] * d_eta
    if cfg.algorithm in ("rbsl-m", "rbsl-v"):
        variant = "mean_adjust" if cfg.algorithm == "rbsl-m" else "variance_adjust"
        return list(default_gamma_prior(variant, d_eta).components)
    return []


def run_replication(cfg: ExperimentConfig, rep: int, observed=None) -> dict:
    """Run replication ``rep``; never raises for algorithm failures."""
    stream = RandomStream(cfg.seed).child(rep)
    t0 = time.perf_counter()
    row = {"rep": rep, "status": "ok"}
    try:
        model = build_model(cfg.model, cfg.model_params)
        prior = _theta_prior(cfg, model)
        if isinstance(cfg.data, CsvData):
            y = observed if observed is not None else ingest_returns_csv(cfg.data.path, cfg.data.column)
        else:
            y = generate_data(cfg.data, stream.child(0))
        n = len(y)
        smap = build_summary_map(cfg.summary, y)
        ys = smap(y)
        if not np.all(np.isfinite(ys)):
            raise RabcError("observed summaries are not finite")
        part = Partition.from_labels(smap.labels, cfg.partition.psi, cfg.partition.phi)
        sim = model.simulator(n)
        s = cfg.settings
        smc_cfg = SmcConfig(
            N=s.N, alpha=s.alpha, p_acc_min=s.p_acc_min, R_init=s.R_init, c_moves=s.c_moves,
            proposal_scale=s.proposal_scale,
        )
        algo = cfg.algorithm
        gamma = None
        gamma_labels: list = []
        alg_stream = stream.child(1)
        if algo in ("abc-smc", "abc-smc-reg"):
            smc_cfg = SmcConfig(**{**smc_cfg.__dict__, "N": s.N or 1000})
            ps = smc_abc(prior, sim, smap, ys, smc_cfg, alg_stream)
            row.update(epsilon=ps.epsilon, trace=ps.trace, warning=ps.warning)
            theta = ps.theta
            if algo == "abc-smc-reg":
                try:
                    theta = regression_adjust(ps, ys).theta
                except AdjustmentError as exc:
                    row["warning"] = f"regression adjustment failed, unadjusted draws kept: {exc}"
        elif algo in ("rabc-laplace", "rabc-spike-slab"):
            res = run_rabc(
                prior, sim, smap, part, ys, alg_stream,
                gamma_prior="laplace" if algo == "rabc-laplace" else "spike_slab",
                N1=s.N1, retain_fraction=s.retain_fraction, lam=s.lam, p=s.p, smc=smc_cfg,
            )
            theta, gamma = res.theta_draws, res.gamma_draws
            gamma_labels = [f"gamma_{smap.labels[j]}" for j in part.phi]
            row.update(eps1=res.eps1, eps2=res.eps2_final, trace=res.trace, warning=res.warning)
        else:
            variant = {"bsl": "plain", "rbsl-m": "mean_adjust", "rbsl-v": "variance_adjust"}[algo]
            init = None if s.init == "prior" else (s.init if isinstance(s.init, str) else np.asarray(s.init))
            res = rbsl_mh(variant, prior, None, sim, smap, ys, s.m, s.iters, s.burnin, s.thin, init, alg_stream)
            theta = res.theta
            if variant != "plain":
                gamma = res.gamma
                gamma_labels = [f"gamma_{lab}" for lab in smap.labels]
            row.update(acceptance_rate=res.acceptance_rate, warning=res.warning)
        row["theta"] = theta
        row["gamma"] = gamma
        row["gamma_labels"] = gamma_labels
        if gamma is not None and gamma.shape[1]:
            specs = _gamma_prior_spec(cfg, smap.dim)
            if algo.startswith("rabc"):
                specs = [specs[j] for j in range(len(part.phi))]
            pvals = {}
            for j, lab in enumerate(gamma_labels):
                spec = specs[j]
                pvals[lab] = randomization_location_test(
                    gamma[:, j], lambda k, g, spec=spec: spec.sample(g, k), n_perm=s.n_perm, rng=stream.child(2, j)
                )
            row["pvalues"] = pvals
    except RabcError as exc:
        row["status"] = "failed"
        row["error"] = f"{type(exc).__name__}: {exc}"
        log.error("replication %d failed: %s", rep, exc)
    row["seconds"] = time.perf_counter() - t0
    return row


def _run_rep_job(args):
    raw, rep = args
    return run_replication(ExperimentConfig.model_validate(raw), rep)


# --------------------------------------------------------------------------
# full run and persistence


def run_experiment(cfg: ExperimentConfig, workers: Optional[int] = None, out_dir=None) -> dict:
    """Run every replication, persist draws and the report, return the report.

    Each replication uses substream ``(seed, rep)``, so results are identical
    for any ``workers`` value; only wall-clock time changes.
    """
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    workers = workers or os.cpu_count() or 1
    t0 = time.perf_counter()
    raw = cfg.model_dump(by_alias=True)
    if workers > 1 and cfg.replications > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_rep_job, [(raw, r) for r in range(cfg.replications)]))
    else:
        observed = ingest_returns_csv(cfg.data.path, cfg.data.column) if isinstance(cfg.data, CsvData) else None
        rows = [run_replication(cfg, r, observed) for r in range(cfg.replications)]
    rows.sort(key=lambda r: r["rep"])
    names = list(build_model(cfg.model, cfg.model_params).param_names)
    write_draws(out / "draws.csv", rows, names, key="theta")
    if any(r.get("gamma") is not None for r in rows):
        write_draws(out / "gamma_draws.csv", rows, None, key="gamma")
    report = build_report(cfg, rows, names)
    report["wall_seconds"] = time.perf_counter() - t0
    (out / "report.json").write_text(json.dumps(report, indent=2, default=_json_default) + "\n")
    return report


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def write_draws(path: Path, rows, names, key: str):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rep", "param", "draw_index", "value"])
        for r in rows:
            draws = r.get(key)
            if draws is None or r["status"] != "ok":
                continue
            labels = names if key == "theta" else r["gamma_labels"]
            for j, lab in enumerate(labels):
                for i, v in enumerate(draws[:, j]):
                    w.writerow([r["rep"], lab, i, repr(float(v))])


def read_draws(path) -> dict:
    """Load a draws CSV into ``{rep: {param: array}}`` preserving parameter order."""
    out: dict = {}
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            out.setdefault(int(rec["rep"]), {}).setdefault(rec["param"], []).append(float(rec["value"]))
    return {r: {k: np.asarray(v) for k, v in d.items()} for r, d in out.items()}


def summary_tables(draws: dict, names, theta_star=None, level: float = 0.95) -> dict:
    """Per-replication posterior means/stds plus Monte Carlo metrics when theta_star is known."""
    per_rep = []
    for rep in sorted(draws):
        for name in names:
            v = draws[rep][name]
            per_rep.append({"rep": rep, "param": name, "mean": float(v.mean()), "std": float(v.std()), "n": int(v.size)})
    tables = {"per_replication": per_rep}
    reps = sorted(draws)
    if theta_star is not None and len(reps) >= 2:
        mats = [np.column_stack([draws[r][n] for n in names]) for r in reps]
        metrics = mc_metrics(mats, theta_star, level)
        tables["metrics"] = {
            n: {"coverage": m.coverage, "bias": m.bias, "avg_posterior_std": m.avg_posterior_std}
            for n, m in zip(names, metrics)
        }
    return tables


def build_report(cfg: ExperimentConfig, rows, names) -> dict:
    ok = [r for r in rows if r["status"] == "ok"]
    draws = {r["rep"]: {n: r["theta"][:, j] for j, n in enumerate(names)} for r in ok}
    tables = summary_tables(draws, names, cfg.theta_star, cfg.settings.level)
    reps = []
    for r in rows:
        entry = {k: v for k, v in r.items() if k not in ("theta", "gamma", "gamma_labels")}
        reps.append(entry)
    report = {
        "config": cfg.model_dump(by_alias=True),
        "replications": reps,
        "failed": [r["rep"] for r in rows if r["status"] != "ok"],
        **tables,
    }
    pv = [r["pvalues"] for r in ok if r.get("pvalues")]
    if pv:
        report["rejection_rate_5pct"] = {k: float(np.mean([p[k] < 0.05 for p in pv])) for k in pv[0]}
    return report


def regenerate_report(in_dir) -> dict:
    """Recompute the summary tables from a run directory's persisted draws."""
    in_dir = Path(in_dir)
    try:
        report = json.loads((in_dir / "report.json").read_text())
    except FileNotFoundError as exc:
        raise ConfigurationError(f"no report.json in {in_dir}", "in") from exc
    cfg = config_from_dict(report["config"])
    names = list(build_model(cfg.model, cfg.model_params).param_names)
    draws = read_draws(in_dir / "draws.csv")
    tables = summary_tables(draws, names, cfg.theta_star, cfg.settings.level)
    (in_dir / "summary.json").write_text(json.dumps(tables, indent=2) + "\n")
    return tables


def resolve_seed(cfg_seed: int, cli_seed: Optional[int]) -> int:
    """CLI flag beats the RABC_SEED environment variable, which beats the config."""
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get("RABC_SEED")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigurationError(f"RABC_SEED must be an integer, got {env!r}", "seed") from exc
    return cfg_seed
