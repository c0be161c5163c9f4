"""Replicated simulation engine and summary metrics."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import MatchcalError, ParameterError, StudyAbortedError
from .estimators import Z95, matched_suite, simple_dr
from .matching import nn_match
from .population import HmtParams, generate_hmt, read_population_csv, stratify_equal_x_total
from .rng import derive
from .sampling import exp_decay_prob, poisson_panel, srs, stsrs
from .variance import ESTIMATOR_VARIANCES

SCHEMA_VERSION = 1
MAX_FAILURE_RATE = 0.01
POINT_KINDS = ("M1", "M2", "MC1", "MC2", "DR1")


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def default_threads() -> int:
    """Worker count from ``MATCHCAL_THREADS``, else 1."""
    raw = os.environ.get("MATCHCAL_THREADS")
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ParameterError(f"MATCHCAL_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ParameterError(f"MATCHCAL_THREADS must be at least 1, got {n}")
    return n


# ---------------------------------------------------------------- config


@dataclass
class StudyConfig:
    """Everything needed to run a simulation study.

    ``population`` is ``{"kind": "hmt", ...HmtParams fields, "n_strata": H}``
    or ``{"kind": "csv", "path": ...}``. ``p_design`` is
    ``{"kind": "stsrs", "sizes": [...]}``. ``panel`` is the same or
    ``{"kind": "poisson", "coef": c, "rate": r, "m": m}``. ``dr_size`` is the
    size of the panel subsample used by the doubly robust estimator (0 turns
    it off). ``variances`` lists ``"EST:dist"`` keys; an empty list selects
    every available pair.
    """

    population: dict = field(default_factory=lambda: {"kind": "hmt", "n_strata": 5})
    p_design: dict = field(default_factory=lambda: {"kind": "stsrs", "sizes": [50] * 5})
    panel: dict = field(default_factory=lambda: {"kind": "stsrs", "sizes": [250] * 5})
    with_replacement: bool = False
    estimators: list = field(default_factory=lambda: list(POINT_KINDS))
    variances: list = field(default_factory=list)
    dr_size: int = 250
    replicates: int = 1000
    seed: int = 20240101
    population_seed: Optional[int] = None
    sigma_tilde2: float = 1.0
    sigma_star2: float = 1.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if int(self.replicates) < 2:
            raise ParameterError(f"need at least 2 replicates, got {self.replicates}")
        for est in self.estimators:
            if est not in POINT_KINDS:
                raise ParameterError(f"unknown estimator {est!r}")
        for key in self.variances:
            est, _, dist = key.partition(":")
            if (est, dist) not in ESTIMATOR_VARIANCES:
                raise ParameterError(f"{key!r} is not a valid estimator:distribution pair")
            if est not in self.estimators:
                raise ParameterError(f"variance {key!r} refers to an estimator that is not run")
        if self.population.get("kind") not in ("hmt", "csv"):
            raise ParameterError(f"population kind must be hmt or csv, got {self.population.get('kind')!r}")
        if self.p_design.get("kind") != "stsrs":
            raise ParameterError("the probability sample design must be stsrs")
        if self.panel.get("kind") not in ("stsrs", "poisson"):
            raise ParameterError(f"panel kind must be stsrs or poisson, got {self.panel.get('kind')!r}")
        if "DR1" in self.estimators and self.dr_size < 2:
            raise ParameterError("dr_size must be at least 2 when DR1 is requested")

    def variance_keys(self) -> list:
        if self.variances:
            return list(self.variances)
        return [f"{e}:{d}" for e, d in ESTIMATOR_VARIANCES if e in self.estimators]

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ParameterError(f"unknown config fields: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "StudyConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


def preset(study: int, **overrides) -> StudyConfig:
    """Built-in configurations. Study 1 draws the panel by stratified SRS,
    study 2 by Poisson sampling with probability decaying in x."""
    if study == 1:
        panel = {"kind": "stsrs", "sizes": [250] * 5}
    elif study == 2:
        panel = {"kind": "poisson", "coef": 0.085, "rate": 0.085, "m": 1250}
    else:
        raise ParameterError(f"no preset for study {study}")
    return StudyConfig(panel=panel, **overrides)


# ---------------------------------------------------------------- summary


@dataclass
class VarianceSummary:
    mean_estimate: float
    rb_empvar_pct: float
    rb_mse_pct: float
    ci95_coverage_pct: float


@dataclass
class EstimatorSummary:
    mean_point: float
    relbias_pct: float
    emp_variance: float
    mse: float
    ratio_to_min_mse: float = float("nan")
    variances: dict = field(default_factory=dict)


def summarize(truth: float, points, variances: Optional[dict] = None) -> EstimatorSummary:
    """Monte Carlo metrics for one estimator.

    ``emp_variance`` uses the ``B-1`` divisor and ``mse`` is the plain mean of
    squared errors. Points that agree to within rounding get an empirical
    variance of exactly 0. A zero empirical variance or MSE leaves the
    matching relative bias undefined (NaN).

    Args:
        truth: the population value being estimated.
        points: the B point estimates.
        variances: name -> B variance estimates.

    Raises:
        ParameterError: truth is zero or fewer than two replicates are given.
    """
    if truth == 0:
        raise ParameterError("relative bias is undefined for a zero true value")
    p = np.asarray(points, dtype=float)
    b = p.shape[0]
    if b < 2:
        raise ParameterError(f"need at least 2 replicates, got {b}")
    mean = float(np.mean(p))
    err = p - truth
    # points equal up to rounding carry no sampling variance
    flat = np.ptp(p) <= 1e-12 * max(1.0, abs(mean))
    empvar = 0.0 if flat else float(np.var(p, ddof=1))
    mse = float(np.mean(err * err))
    out = EstimatorSummary(
        mean_point=mean,
        relbias_pct=100.0 * (mean - truth) / truth,
        emp_variance=empvar,
        mse=mse,
    )
    for name, v in (variances or {}).items():
        v = np.asarray(v, dtype=float)
        if v.shape != p.shape:
            raise ParameterError(f"{name}: {v.shape[0]} variance estimates for {b} points")
        mv = float(np.mean(v))
        # slack of a few ulps so exact estimators with zero variance count as covering
        covered = np.abs(err) <= Z95 * np.sqrt(np.maximum(v, 0.0)) + 1e-12 * abs(truth)
        out.variances[name] = VarianceSummary(
            mean_estimate=mv,
            rb_empvar_pct=100.0 * (mv - empvar) / empvar if empvar > 0 else float("nan"),
            rb_mse_pct=100.0 * (mv - mse) / mse if mse > 0 else float("nan"),
            ci95_coverage_pct=100.0 * float(np.mean(covered)),
        )
    return out


@dataclass
class MonteCarloSummary:
    truth: float
    replicates: int
    estimators: dict
    failures: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    label: str = "total"

    @property
    def n_failed(self) -> int:
        return len(self.failures)

    def to_dict(self) -> dict:
        return _jsonable(
            {
                "schema_version": SCHEMA_VERSION,
                "label": self.label,
                "truth": self.truth,
                "replicates": self.replicates,
                "n_failed": self.n_failed,
                "failures": [[b, msg] for b, msg in self.failures],
                "estimators": {k: asdict(v) for k, v in self.estimators.items()},
                "config": self.config,
            }
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, allow_nan=False) + "\n"

    def point_table(self) -> str:
        """Relative bias, empirical variance, MSE and MSE ratio per estimator."""
        lines = [f"{'Estimator':<10}{'RelBias(%)':>12}{'Var':>14}{'MSE':>14}{'MSE/min':>10}"]
        for k, s in self.estimators.items():
            lines.append(f"{k:<10}{s.relbias_pct:>12.3f}{s.emp_variance:>14.4g}{s.mse:>14.4g}{s.ratio_to_min_mse:>10.3f}")
        return "\n".join(lines)

    def variance_table(self) -> str:
        """RB.Empvar, RB.MSE and CI coverage per variance estimator."""
        lines = [f"{'Estimator':<10}{'Variance':<10}{'RB.Empvar':>11}{'RB.MSE':>10}{'Coverage':>10}"]
        for k, s in self.estimators.items():
            for dist, v in s.variances.items():
                lines.append(
                    f"{k:<10}{dist:<10}{v.rb_empvar_pct:>11.1f}{v.rb_mse_pct:>10.1f}{v.ci95_coverage_pct:>10.1f}"
                )
        return "\n".join(lines)

    def text(self) -> str:
        head = f"{self.label}: truth = {self.truth:.6g}, replicates = {self.replicates}, failed = {self.n_failed}"
        return "\n\n".join([head, self.point_table(), self.variance_table()]) + "\n"


def assemble_summary(truth, points: dict, variances: dict, replicates, failures=(), config=None, label="total") -> MonteCarloSummary:
    """Summaries for every estimator plus the MSE ratio to the smallest MSE.

    ``variances`` is keyed ``"EST:dist"``.
    """
    rows = {}
    for est, pts in points.items():
        mine = {k.partition(":")[2]: v for k, v in variances.items() if k.partition(":")[0] == est}
        rows[est] = summarize(truth, pts, mine)
    min_mse = min(r.mse for r in rows.values())
    for r in rows.values():
        r.ratio_to_min_mse = r.mse / min_mse if min_mse > 0 else float("nan")
    return MonteCarloSummary(
        truth=float(truth),
        replicates=int(replicates),
        estimators=rows,
        failures=list(failures),
        config=config or {},
        label=label,
    )


# ---------------------------------------------------------------- engine


def build_population(config: StudyConfig):
    spec = dict(config.population)
    kind = spec.pop("kind")
    if kind == "csv":
        return read_population_csv(spec["path"])
    n_strata = int(spec.pop("n_strata", 5))
    params = HmtParams(**spec)
    seed = config.population_seed if config.population_seed is not None else derive(config.seed, 0)
    pop = generate_hmt(params, seed)
    return stratify_equal_x_total(pop, n_strata) if n_strata > 1 else pop


def run_replicates(fn: Callable[[int], dict], replicates: int, threads: int = 1) -> tuple[list, list]:
    """Run ``fn(b)`` for every replicate; results are kept in replicate order.

    A replicate raising a library (or numpy linear-algebra) error is recorded
    as a failure. More than 1% failures aborts the study.

    Returns:
        (results, failures) where failed replicates are ``None`` in results.
    """

    def guarded(b):
        try:
            return fn(b), None
        except (MatchcalError, np.linalg.LinAlgError) as exc:
            return None, f"{type(exc).__name__}: {exc}"

    if threads <= 1:
        outcomes = [guarded(b) for b in range(replicates)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(guarded, range(replicates)))
    results = [r for r, _ in outcomes]
    failures = [(b, msg) for b, (_, msg) in enumerate(outcomes) if msg is not None]
    if len(failures) > MAX_FAILURE_RATE * replicates:
        raise StudyAbortedError(
            f"{len(failures)} of {replicates} replicates failed (first: replicate {failures[0][0]}: {failures[0][1]})",
            failures,
        )
    return results, failures


def _panel_draw(config: StudyConfig, pop, seed):
    spec = config.panel
    if spec["kind"] == "stsrs":
        return stsrs(pop, spec["sizes"], seed)
    fn = exp_decay_prob(spec.get("coef", 0.085), spec.get("rate", 0.085))
    return poisson_panel(pop, fn, spec["m"], seed)


def one_replicate(config: StudyConfig, pop, design, target, b: int) -> dict:
    """Draw both samples, match, and estimate for replicate ``b``.

    ``design`` is the calibration design over the population (intercept
    plus covariates).
    """
    rs = derive(config.seed, 1, b)
    sp = stsrs(pop, config.p_design["sizes"], derive(rs, 0))
    panel = _panel_draw(config, pop, derive(rs, 1))
    sk = nn_match(pop.x[sp.unit_ids], pop.x[panel.unit_ids], with_replacement=config.with_replacement)
    wanted = {}
    for key in config.variance_keys():
        est, _, dist = key.partition(":")
        wanted.setdefault(est, []).append(dist)
    reports = matched_suite(
        sk,
        sp,
        design[sp.unit_ids],
        design[panel.unit_ids],
        pop.y[panel.unit_ids],
        target,
        sigma_tilde2=config.sigma_tilde2,
        sigma_star2=config.sigma_star2,
        variances=wanted,
    )
    out = {"points": {}, "variances": {}}
    if "DR1" in config.estimators:
        if panel.size < config.dr_size:
            raise ParameterError(f"panel of {panel.size} is smaller than the DR subsample of {config.dr_size}")
        sub = panel.unit_ids[srs(panel.size, config.dr_size, derive(rs, 2))]
        reports["DR1"] = simple_dr(
            pop.x[sp.unit_ids], sp.base_weight, pop.x[sub], pop.y[sub], design[sub], target, sigma_star2=config.sigma_star2
        )
    for est in config.estimators:
        out["points"][est] = reports[est].total
        for dist, v in reports[est].variances.items():
            out["variances"][f"{est}:{dist}"] = v
    return out


def collect(results: list, estimators, variance_keys) -> tuple[dict, dict]:
    """Stack per-replicate outputs (skipping failures) into arrays."""
    ok = [r for r in results if r is not None]
    points = {e: np.array([r["points"][e] for r in ok]) for e in estimators}
    variances = {k: np.array([r["variances"][k] for r in ok]) for k in variance_keys}
    return points, variances


def run_study(config: StudyConfig, threads: Optional[int] = None, population=None) -> MonteCarloSummary:
    """Run ``config.replicates`` independent replicates and summarize them.

    Replicate ``b`` draws everything from a stream derived from
    ``(config.seed, 1, b)``, so the result does not depend on ``threads``.
    The population is generated once (or passed in) and kept fixed.
    """
    threads = default_threads() if threads is None else int(threads)
    if threads < 1:
        raise ParameterError(f"threads must be at least 1, got {threads}")
    pop = build_population(config) if population is None else population
    design = np.column_stack([np.ones(pop.size), pop.x])
    target = design.sum(axis=0)
    truth = pop.total_y
    results, failures = run_replicates(
        lambda b: one_replicate(config, pop, design, target, b), int(config.replicates), threads
    )
    keys = config.variance_keys()
    points, variances = collect(results, config.estimators, keys)
    return assemble_summary(truth, points, variances, config.replicates, failures, config.to_dict())
