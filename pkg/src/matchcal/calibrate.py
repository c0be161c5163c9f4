"""Linear (chi-square distance) calibration of survey weights."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, SchemaError, StateError
from .regress import _as_design, solve_normal


@dataclass(frozen=True)
class CalibrationResult:
    weights: np.ndarray
    g_factors: np.ndarray
    target_totals: np.ndarray
    achieved_totals: np.ndarray
    sigma_star2: np.ndarray
    base_weights: np.ndarray
    multiplier: np.ndarray

    @property
    def n_negative(self) -> int:
        return int(np.count_nonzero(self.weights < 0))

    @property
    def max_relative_error(self) -> float:
        gap = np.abs(self.achieved_totals - self.target_totals)
        return float(np.max(gap / (1 + np.abs(self.target_totals))))


def calibrate_weights(base_weights, x, target, sigma2=None) -> CalibrationResult:
    """Calibrate ``base_weights`` so the weighted totals of ``x`` hit ``target``.

    Minimizes the chi-square distance ``sum (w - d)^2 sigma2 / d``. The
    solution is ``w_j = d_j (1 + x_j^T lam / sigma2_j)`` with
    ``lam = (sum d x x^T / sigma2)^-1 (target - sum d x)``. Weights may turn
    negative; ``n_negative`` reports how many did.

    Raises:
        RankError: the weighted cross-product matrix is singular.
    """
    d = np.asarray(base_weights, dtype=float)
    x = _as_design(x)
    target = np.atleast_1d(np.asarray(target, dtype=float))
    n, c = x.shape
    if d.shape != (n,):
        raise ParameterError(f"{d.shape[0]} weights for {n} rows")
    if target.shape != (c,):
        raise ParameterError(f"{target.shape[0]} targets for {c} calibration variables")
    s2 = np.ones(n) if sigma2 is None else np.broadcast_to(np.asarray(sigma2, dtype=float), (n,)).copy()
    if np.any(~(s2 > 0)):
        raise ParameterError("sigma2 values must be positive")
    gap = target - d @ x
    lam = solve_normal(x, d / s2, gap, "calibration")
    g = 1.0 + (x @ lam) / s2
    w = d * g
    return CalibrationResult(
        weights=w,
        g_factors=g,
        target_totals=target,
        achieved_totals=w @ x,
        sigma_star2=s2,
        base_weights=d,
        multiplier=lam,
    )


def greg_gweights(sample, x, target, sigma_tilde2=None) -> CalibrationResult:
    """GREG g-weights for a probability sample; stores ``g/pi`` in ``sample.greg_weight``.

    ``x`` holds the covariate rows of the sampled units, in sample order.
    """
    x = _as_design(x)
    if x.shape[0] != sample.size:
        raise ParameterError(f"x has {x.shape[0]} rows for a sample of {sample.size}")
    result = calibrate_weights(sample.base_weight, x, target, sigma_tilde2)
    sample.greg_weight = result.weights
    return result


def chi_square_calibrate(matched, target, sigma_star2=None) -> CalibrationResult:
    """Calibrate the transferred weights of a matched sample to population totals."""
    if matched.x is None:
        raise StateError("matched sample carries no covariates")
    return calibrate_weights(matched.transferred_weight, matched.x, target, sigma_star2)


def read_targets_csv(path) -> tuple[list[str], np.ndarray]:
    """Read ``name,total`` rows."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "name" not in reader.fieldnames or "total" not in reader.fieldnames:
            raise SchemaError(f"{path}: header must be name,total")
        names, totals = [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                totals.append(float(row["total"]))
            except (TypeError, ValueError):
                raise SchemaError(f"{path}:{lineno}: unparseable total {row['total']!r}") from None
            names.append(row["name"])
    return names, np.array(totals)
