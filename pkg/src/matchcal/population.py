"""Finite populations: the gamma superpopulation generator and X-total strata."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError, SchemaError


@dataclass(frozen=True)
class HmtParams:
    """Parameters of the gamma regression superpopulation.

    ``E(Y|x) = alpha + beta*x`` and ``Var(Y|x) = sigma2 * x**1.5`` with
    ``X ~ Gamma(shape=x_shape, scale=x_scale)``.
    """

    alpha: float = 0.4
    beta: float = 0.25
    sigma2: float = 0.0625
    x_shape: float = 2.0
    x_scale: float = 5.0
    n_units: int = 100_000

    def validate(self) -> None:
        if not self.sigma2 > 0:
            raise ParameterError(f"sigma2 must be positive, got {self.sigma2}")
        if not self.x_shape > 0:
            raise ParameterError(f"x_shape must be positive, got {self.x_shape}")
        if not self.x_scale > 0:
            raise ParameterError(f"x_scale must be positive, got {self.x_scale}")
        if int(self.n_units) != self.n_units or self.n_units < 1:
            raise ParameterError(f"n_units must be a positive integer, got {self.n_units}")


@dataclass(frozen=True)
class FinitePopulation:
    """N units with covariates ``x`` (N x C), response ``y`` and stratum labels.

    Stratum labels run 1..H. A population built without strata carries a
    single stratum labelled 1.
    """

    x: np.ndarray
    y: np.ndarray
    stratum: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        y = np.asarray(self.y, dtype=float)
        stratum = np.asarray(self.stratum, dtype=np.int64)
        if not (x.shape[0] == y.shape[0] == stratum.shape[0]):
            raise ParameterError(
                f"row counts differ: x={x.shape[0]}, y={y.shape[0]}, stratum={stratum.shape[0]}"
            )
        for arr in (x, y, stratum):
            arr.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "stratum", stratum)

    @property
    def size(self) -> int:
        return self.y.shape[0]

    @property
    def n_strata(self) -> int:
        return int(self.stratum.max()) if self.size else 0

    def stratum_sizes(self) -> np.ndarray:
        return np.bincount(self.stratum, minlength=self.n_strata + 1)[1:]

    @property
    def total_y(self) -> float:
        return float(np.sum(self.y))


def gamma_shape_scale(x, params: HmtParams):
    """Shape and scale of the conditional gamma law of Y given ``x``.

    Shape*scale reproduces the mean ``alpha + beta*x`` and shape*scale**2 the
    variance ``sigma2 * x**1.5``.
    """
    x = np.asarray(x, dtype=float)
    mean = params.alpha + params.beta * x
    var = params.sigma2 * x**1.5
    return mean**2 / var, var / mean


def generate_hmt(params: HmtParams, seed) -> FinitePopulation:
    """Draw a population from the gamma superpopulation.

    The population is unstratified (all labels 1); use
    :func:`stratify_equal_x_total` to form strata.
    """
    params.validate()
    rng = np.random.default_rng(seed)
    x = rng.gamma(params.x_shape, params.x_scale, size=int(params.n_units))
    mean = params.alpha + params.beta * x
    if np.any(mean <= 0):
        raise ParameterError("alpha + beta*x must be positive for every generated x")
    shape, scale = gamma_shape_scale(x, params)
    y = rng.gamma(shape, scale)
    return FinitePopulation(x=x[:, None], y=y, stratum=np.ones(x.shape[0], dtype=np.int64))


def equal_total_cuts(values, n_strata: int) -> np.ndarray:
    """Cut positions for an ascending sequence of nonnegative ``values``.

    Returns ``n_strata - 1`` strictly increasing positions ``c_k`` so that
    stratum k holds sorted units ``c_{k-1} .. c_k - 1``. Each cut is placed
    where the running total is closest to ``k * total / n_strata``.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    cum = np.cumsum(values)
    total = cum[-1]
    cuts = []
    prev = 0
    for k in range(1, n_strata):
        target = k * total / n_strata
        # first position whose running total reaches the target
        pos = int(np.searchsorted(cum, target, side="left"))
        best = pos + 1  # cut after the crossing unit
        if pos >= 1 and abs(cum[pos - 1] - target) <= abs(cum[min(pos, n - 1)] - target):
            best = pos
        # keep every stratum nonempty
        best = max(best, prev + 1)
        best = min(best, n - (n_strata - k))
        cuts.append(best)
        prev = best
    return np.asarray(cuts, dtype=np.int64)


def stratify_equal_x_total(pop: FinitePopulation, n_strata: int, column: int = 0) -> FinitePopulation:
    """Stratify ``pop`` into contiguous ranges of ``x[:, column]`` with equal totals.

    Unit order is preserved; only the stratum labels change. Stratum 1 holds
    the smallest values.
    """
    if int(n_strata) != n_strata or n_strata < 1:
        raise ParameterError(f"n_strata must be a positive integer, got {n_strata}")
    if n_strata > pop.size:
        raise ParameterError(f"n_strata={n_strata} exceeds population size {pop.size}")
    v = pop.x[:, column]
    order = np.argsort(v, kind="stable")
    cuts = equal_total_cuts(v[order], n_strata)
    sorted_labels = np.ones(pop.size, dtype=np.int64)
    for c in cuts:
        sorted_labels[c:] += 1
    labels = np.empty_like(sorted_labels)
    labels[order] = sorted_labels
    return FinitePopulation(x=pop.x, y=pop.y, stratum=labels)


def write_population_csv(pop: FinitePopulation, path) -> None:
    """Write ``x_1..x_C,y,stratum`` with 17 significant digits."""
    n_cov = pop.x.shape[1]
    header = [f"x_{k + 1}" for k in range(n_cov)] + ["y", "stratum"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(pop.size):
            w.writerow([format(v, ".17g") for v in pop.x[i]] + [format(pop.y[i], ".17g"), int(pop.stratum[i])])


def read_population_csv(path) -> FinitePopulation:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        x_cols = [i for i, h in enumerate(header) if h.startswith("x_")]
        if "y" not in header or "stratum" not in header or not x_cols:
            raise SchemaError(f"{path}: header must be x_1..x_C,y,stratum, got {header}")
        iy, ist = header.index("y"), header.index("stratum")
        xs, ys, ss = [], [], []
        for lineno, row in enumerate(reader, start=2):
            try:
                xs.append([float(row[i]) for i in x_cols])
                ys.append(float(row[iy]))
                ss.append(int(row[ist]))
            except (ValueError, IndexError) as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
    return FinitePopulation(x=np.array(xs, dtype=float).reshape(len(ys), len(x_cols)), y=np.array(ys), stratum=np.array(ss))
