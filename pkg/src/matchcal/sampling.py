"""Probability sampling designs: stratified SRS, SRS and Poisson panels."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ParameterError, SchemaError
from .population import FinitePopulation
from .rng import derive


@dataclass
class DesignSample:
    """Units drawn from a population together with their design information.

    ``greg_weight`` is filled in by :func:`matchcal.calibrate.greg_gweights`
    (or supplied directly when a calibrated weight is already known).
    """

    unit_ids: np.ndarray
    pi: np.ndarray
    stratum: np.ndarray
    greg_weight: Optional[np.ndarray] = None

    def __post_init__(self):
        self.unit_ids = np.asarray(self.unit_ids, dtype=np.int64)
        self.pi = np.asarray(self.pi, dtype=float)
        self.stratum = np.asarray(self.stratum, dtype=np.int64)
        n = self.unit_ids.shape[0]
        if self.pi.shape != (n,) or self.stratum.shape != (n,):
            raise ParameterError("unit_ids, pi and stratum must have equal length")
        if np.any(~(self.pi > 0)) or np.any(self.pi > 1):
            raise ParameterError("inclusion probabilities must lie in (0, 1]")
        if np.unique(self.unit_ids).shape[0] != n:
            raise ParameterError("unit_ids must be unique within a sample")
        if self.greg_weight is not None:
            self.greg_weight = np.asarray(self.greg_weight, dtype=float)

    @property
    def size(self) -> int:
        return self.unit_ids.shape[0]

    @property
    def base_weight(self) -> np.ndarray:
        return 1.0 / self.pi

    @property
    def g_factors(self) -> Optional[np.ndarray]:
        if self.greg_weight is None:
            return None
        return self.greg_weight * self.pi


def srs(n_from: int, n_draw: int, seed) -> np.ndarray:
    """Simple random sample of ``n_draw`` distinct indices out of ``range(n_from)``.

    Indices are returned in the order drawn.
    """
    if n_draw < 0 or n_from < 0:
        raise ParameterError("sizes must be nonnegative")
    if n_draw > n_from:
        raise ParameterError(f"cannot draw {n_draw} units without replacement from {n_from}")
    rng = np.random.default_rng(seed)
    return rng.choice(n_from, size=n_draw, replace=False, shuffle=True).astype(np.int64)


def stsrs(pop: FinitePopulation, sizes_per_stratum, seed) -> DesignSample:
    """Stratified simple random sampling without replacement.

    ``sizes_per_stratum[h-1]`` units are drawn from stratum ``h``. Each
    stratum gets its own child stream of ``seed``, so a stratum's draw
    depends only on the seed and that stratum's membership. Unit ids are
    returned sorted within the sample.
    """
    sizes = np.asarray(sizes_per_stratum, dtype=np.int64)
    counts = pop.stratum_sizes()
    if sizes.shape[0] != counts.shape[0]:
        raise ParameterError(f"got {sizes.shape[0]} stratum sizes for {counts.shape[0]} strata")
    if np.any(sizes < 0):
        raise ParameterError("stratum sample sizes must be nonnegative")
    over = np.nonzero(sizes > counts)[0]
    if over.size:
        h = int(over[0])
        raise ParameterError(f"stratum {h + 1}: sample size {sizes[h]} exceeds stratum size {counts[h]}")
    ids, pis, labels = [], [], []
    for h in range(sizes.shape[0]):
        members = np.flatnonzero(pop.stratum == h + 1)
        rng = np.random.default_rng(derive(seed, h))
        chosen = members[rng.choice(members.shape[0], size=int(sizes[h]), replace=False)]
        ids.append(chosen)
        pis.append(np.full(chosen.shape[0], sizes[h] / counts[h]))
        labels.append(np.full(chosen.shape[0], h + 1))
    ids = np.concatenate(ids)
    order = np.argsort(ids, kind="stable")
    return DesignSample(
        unit_ids=ids[order],
        pi=np.concatenate(pis)[order],
        stratum=np.concatenate(labels)[order],
    )


def exp_decay_prob(coef: float = 0.085, rate: float = 0.085) -> Callable[[np.ndarray], np.ndarray]:
    """Raw panel propensity ``coef * exp(-rate * x)`` on the first covariate."""

    def fn(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:
            x = x[:, 0]
        return coef * np.exp(-rate * x)

    return fn


def normalized_poisson_probs(raw, target_size: float) -> np.ndarray:
    """Scale raw probabilities to sum to ``target_size``; values above 1 are clamped."""
    raw = np.asarray(raw, dtype=float)
    if target_size <= 0:
        raise ParameterError(f"target size must be positive, got {target_size}")
    if np.any(raw < 0) or not np.all(np.isfinite(raw)):
        raise ParameterError("raw selection probabilities must be finite and nonnegative")
    total = raw.sum()
    if total <= 0:
        raise ParameterError("raw selection probabilities sum to zero")
    p = target_size * raw / total
    n_over = int(np.count_nonzero(p > 1))
    if n_over:
        warnings.warn(f"{n_over} normalized inclusion probabilities exceeded 1 and were clamped", RuntimeWarning, stacklevel=3)
        p = np.minimum(p, 1.0)
    return p


def poisson_panel(pop: FinitePopulation, raw_prob_fn, target_size: float, seed) -> DesignSample:
    """Poisson sample with probabilities ``m * p_i / sum(p)`` for ``p = raw_prob_fn(x)``."""
    p = normalized_poisson_probs(raw_prob_fn(pop.x), target_size)
    rng = np.random.default_rng(seed)
    take = rng.random(pop.size) < p
    ids = np.flatnonzero(take)
    return DesignSample(unit_ids=ids, pi=p[ids], stratum=pop.stratum[ids])


def write_sample_csv(sample: DesignSample, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["unit_id", "pi", "weight", "stratum"])
        weight = sample.greg_weight if sample.greg_weight is not None else sample.base_weight
        for i in range(sample.size):
            w.writerow([int(sample.unit_ids[i]), format(sample.pi[i], ".17g"), format(weight[i], ".17g"), int(sample.stratum[i])])


def read_sample_csv(path) -> DesignSample:
    """Read ``unit_id,pi,weight,stratum``; a weight differing from 1/pi is kept as the GREG weight."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    try:
        ids = np.array([int(r["unit_id"]) for r in rows], dtype=np.int64)
        pi = np.array([float(r["pi"]) for r in rows])
        weight = np.array([float(r["weight"]) for r in rows])
        stratum = np.array([int(r["stratum"]) for r in rows], dtype=np.int64)
    except (KeyError, ValueError) as exc:
        raise SchemaError(f"{path}: {exc}") from None
    greg = None if np.allclose(weight * pi, 1.0, rtol=1e-15, atol=0) else weight
    return DesignSample(unit_ids=ids, pi=pi, stratum=stratum, greg_weight=greg)

