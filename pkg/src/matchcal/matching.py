"""Nearest-neighbour and propensity-score matching with weight transfer."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import FitError, InfeasibleError, ParameterError, StateError
from .regress import logistic_irls


@dataclass(frozen=True)
class MatchSkeleton:
    """Pairing of target rows to pool rows, one pair per target row in target order."""

    p_index: np.ndarray
    np_index: np.ndarray
    distance: np.ndarray
    scores: Optional[tuple] = None  # (target scores, pool scores) for propensity matches

    @property
    def size(self) -> int:
        return self.p_index.shape[0]


@dataclass(frozen=True)
class MatchedSample:
    """The matched nonprobability sample with weights donated by its partners.

    Row ``j`` is the panel unit paired with donor row ``p_index[j]``.
    ``donor_g`` holds the donor GREG g-factor when one exists.
    """

    p_index: np.ndarray
    np_index: np.ndarray
    transferred_weight: np.ndarray
    transferred_pi: np.ndarray
    y: Optional[np.ndarray]
    x: Optional[np.ndarray]
    distance: np.ndarray
    weight_kind: str
    donor_g: Optional[np.ndarray] = None
    p_ids: Optional[np.ndarray] = None
    np_ids: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.p_index.shape[0]

    @property
    def pairs(self) -> np.ndarray:
        return np.column_stack([self.p_index, self.np_index])

    def with_values(self, y=None, x=None) -> "MatchedSample":
        """Copy with replaced response and/or covariates (rows in pair order)."""
        from dataclasses import replace

        return replace(
            self,
            y=self.y if y is None else np.asarray(y, dtype=float),
            x=self.x if x is None else _as_matrix(x),
        )


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def standardize_pooled(target_x, pool_x):
    """Z-score each column using the mean and SD of target and pool combined."""
    both = np.vstack([target_x, pool_x])
    mu = both.mean(axis=0)
    sd = both.std(axis=0)
    sd[sd == 0] = 1.0
    return (target_x - mu) / sd, (pool_x - mu) / sd


def _sq_dist(row, pool):
    diff = pool - row
    return np.einsum("ij,ij->i", diff, diff)


def nn_match(
    target_x,
    pool_x,
    with_replacement: bool = False,
    standardize: Optional[bool] = None,
    order: str = "sequential",
    seed=None,
    tie_tol: float = 0.0,
) -> MatchSkeleton:
    """Single nearest-neighbour matching on Euclidean distance.

    Without replacement, target rows are processed in ``order`` ("sequential"
    is target-row order; "random" uses a permutation drawn from ``seed``) and
    each takes the closest pool row not yet used. Ties, and distances within
    ``tie_tol`` of the minimum, go to the smallest pool index. ``standardize``
    defaults to True when there is more than one covariate.

    Raises:
        InfeasibleError: the pool is smaller than the target set without replacement.
    """
    t = _as_matrix(target_x)
    p = _as_matrix(pool_x)
    if t.shape[1] != p.shape[1]:
        raise ParameterError(f"target has {t.shape[1]} covariates, pool has {p.shape[1]}")
    n, m = t.shape[0], p.shape[0]
    if m == 0:
        raise InfeasibleError("empty pool")
    if not with_replacement and m < n:
        raise InfeasibleError(f"cannot match {n} targets without replacement from a pool of {m}")
    if standardize is None:
        standardize = t.shape[1] > 1
    if standardize:
        t, p = standardize_pooled(t, p)

    np_index = np.empty(n, dtype=np.int64)
    dist = np.empty(n)
    if with_replacement:
        for i in range(n):
            d2 = _sq_dist(t[i], p)
            j = _pick(d2, tie_tol)
            np_index[i] = j
            dist[i] = np.sqrt(d2[j])
        return MatchSkeleton(p_index=np.arange(n), np_index=np_index, distance=dist)

    if order == "sequential":
        sequence = np.arange(n)
    elif order == "random":
        sequence = np.random.default_rng(seed).permutation(n)
    else:
        raise ParameterError(f"unknown processing order {order!r}")
    available = np.ones(m, dtype=bool)
    for i in sequence:
        d2 = _sq_dist(t[i], p)
        d2[~available] = np.inf
        j = _pick(d2, tie_tol)
        available[j] = False
        np_index[i] = j
        dist[i] = np.sqrt(d2[j])
    return MatchSkeleton(p_index=np.arange(n), np_index=np_index, distance=dist)


def _pick(d2, tie_tol):
    if tie_tol <= 0:
        return int(np.argmin(d2))
    reach = (np.sqrt(np.min(d2)) + tie_tol) ** 2
    return int(np.argmax(d2 <= reach))


def propensity_design(x) -> np.ndarray:
    """Prepend an intercept column to ``x``."""
    x = _as_matrix(x)
    return np.column_stack([np.ones(x.shape[0]), x])


def propensity_match(
    p_x,
    p_weights,
    pool_x,
    seed=None,
    with_replacement: bool = False,
    order: str = "sequential",
):
    """Match on the linear predictor of a logistic model for membership in the probability sample.

    Probability-sample rows are labelled 1 and pool rows 0; an intercept is
    added to the covariates. ``p_weights`` (``None`` for an unweighted fit)
    weight the probability-sample rows, pool rows get weight 1.

    Raises:
        FitError: the fit fails to converge or shows quasi-separation.
    """
    px = _as_matrix(p_x)
    qx = _as_matrix(pool_x)
    design = propensity_design(np.vstack([px, qx]))
    label = np.r_[np.ones(px.shape[0]), np.zeros(qx.shape[0])]
    w = np.ones(label.shape[0])
    if p_weights is not None:
        w[: px.shape[0]] = np.asarray(p_weights, dtype=float)
    fit = logistic_irls(design, label, w)
    if fit.quasi_separation:
        raise FitError(
            "propensity model shows quasi-separation",
            {"coefficients": fit.coefficients, "iterations": fit.iterations},
        )
    lp = design @ fit.coefficients
    lp_p, lp_q = lp[: px.shape[0]], lp[px.shape[0] :]
    tol = 1e-9 * (1.0 + float(np.max(np.abs(lp))))
    sk = nn_match(lp_p, lp_q, with_replacement=with_replacement, standardize=False, order=order, seed=seed, tie_tol=tol)
    return MatchSkeleton(p_index=sk.p_index, np_index=sk.np_index, distance=sk.distance, scores=(lp_p, lp_q))


def transfer_weights(skeleton: MatchSkeleton, donor, which: str = "pi_weight", pool_x=None, pool_y=None, pool_ids=None) -> MatchedSample:
    """Give each matched pool unit the weight of its donor.

    ``which`` is "pi_weight" (inverse inclusion probability) or
    "greg_weight" (the donor's calibrated weight).

    Raises:
        StateError: a GREG weight is requested but the donor has none.
    """
    p = skeleton.p_index
    if which == "pi_weight":
        w = donor.base_weight[p]
    elif which == "greg_weight":
        if donor.greg_weight is None:
            raise StateError("donor sample has no GREG weights; run greg_gweights first")
        w = donor.greg_weight[p]
    else:
        raise ParameterError(f"unknown weight kind {which!r}")
    q = skeleton.np_index
    g = None if donor.greg_weight is None else donor.g_factors[p]
    return MatchedSample(
        p_index=p,
        np_index=q,
        transferred_weight=np.asarray(w, dtype=float),
        transferred_pi=donor.pi[p],
        y=None if pool_y is None else np.asarray(pool_y, dtype=float)[q],
        x=None if pool_x is None else _as_matrix(pool_x)[q],
        distance=skeleton.distance,
        weight_kind=which,
        donor_g=g,
        p_ids=donor.unit_ids[p],
        np_ids=q if pool_ids is None else np.asarray(pool_ids)[q],
    )


def write_matched_csv(matched: MatchedSample, path) -> None:
    """Write ``p_id,np_id,distance,weight,pi``."""
    p_ids = matched.p_index if matched.p_ids is None else matched.p_ids
    np_ids = matched.np_index if matched.np_ids is None else matched.np_ids
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p_id", "np_id", "distance", "weight", "pi"])
        for k in range(matched.size):
            w.writerow(
                [
                    p_ids[k],
                    np_ids[k],
                    format(matched.distance[k], ".17g"),
                    format(matched.transferred_weight[k], ".17g"),
                    format(matched.transferred_pi[k], ".17g"),
                ]
            )
