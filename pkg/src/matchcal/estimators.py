"""Point estimators of totals and means built on matched samples."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .calibrate import CalibrationResult, calibrate_weights, chi_square_calibrate, greg_gweights
from .errors import ParameterError, StateError
from .matching import MatchSkeleton, propensity_design, transfer_weights
from .regress import _as_design, logistic_irls, solve_normal
from .variance import ESTIMATOR_VARIANCES, VarianceInputs, estimator_variance

KINDS = ("M1", "M2", "MC1", "MC2", "DR1", "DR2")
Z95 = 1.96


@dataclass
class EstimateReport:
    """A point estimate of a total, the implied mean and any variance estimates.

    ``variances`` maps a distribution name (``xi``, ``Rpi``, ``Rpixi``) to the
    estimated variance of the total. ``diagnostics`` carries per-estimator
    extras such as the number of negative calibrated weights.
    """

    total: float
    n_hat: float
    estimator_kind: str
    variances: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.estimator_kind not in KINDS:
            raise ParameterError(f"unknown estimator kind {self.estimator_kind!r}")

    @property
    def mean(self) -> float:
        return self.total / self.n_hat

    @property
    def ci95(self) -> dict:
        """Normal-approximation 95% intervals for the total, one per variance."""
        out = {}
        for dist, v in self.variances.items():
            half = Z95 * np.sqrt(v)
            out[dist] = (self.total - half, self.total + half)
        return out

    def mean_variances(self) -> dict:
        """Variances of the mean with ``n_hat`` held fixed."""
        return {dist: v / self.n_hat**2 for dist, v in self.variances.items()}

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator_kind,
            "total": self.total,
            "mean": self.mean,
            "n_hat": self.n_hat,
            "variances": dict(self.variances),
            "ci95": {k: list(v) for k, v in self.ci95.items()},
        }


def _kind_for(weight_kind: str, calibrated: bool) -> str:
    base = {"pi_weight": 1, "greg_weight": 2}.get(weight_kind)
    if base is None:
        raise ParameterError(f"unknown weight kind {weight_kind!r}")
    return f"{'MC' if calibrated else 'M'}{base}"


def total_matched(matched) -> EstimateReport:
    """Matched estimator ``sum w y`` using the transferred weights."""
    if matched.size == 0:
        raise ParameterError("matched sample is empty")
    if matched.y is None:
        raise StateError("matched sample carries no response")
    w = matched.transferred_weight
    return EstimateReport(
        total=float(w @ matched.y),
        n_hat=float(w.sum()),
        estimator_kind=_kind_for(matched.weight_kind, calibrated=False),
    )


def regression_form_total(matched, target, sigma_star2=None) -> float:
    """``Y_M + (X_U - X_M)^T B*`` with ``B*`` the regression of y on x under weights ``w/sigma_star2``."""
    w = matched.transferred_weight
    x = _as_design(matched.x)
    s2 = np.ones(w.shape[0]) if sigma_star2 is None else np.broadcast_to(np.asarray(sigma_star2, dtype=float), w.shape)
    b_star = solve_normal(x, w / s2, x.T @ (w * matched.y / s2), "calibration")
    return float(w @ matched.y + (np.asarray(target, dtype=float) - w @ x) @ b_star)


def total_matched_calibrated(matched, calib: CalibrationResult) -> EstimateReport:
    """Matched, calibrated estimator ``sum w* y``.

    The regression form of the same number is computed alongside and its
    relative gap stored in ``diagnostics["regression_form_gap"]``.

    Raises:
        StateError: ``calib`` does not belong to ``matched``.
    """
    if matched.y is None:
        raise StateError("matched sample carries no response")
    if calib.weights.shape[0] != matched.size:
        raise StateError(f"calibration has {calib.weights.shape[0]} weights for {matched.size} matched units")
    if not np.array_equal(calib.base_weights, matched.transferred_weight):
        raise StateError("calibration was not computed from this matched sample's weights")
    total = float(calib.weights @ matched.y)
    reg = regression_form_total(matched, calib.target_totals, calib.sigma_star2)
    return EstimateReport(
        total=total,
        n_hat=float(calib.weights.sum()),
        estimator_kind=_kind_for(matched.weight_kind, calibrated=True),
        diagnostics={
            "regression_form_gap": abs(total - reg) / max(1.0, abs(total)),
            "n_negative_weights": calib.n_negative,
        },
    )


def dr_weights(p_design, p_weight, np_design) -> tuple[np.ndarray, object]:
    """Odds weights ``(1 - R)/R`` for the nonprobability units.

    ``R`` is the fitted probability of belonging to the nonprobability sample
    from a logistic fit on the stacked samples, probability units weighted
    by ``p_weight`` and nonprobability units by 1. The design matrices are
    used as given (include an intercept column yourself).
    """
    pd_ = _as_design(p_design)
    nd = _as_design(np_design)
    label = np.r_[np.zeros(pd_.shape[0]), np.ones(nd.shape[0])]
    w = np.r_[np.asarray(p_weight, dtype=float), np.ones(nd.shape[0])]
    fit = logistic_irls(np.vstack([pd_, nd]), label, w)
    r = fit.fitted_probs[pd_.shape[0] :]
    return (1.0 - r) / r, fit


def dr_estimator(
    p_design,
    p_weight,
    np_design,
    np_y,
    np_calib_x,
    target,
    sigma_star2=None,
    kind: str = "DR1",
) -> EstimateReport:
    """Doubly robust total: propensity-odds weights calibrated to ``target``.

    Args:
        p_design: propensity design rows for the probability sample.
        p_weight: probability-sample weights used in the propensity fit.
        np_design: propensity design rows for the nonprobability sample.
        np_y: responses of the nonprobability sample.
        np_calib_x: calibration covariates of the nonprobability sample.
        target: population totals of the calibration covariates.
        sigma_star2: calibration variance factors, default 1.
        kind: label stored in the report, "DR1" or "DR2".

    Raises:
        FitError: the propensity fit fails.
        RankError: the calibration system is singular.
    """
    if kind not in ("DR1", "DR2"):
        raise ParameterError(f"doubly robust kind must be DR1 or DR2, got {kind!r}")
    odds, fit = dr_weights(p_design, p_weight, np_design)
    calib = calibrate_weights(odds, np_calib_x, target, sigma_star2)
    y = np.asarray(np_y, dtype=float)
    return EstimateReport(
        total=float(calib.weights @ y),
        n_hat=float(calib.weights.sum()),
        estimator_kind=kind,
        diagnostics={
            "propensity_iterations": fit.iterations,
            "quasi_separation": fit.quasi_separation,
            "n_negative_weights": calib.n_negative,
        },
    )


def matched_suite(
    skeleton: MatchSkeleton,
    donor,
    donor_x,
    pool_x,
    pool_y,
    target,
    sigma_tilde2=None,
    sigma_star2=None,
    variances: Optional[dict] = None,
) -> dict:
    """M1, M2, MC1 and MC2 reports for one matched sample.

    GREG weights are (re)computed for ``donor`` from ``donor_x`` unless the
    donor already carries them. ``pool_x`` must hold the calibration
    covariates of the pool in the same column layout as ``donor_x``.

    Args:
        variances: estimator -> list of distributions to evaluate; ``None``
            evaluates every available pair, ``{}`` none.

    Returns:
        dict mapping estimator kind to :class:`EstimateReport`.
    """
    if donor.greg_weight is None:
        greg_gweights(donor, donor_x, target, sigma_tilde2)
    m1 = transfer_weights(skeleton, donor, "pi_weight", pool_x=pool_x, pool_y=pool_y)
    m2 = transfer_weights(skeleton, donor, "greg_weight", pool_x=pool_x, pool_y=pool_y)
    cal1 = chi_square_calibrate(m1, target, sigma_star2)
    cal2 = chi_square_calibrate(m2, target, sigma_star2)
    reports = {
        "M1": total_matched(m1),
        "M2": total_matched(m2),
        "MC1": total_matched_calibrated(m1, cal1),
        "MC2": total_matched_calibrated(m2, cal2),
    }
    if variances is None:
        variances = {}
        for est, dist in ESTIMATOR_VARIANCES:
            variances.setdefault(est, []).append(dist)
    if variances:
        inputs = VarianceInputs(
            matched=m1,
            donor=donor,
            donor_x=_as_design(donor_x),
            sigma_tilde2=sigma_tilde2,
            sigma_star2=sigma_star2,
            g_factors=m1.donor_g,
            g_star_factors=cal1.g_factors,
        )
        for est, dists in variances.items():
            for dist in dists:
                reports[est].variances[dist] = estimator_variance(est, dist, inputs)
    return reports


def simple_dr(p_x, p_weight, np_x, np_y, np_calib_x, target, sigma_star2=None, kind="DR1") -> EstimateReport:
    """:func:`dr_estimator` with an intercept prepended to raw propensity covariates."""
    return dr_estimator(
        propensity_design(p_x),
        p_weight,
        propensity_design(np_x),
        np_y,
        np_calib_x,
        target,
        sigma_star2=sigma_star2,
        kind=kind,
    )
