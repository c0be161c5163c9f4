"""Variance estimators for matched and matched-calibrated totals.

Naming follows the distribution each estimator targets: ``xi`` (the
superpopulation model, conditional on the samples), ``Rpi`` (the
quasi-randomization of the panel combined with the design of the
probability sample) and ``Rpixi`` (all three). The matched sample is always
treated as an unstratified with-replacement sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DegenerateSampleError, ParameterError, StateError
from .regress import WlsFit, _as_design, weighted_ls

XI_KINDS = ("inv_pi", "g_over_pi", "gstar_over_pi", "inv_pi_with_estar")
COMPOSITE_KINDS = ("M1_rpixi", "M2_rpi", "M2_rpixi", "MC1_rpi", "MC2_rpi", "MC2_rpixi")


def wr_total_variance(z) -> float:
    """With-replacement variance ``n/(n-1) * sum (z_j - mean z)^2`` of a total."""
    z = np.asarray(z, dtype=float)
    n = z.shape[0]
    if n < 2:
        raise DegenerateSampleError(f"need at least 2 units, got {n}")
    dev = z - z.mean()
    return float(n / (n - 1) * np.dot(dev, dev))


def wr_total_covariance(z) -> np.ndarray:
    """Matrix version of :func:`wr_total_variance` for an n x C array of contributions."""
    z = _as_design(z)
    n = z.shape[0]
    if n < 2:
        raise DegenerateSampleError(f"need at least 2 units, got {n}")
    dev = z - z.mean(axis=0)
    cov = n / (n - 1) * dev.T @ dev
    return (cov + cov.T) / 2


def v_pi_xp(donor, x) -> np.ndarray:
    """Design covariance of the Horvitz-Thompson total of ``x`` over the probability sample.

    Strata are treated as independent with-replacement samples; no finite
    population correction is applied.

    Raises:
        DegenerateSampleError: some stratum holds fewer than two units.
    """
    x = _as_design(x)
    if x.shape[0] != donor.size:
        raise ParameterError(f"x has {x.shape[0]} rows for a sample of {donor.size}")
    z = x / donor.pi[:, None]
    out = np.zeros((x.shape[1], x.shape[1]))
    for h in np.unique(donor.stratum):
        rows = donor.stratum == h
        if np.count_nonzero(rows) < 2:
            raise DegenerateSampleError(f"stratum {int(h)} has fewer than 2 sampled units")
        out += wr_total_covariance(z[rows])
    return (out + out.T) / 2


def quad(b, m) -> float:
    """``b^T m b`` with ``m`` symmetrized first."""
    m = np.asarray(m, dtype=float)
    m = (m + m.T) / 2
    return float((b @ m) @ b)


@dataclass(frozen=True)
class VarianceInputs:
    """Everything the variance estimators draw on for one matched sample.

    ``matched`` must carry ``y`` and ``x``. ``donor``/``donor_x`` describe the
    probability sample and are needed only by the estimators with a design
    component. ``g_factors`` defaults to the donor g-factors carried by the
    matched sample; ``g_star_factors`` are the panel calibration factors.
    """

    matched: object
    donor: object = None
    donor_x: Optional[np.ndarray] = None
    sigma_tilde2: Optional[np.ndarray] = None
    sigma_star2: Optional[np.ndarray] = None
    g_factors: Optional[np.ndarray] = None
    g_star_factors: Optional[np.ndarray] = None

    def _s2(self, s2) -> np.ndarray:
        n = self.matched.size
        return np.ones(n) if s2 is None else np.broadcast_to(np.asarray(s2, dtype=float), (n,))

    @property
    def pi(self) -> np.ndarray:
        return self.matched.transferred_pi

    @property
    def bnp_tilde(self) -> WlsFit:
        """Slope fitted on the matched sample with weights ``1/(pi sigma_tilde2)``."""
        m = self.matched
        return weighted_ls(m.x, m.y, 1.0 / (self.pi * self._s2(self.sigma_tilde2)))

    @property
    def bnp_star(self) -> WlsFit:
        """Slope fitted on the matched sample with weights ``1/(pi sigma_star2)``."""
        m = self.matched
        return weighted_ls(m.x, m.y, 1.0 / (self.pi * self._s2(self.sigma_star2)))

    @property
    def e(self) -> np.ndarray:
        return self.bnp_tilde.residuals

    @property
    def e_star(self) -> np.ndarray:
        return self.bnp_star.residuals

    @property
    def g(self) -> np.ndarray:
        g = self.g_factors if self.g_factors is not None else self.matched.donor_g
        if g is None:
            raise StateError("no GREG g-factors available for this matched sample")
        return np.asarray(g, dtype=float)

    @property
    def g_star(self) -> np.ndarray:
        if self.g_star_factors is None:
            raise StateError("no calibration g*-factors available; calibrate the matched sample first")
        return np.asarray(self.g_star_factors, dtype=float)

    def v_r_xnp(self) -> np.ndarray:
        """With-replacement covariance of ``sum x_j/pi_j`` over the matched sample."""
        return wr_total_covariance(self.matched.x / self.pi[:, None])

    def v_pi_xp(self) -> np.ndarray:
        if self.donor is None or self.donor_x is None:
            raise StateError("probability-sample design information is required")
        return v_pi_xp(self.donor, self.donor_x)


def v_xi(inputs: VarianceInputs, factor_kind: str) -> float:
    """Model variance estimate ``sum (factor_j * resid_j)^2``.

    ============================  ===========  ==========
    factor_kind                   factor       residual
    ============================  ===========  ==========
    ``inv_pi``                    1/pi         e
    ``g_over_pi``                 g/pi         e
    ``gstar_over_pi``             g*/pi        e*
    ``inv_pi_with_estar``         1/pi         e*
    ============================  ===========  ==========
    """
    pi = inputs.pi
    if factor_kind == "inv_pi":
        r = inputs.e / pi
    elif factor_kind == "g_over_pi":
        r = inputs.g * inputs.e / pi
    elif factor_kind == "gstar_over_pi":
        r = inputs.g_star * inputs.e_star / pi
    elif factor_kind == "inv_pi_with_estar":
        r = inputs.e_star / pi
    else:
        raise ParameterError(f"unknown factor kind {factor_kind!r}")
    return float(np.dot(r, r))


def v_composite(kind: str, inputs: VarianceInputs) -> float:
    """Composite variance estimators built from residual, panel and design parts.

    The slope used in every quadratic form is the one fitted with weights
    ``1/(pi sigma_tilde2)``. ``MC1_rpi`` uses the matched sample's own
    transferred weights, so build its inputs on the inverse-pi matched sample.
    """
    m = inputs.matched
    pi = inputs.pi
    if kind == "M1_rpixi":
        b = inputs.bnp_tilde.coefficients
        return v_xi(inputs, "inv_pi") + quad(b, inputs.v_r_xnp())
    if kind == "M2_rpi":
        b = inputs.bnp_tilde.coefficients
        return wr_total_variance(m.y / pi) + quad(b, inputs.v_pi_xp())
    if kind == "M2_rpixi":
        b = inputs.bnp_tilde.coefficients
        return v_xi(inputs, "inv_pi") + quad(b, inputs.v_r_xnp()) + quad(b, inputs.v_pi_xp())
    if kind == "MC1_rpi":
        return wr_total_variance(m.transferred_weight * inputs.e_star)
    if kind == "MC2_rpi":
        b = inputs.bnp_tilde.coefficients
        return wr_total_variance(inputs.e_star / pi) + quad(b, inputs.v_pi_xp())
    if kind == "MC2_rpixi":
        b = inputs.bnp_tilde.coefficients
        return v_xi(inputs, "inv_pi_with_estar") + quad(b, inputs.v_pi_xp())
    raise ParameterError(f"unknown composite kind {kind!r}")


# (estimator, distribution) -> how to compute it
ESTIMATOR_VARIANCES = {
    ("M1", "xi"): ("xi", "inv_pi"),
    ("M1", "Rpi"): ("wr_y", None),
    ("M1", "Rpixi"): ("composite", "M1_rpixi"),
    ("M2", "xi"): ("xi", "g_over_pi"),
    ("M2", "Rpi"): ("composite", "M2_rpi"),
    ("M2", "Rpixi"): ("composite", "M2_rpixi"),
    ("MC1", "xi"): ("xi", "gstar_over_pi"),
    ("MC1", "Rpi"): ("composite", "MC1_rpi"),
    ("MC2", "xi"): ("xi", "inv_pi_with_estar"),
    ("MC2", "Rpi"): ("composite", "MC2_rpi"),
    ("MC2", "Rpixi"): ("composite", "MC2_rpixi"),
}


def estimator_variance(estimator: str, distribution: str, inputs: VarianceInputs) -> float:
    """Look up and evaluate the variance estimator for ``(estimator, distribution)``.

    ``inputs`` should be built on the inverse-pi matched sample; for ``MC1``
    its ``g_star_factors`` must come from calibrating those weights.
    """
    try:
        route, arg = ESTIMATOR_VARIANCES[(estimator, distribution)]
    except KeyError:
        raise ParameterError(f"no variance estimator for {estimator} under {distribution}") from None
    if route == "xi":
        return v_xi(inputs, arg)
    if route == "composite":
        return v_composite(arg, inputs)
    return wr_total_variance(inputs.matched.transferred_weight * inputs.matched.y)
