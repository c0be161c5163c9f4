"""Weighted least squares and weighted logistic regression."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.special

from .errors import FitError, ParameterError, RankError

_EPS = np.finfo(float).eps
_P_CLAMP = 1e-10


def _as_design(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def check_rank(m: np.ndarray, what: str = "design") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pivoted QR of ``m`` after scaling columns to unit norm.

    Returns ``(q, r, piv)`` of the column-scaled matrix together with the
    scales folded back into ``r``. Raises :class:`RankError` naming the first
    column judged dependent.
    """
    norms = np.linalg.norm(m, axis=0)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise RankError(f"{what} matrix is singular: column {int(zero[0])} is identically zero", pivot=int(zero[0]))
    q, r, piv = scipy.linalg.qr(m / norms, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = max(m.shape) * _EPS * 10 * diag[0]
    bad = np.flatnonzero(diag <= tol)
    if bad.size:
        col = int(piv[bad[0]])
        raise RankError(
            f"{what} matrix is rank deficient: column {col} is linearly dependent on the others "
            f"(|R[{bad[0]},{bad[0]}]| = {diag[bad[0]]:.3g})",
            pivot=col,
        )
    r = r * norms[piv][None, :]
    return q, r, piv


def solve_normal(x: np.ndarray, w: np.ndarray, rhs: np.ndarray, what: str = "information") -> np.ndarray:
    """Solve ``(sum_j w_j x_j x_j^T) b = rhs`` without forming an inverse.

    Positive weights use a QR of ``sqrt(w) x``; otherwise the symmetric
    system is solved directly after the same rank check on ``sqrt(|w|) x``.
    """
    x = _as_design(x)
    w = np.asarray(w, dtype=float)
    _, r, piv = check_rank(np.sqrt(np.abs(w))[:, None] * x, what)
    if np.all(w > 0):
        # A = P R^T R P^T
        z = scipy.linalg.solve_triangular(r, rhs[piv], trans="T")
        y = scipy.linalg.solve_triangular(r, z)
        out = np.empty_like(y)
        out[piv] = y
        return out
    a = (x * w[:, None]).T @ x
    try:
        return scipy.linalg.solve(a, rhs, assume_a="sym")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise RankError(f"{what} matrix is singular: {exc}") from None


@dataclass(frozen=True)
class WlsFit:
    coefficients: np.ndarray
    residuals: np.ndarray
    weight_used: np.ndarray
    info_matrix: np.ndarray

    def predict(self, x) -> np.ndarray:
        return _as_design(x) @ self.coefficients


def weighted_ls(x, y, w) -> WlsFit:
    """Weighted least squares ``(sum w x x^T)^-1 sum w x y``."""
    x = _as_design(x)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.shape[0] != y.shape[0] or w.shape != y.shape:
        raise ParameterError(f"shape mismatch: x {x.shape}, y {y.shape}, w {w.shape}")
    if np.any(~(w > 0)):
        raise ParameterError("weights must be positive")
    sw = np.sqrt(w)
    q, r, piv = check_rank(sw[:, None] * x, "weighted design")
    # least squares via the QR factors; r already carries the column scales
    b_perm = scipy.linalg.solve_triangular(r, q.T @ (sw * y))
    coef = np.empty_like(b_perm)
    coef[piv] = b_perm
    info = (x * w[:, None]).T @ x
    return WlsFit(coefficients=coef, residuals=y - x @ coef, weight_used=w, info_matrix=(info + info.T) / 2)


@dataclass(frozen=True)
class LogisticFit:
    coefficients: np.ndarray
    fitted_probs: np.ndarray
    converged: bool
    iterations: int
    deviance: float
    quasi_separation: bool = False
    deviance_history: tuple = ()

    def linear_predictor(self, x) -> np.ndarray:
        return _as_design(x) @ self.coefficients


def _expit(eta):
    p = scipy.special.expit(eta)
    return np.clip(p, _P_CLAMP, 1 - _P_CLAMP)


def weighted_deviance(x, label, w, coef) -> float:
    p = _expit(_as_design(x) @ coef)
    return float(-2 * np.sum(w * (label * np.log(p) + (1 - label) * np.log1p(-p))))


def logistic_irls(x, label, w=None, tol: float = 1e-8, max_iter: int = 25) -> LogisticFit:
    """Weighted maximum likelihood logistic regression by IRLS.

    Each Newton step is halved until the weighted deviance stops increasing.
    Convergence is declared when the largest coefficient change drops below
    ``tol``. A coefficient larger than 15 in absolute value sets
    ``quasi_separation``.

    Raises:
        FitError: one class is absent or the iteration limit is reached.
    """
    x = _as_design(x)
    label = np.asarray(label, dtype=float)
    w = np.ones_like(label) if w is None else np.asarray(w, dtype=float)
    if x.shape[0] != label.shape[0] or w.shape != label.shape:
        raise ParameterError(f"shape mismatch: x {x.shape}, label {label.shape}, w {w.shape}")
    if np.any(~(w > 0)):
        raise ParameterError("weights must be positive")
    if not np.all((label == 0) | (label == 1)):
        raise ParameterError("labels must be 0 or 1")
    if label.min() == label.max():
        raise FitError("logistic fit needs both classes present", {"n": label.shape[0]})
    check_rank(np.sqrt(w)[:, None] * x, "logistic design")

    coef = np.zeros(x.shape[1])
    dev = weighted_deviance(x, label, w, coef)
    history = [dev]
    for it in range(1, max_iter + 1):
        p = _expit(x @ coef)
        score = x.T @ (w * (label - p))
        try:
            step = solve_normal(x, w * p * (1 - p), score, "logistic information")
        except RankError as exc:
            raise FitError(f"information matrix became singular at iteration {it}", {"deviance": history}) from exc
        new = coef + step
        new_dev = weighted_deviance(x, label, w, new)
        halvings = 0
        while new_dev > dev * (1 + 1e-12) + 1e-12 and halvings < 30:
            step = step / 2
            new = coef + step
            new_dev = weighted_deviance(x, label, w, new)
            halvings += 1
        coef, dev = new, new_dev
        history.append(dev)
        if np.max(np.abs(step)) < tol:
            return LogisticFit(
                coefficients=coef,
                fitted_probs=_expit(x @ coef),
                converged=True,
                iterations=it,
                deviance=dev,
                quasi_separation=bool(np.any(np.abs(coef) > 15)),
                deviance_history=tuple(history),
            )
    raise FitError(
        f"IRLS did not converge in {max_iter} iterations",
        {"coefficients": coef, "deviance": history, "last_step": step},
    )
