"""Binary logistic regression fitted by Newton / IRLS.

Used for the propensity model (probability of treatment given covariates)
and for the intercept + treatment outcome model behind the odds ratio.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from statistics import NormalDist
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import expit

from .errors import (
    DegenerateSE,
    DimensionMismatch,
    NotConverged,
    SeparationWarning,
    Singular,
    ValidationError,
)

INTERCEPT = "(intercept)"
Z_975 = NormalDist().inv_cdf(0.975)

# largest double below 1 and smallest positive normal double
_P_MAX = 1.0 - np.finfo(float).epsneg
_P_MIN = np.finfo(float).tiny


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Design with a leading intercept column of ones and a 0/1 response."""

    x: np.ndarray
    y: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        x = np.array(self.x, dtype=float)
        y = np.array(self.y, dtype=float)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise DimensionMismatch(f"design {x.shape} incompatible with response {y.shape}")
        if x.shape[1] < 1 or not np.all(x[:, 0] == 1.0):
            raise ValidationError("first design column must be an intercept of ones")
        if not np.all((y == 0) | (y == 1)):
            raise ValidationError("response must be 0/1")
        if len(self.names) != x.shape[1]:
            raise DimensionMismatch("one name per design column required")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def k(self) -> int:
        """Number of covariates, excluding the intercept."""
        return self.x.shape[1] - 1


def design_matrix(covariates, response, names: Sequence[str] | None = None) -> DesignMatrix:
    """Prepend an intercept column to ``covariates`` (n x k)."""
    cov = np.asarray(covariates, dtype=float)
    if cov.ndim == 1:
        cov = cov[:, None]
    if names is None:
        names = [f"x{i}" for i in range(1, cov.shape[1] + 1)]
    x = np.column_stack([np.ones(cov.shape[0]), cov])
    return DesignMatrix(x, response, (INTERCEPT, *names))


@dataclass(frozen=True, eq=False)
class LogisticFit:
    coefficients: np.ndarray
    coef_standard_errors: np.ndarray
    iterations: int
    converged: bool
    final_log_likelihood: float
    gradient_max_norm: float
    separation: bool = False
    names: tuple[str, ...] = ()
    # covariates that were identically zero and pinned at 0
    dropped: tuple[int, ...] = ()
    # log-likelihood at the start and after every iteration
    history: tuple[float, ...] = ()

    @property
    def k(self) -> int:
        return len(self.coefficients) - 1

    def linear_predictor(self, covariates) -> np.ndarray:
        cov = np.asarray(covariates, dtype=float)
        if cov.ndim == 1:
            cov = cov[None, :]
        if cov.shape[1] != self.k:
            raise DimensionMismatch(f"expected {self.k} covariates, got {cov.shape[1]}")
        return self.coefficients[0] + cov @ self.coefficients[1:]

    def predict_many(self, covariates) -> np.ndarray:
        return np.clip(expit(self.linear_predictor(covariates)), _P_MIN, _P_MAX)

    def to_dict(self) -> dict:
        names = self.names or tuple(f"b{i}" for i in range(len(self.coefficients)))
        return {
            "coefficients": {n: float(c) for n, c in zip(names, self.coefficients)},
            "standard_errors": {n: _json_float(s) for n, s in zip(names, self.coef_standard_errors)},
            "iterations": self.iterations,
            "converged": self.converged,
            "log_likelihood": float(self.final_log_likelihood),
            "gradient_max_norm": float(self.gradient_max_norm),
            "separation": self.separation,
        }


def _json_float(v: float):
    return float(v) if math.isfinite(v) else None


def log_likelihood(beta: np.ndarray, x: np.ndarray, y: np.ndarray) -> float:
    eta = x @ beta
    # log(1 + e^eta) without overflow
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def score(beta: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of the log-likelihood."""
    return x.T @ (y - expit(x @ beta))


def information(beta: np.ndarray, x: np.ndarray) -> np.ndarray:
    p = expit(x @ beta)
    w = p * (1.0 - p)
    return x.T @ (x * w[:, None])


def fit(
    design: DesignMatrix,
    tolerance: float = 1e-8,
    max_iterations: int = 25,
    *,
    separation_bound: float = 15.0,
    gradient_tolerance: float = 1e-6,
    start: np.ndarray | None = None,
) -> LogisticFit:
    """Maximum-likelihood fit by Newton/IRLS with step-halving.

    Iteration stops once the relative log-likelihood change drops below
    ``tolerance`` and the gradient max-norm is at most ``gradient_tolerance``.
    Covariate columns that are identically zero carry no information; their
    coefficients are pinned at 0 with an undefined (NaN) standard error.

    Raises:
        Singular: the information matrix cannot be factorised.
        NotConverged: ``max_iterations`` reached without convergence.

    If any coefficient exceeds ``separation_bound`` in absolute value the
    iteration stops, a :class:`SeparationWarning` is issued and the partial
    fit is returned with ``separation=True`` and ``converged=False``.
    """
    x, y = design.x, design.y
    n, p = x.shape
    if n <= p:
        raise DimensionMismatch(f"need more records ({n}) than parameters ({p})")
    if y.min() == y.max():
        raise ValidationError("response has a single class")

    zero_cols = tuple(j for j in range(1, p) if not np.any(x[:, j]))
    keep = [j for j in range(p) if j not in zero_cols]
    xk = x[:, keep]
    if np.linalg.matrix_rank(xk) < len(keep):
        raise Singular("design matrix is rank deficient")

    beta = np.zeros(len(keep)) if start is None else np.asarray(start, dtype=float)[keep].copy()
    ll = log_likelihood(beta, xk, y)
    history = [ll]
    converged = separation = False
    grad = score(beta, xk, y)
    iterations = 0
    for iterations in range(1, max_iterations + 1):
        try:
            chol = cho_factor(information(beta, xk))
        except LinAlgError:
            raise Singular("information matrix is not positive definite") from None
        step = cho_solve(chol, grad)
        t = 1.0
        # near the optimum the log-likelihood is flat to rounding; a loss of a
        # few ulps is noise, not a reason to shorten the Newton step
        slack = 64 * np.finfo(float).eps * (abs(ll) + 1.0)
        while True:
            candidate = beta + t * step
            ll_new = log_likelihood(candidate, xk, y)
            if ll_new >= ll - slack or t < 1e-10:
                break
            t *= 0.5
        change = abs(ll_new - ll) / (abs(ll_new) + 0.1)
        beta, ll = candidate, ll_new
        history.append(ll)
        grad = score(beta, xk, y)
        if np.max(np.abs(beta)) > separation_bound:
            separation = True
            warnings.warn(
                f"coefficient magnitude exceeded {separation_bound} at iteration {iterations}; "
                "data look separated", SeparationWarning, stacklevel=2)
            break
        if change < tolerance and np.max(np.abs(grad)) <= gradient_tolerance:
            converged = True
            break

    if not converged and not separation:
        raise NotConverged(
            f"IRLS did not converge in {max_iterations} iterations "
            f"(gradient max-norm {np.max(np.abs(grad)):.3g})")

    se = np.full(len(keep), np.nan)
    try:
        chol = cho_factor(information(beta, xk))
        cov = cho_solve(chol, np.eye(len(keep)))
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    except LinAlgError:
        if not separation:
            raise Singular("information matrix singular at the optimum") from None

    coef = np.zeros(p)
    coef[keep] = beta
    ses = np.full(p, np.nan)
    ses[keep] = se
    return LogisticFit(
        coefficients=coef,
        coef_standard_errors=ses,
        iterations=iterations,
        converged=converged,
        final_log_likelihood=ll,
        gradient_max_norm=float(np.max(np.abs(grad))),
        separation=separation,
        names=design.names,
        dropped=zero_cols,
        history=tuple(history),
    )


def predict(fit: LogisticFit, record) -> float:
    """Probability for one covariate vector; strictly inside (0, 1)."""
    record = np.asarray(record, dtype=float)
    if record.ndim != 1:
        raise DimensionMismatch("predict takes a single covariate vector")
    return float(fit.predict_many(record)[0])


@dataclass(frozen=True)
class WaldResult:
    estimate: float
    standard_error: float
    z: float
    p_value: float
    ci_low: float
    ci_high: float


def wald(estimate: float, standard_error: float) -> WaldResult:
    """Two-sided normal test and 95% interval for a single coefficient."""
    if not (math.isfinite(standard_error) and standard_error > 0):
        raise DegenerateSE(f"standard error {standard_error!r} is not positive and finite")
    z = estimate / standard_error
    p = math.erfc(abs(z) / math.sqrt(2.0))
    half = Z_975 * standard_error
    return WaldResult(estimate, standard_error, z, min(1.0, p), estimate - half, estimate + half)


def wald_test(fit: LogisticFit, coefficient_index: int) -> WaldResult:
    if not fit.converged:
        raise NotConverged("Wald test requires a converged fit")
    if not 0 <= coefficient_index < len(fit.coefficients):
        raise DimensionMismatch(f"no coefficient at index {coefficient_index}")
    return wald(float(fit.coefficients[coefficient_index]),
                float(fit.coef_standard_errors[coefficient_index]))
