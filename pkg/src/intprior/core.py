"""Domain types, link functions and Bernoulli-regression likelihoods.

Coefficient vectors follow a fixed ordering: the coefficients under test
occupy the leading ``k0`` positions and the intercept is the last one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import special

__all__ = [
    "LINK_KINDS",
    "METHODS",
    "BayesFactorEstimate",
    "Dataset",
    "HypothesisTest",
    "LinkSpec",
    "RestrictionViolation",
    "get_link",
    "link_inverse",
    "log_likelihood",
    "log_likelihood_many",
    "posterior_probability",
]

LINK_KINDS = ("logit", "probit", "cloglog", "cauchit", "log")
METHODS = ("ergodic", "importance_kde", "importance_rb", "bic")

# Floor applied to probabilities before taking logs.
PROB_FLOOR = 1e-300
_LOG_FLOOR = np.log(PROB_FLOOR)


class RestrictionViolation(ValueError):
    """A linear predictor falls outside the domain of the link (log link only)."""


@dataclass(frozen=True)
class LinkSpec:
    """A binomial link function ``g`` together with its inverse.

    Parameters
    ----------
    kind : str
        One of ``logit``, ``probit``, ``cloglog``, ``cauchit`` or ``log``.
    """

    kind: str

    def __post_init__(self):
        if self.kind not in LINK_KINDS:
            raise ValueError(f"unknown link {self.kind!r}; expected one of {LINK_KINDS}")

    @property
    def restricted(self) -> bool:
        """True when the linear predictor must satisfy ``eta < 0``."""
        return self.kind == "log"

    def admissible(self, eta):
        eta = np.asarray(eta, dtype=float)
        if self.kind == "log":
            return eta < 0
        return np.isfinite(eta)

    def link(self, p):
        """Forward map ``g(p)``."""
        p = np.asarray(p, dtype=float)
        k = self.kind
        if k == "logit":
            return special.logit(p)
        if k == "probit":
            return special.ndtri(p)
        if k == "cloglog":
            return np.log(-np.log1p(-p))
        if k == "cauchit":
            return np.tan(np.pi * (p - 0.5))
        return np.log(p)

    def inverse(self, eta):
        """Inverse map ``g^{-1}(eta)``; no domain checking."""
        eta = np.asarray(eta, dtype=float)
        k = self.kind
        if k == "logit":
            return special.expit(eta)
        if k == "probit":
            return special.ndtr(eta)
        if k == "cloglog":
            return -np.expm1(-np.exp(eta))
        if k == "cauchit":
            return np.arctan2(1.0, -eta) / np.pi
        return np.exp(eta)

    def inverse_deriv(self, eta):
        """Derivative of ``g^{-1}`` with respect to ``eta``."""
        eta = np.asarray(eta, dtype=float)
        k = self.kind
        if k == "logit":
            p = special.expit(eta)
            return p * (1.0 - p)
        if k == "probit":
            return np.exp(-0.5 * eta * eta) / np.sqrt(2.0 * np.pi)
        if k == "cloglog":
            return np.exp(eta - np.exp(eta))
        if k == "cauchit":
            return 1.0 / (np.pi * (1.0 + eta * eta))
        return np.exp(eta)

    def log_inverse_deriv(self, eta):
        """``log`` of :meth:`inverse_deriv`, stable in the tails."""
        eta = np.asarray(eta, dtype=float)
        k = self.kind
        if k == "logit":
            return -np.logaddexp(0.0, -eta) - np.logaddexp(0.0, eta)
        if k == "probit":
            return -0.5 * eta * eta - 0.5 * np.log(2.0 * np.pi)
        if k == "cloglog":
            return eta - np.exp(eta)
        if k == "cauchit":
            return -np.log(np.pi) - np.log1p(eta * eta)
        return eta.copy()

    def log_probs(self, eta):
        """Return ``(log p, log(1 - p))`` at ``p = g^{-1}(eta)``.

        Both are floored at ``log(1e-300)``; for the log link, entries with
        ``eta >= 0`` are not meaningful and should be screened by the caller.
        """
        eta = np.asarray(eta, dtype=float)
        k = self.kind
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            if k == "logit":
                lp, lq = -np.logaddexp(0.0, -eta), -np.logaddexp(0.0, eta)
            elif k == "probit":
                lp, lq = special.log_ndtr(eta), special.log_ndtr(-eta)
            elif k == "cloglog":
                e = np.exp(eta)
                lp, lq = np.log(-np.expm1(-e)), -e
            elif k == "cauchit":
                lp = np.log(np.arctan2(1.0, -eta) / np.pi)
                lq = np.log(np.arctan2(1.0, eta) / np.pi)
            else:
                lp, lq = np.minimum(eta, 0.0), np.log(-np.expm1(np.minimum(eta, 0.0)))
        lp = np.where(np.isnan(lp), _LOG_FLOOR, np.maximum(lp, _LOG_FLOOR))
        lq = np.where(np.isnan(lq), _LOG_FLOOR, np.maximum(lq, _LOG_FLOOR))
        return lp, lq


def get_link(link) -> LinkSpec:
    if isinstance(link, LinkSpec):
        return link
    return LinkSpec(str(link))


def link_inverse(link, eta):
    """Success probability at linear predictor ``eta``.

    Raises
    ------
    RestrictionViolation
        For the log link when any ``eta >= 0``.
    """
    link = get_link(link)
    eta_arr = np.asarray(eta, dtype=float)
    if link.restricted and np.any(eta_arr >= 0):
        raise RestrictionViolation("log link requires eta < 0")
    p = link.inverse(eta_arr)
    return float(p) if p.ndim == 0 else p


@dataclass(frozen=True)
class Dataset:
    """Binary responses ``y`` with design matrix ``X`` (intercept last)."""

    X: np.ndarray
    y: np.ndarray
    column_names: tuple = ()

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        y = np.array(self.y, dtype=float).ravel()
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array")
        n, k = X.shape
        if y.shape[0] != n:
            raise ValueError(f"y has length {y.shape[0]}, X has {n} rows")
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("responses must be 0 or 1")
        if n < k:
            raise ValueError(f"need n >= k, got n={n}, k={k}")
        if not np.all(X[:, -1] == 1.0):
            raise ValueError("last column of X must be the intercept (all ones)")
        if np.linalg.matrix_rank(X) < k:
            raise ValueError("design matrix is rank deficient")
        names = tuple(self.column_names) or tuple(f"x{j + 1}" for j in range(k - 1)) + ("(Intercept)",)
        if len(names) != k:
            raise ValueError(f"{len(names)} column names for {k} columns")
        X.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    @cached_property
    def aggregated(self):
        """Distinct rows with their trial and success counts.

        Returns ``(rows, trials, successes)``; the Bernoulli log-likelihood
        only depends on the data through these.
        """
        rows, inverse = np.unique(self.X, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        trials = np.bincount(inverse, minlength=len(rows)).astype(float)
        successes = np.bincount(inverse, weights=self.y, minlength=len(rows))
        return rows, trials, successes

    def flipped(self) -> "Dataset":
        """Same design with every response relabelled ``y -> 1 - y``."""
        return Dataset(self.X, 1.0 - self.y, self.column_names)

    def columns(self, idx) -> "Dataset":
        """Restrict to a subset of columns; the intercept must stay last."""
        idx = list(idx)
        return Dataset(self.X[:, idx], self.y, tuple(self.column_names[j] for j in idx))


@dataclass(frozen=True)
class HypothesisTest:
    """``H0``: the first ``k0`` of ``k`` coefficients are zero."""

    k0: int
    k: int

    def __post_init__(self):
        if not 1 <= self.k0 <= self.k - 1:
            raise ValueError(f"k0 must lie in [1, k-1]; got k0={self.k0}, k={self.k}")

    @property
    def k1(self) -> int:
        return self.k - self.k0

    @property
    def free1(self) -> list[int]:
        """Coordinates left free under the null model."""
        return list(range(self.k0, self.k))


def _check_theta(theta, k):
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != k:
        raise ValueError(f"theta has {theta.shape[-1]} entries, design has {k} columns")
    return theta


def log_likelihood(data: Dataset, theta, link) -> float:
    """Bernoulli log-likelihood ``sum_i y_i log p_i + (1 - y_i) log(1 - p_i)``.

    Returns ``-inf`` when the log link restriction fails at some row.
    """
    link = get_link(link)
    theta = _check_theta(theta, data.k)
    if theta.ndim != 1:
        raise ValueError("theta must be a vector")
    return float(log_likelihood_many(data, theta[None, :], link)[0])


def log_likelihood_many(data: Dataset, thetas, link) -> np.ndarray:
    """Vectorised :func:`log_likelihood` over the rows of ``thetas``."""
    link = get_link(link)
    thetas = np.atleast_2d(_check_theta(thetas, data.k))
    rows, trials, succ = data.aggregated
    eta = thetas @ rows.T
    lp, lq = link.log_probs(eta)
    ll = lp @ succ + lq @ (trials - succ)
    if link.restricted:
        ll = np.where(np.all(eta < 0, axis=1), ll, -np.inf)
    ll = np.where(np.all(np.isfinite(thetas), axis=1), ll, -np.inf)
    return ll


def posterior_probability(log_bf21) -> float:
    """Posterior probability of the alternative, ``B / (1 + B)``, equal prior odds."""
    return float(special.expit(log_bf21))


@dataclass(frozen=True)
class BayesFactorEstimate:
    """A Bayes factor ``B21`` estimate on the log scale."""

    log_bf21: float
    method: str
    T: int
    mc_std_error: float = 0.0
    log_m1: float | None = None
    log_m2: float | None = None
    posterior_prob_m2: float = field(init=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not self.mc_std_error >= 0:
            raise ValueError("mc_std_error must be non-negative")
        object.__setattr__(self, "posterior_prob_m2", posterior_probability(self.log_bf21))

    def as_dict(self) -> dict:
        return {
            "log_bf21": float(self.log_bf21),
            "posterior_prob": float(self.posterior_prob_m2),
            "mc_std_error": float(self.mc_std_error),
            "method": self.method,
            "T": int(self.T),
        }
