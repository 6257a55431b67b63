"""Exact integral priors and Bayes factor for two-row designs.

With ``k = 2`` (one slope, one intercept), ``k0 = 1`` and a design made of
two distinct rows ``(a, 1)`` and ``(b, 1)``, the success probabilities at
the two rows are themselves the Beta draws of the training-sample
posteriors. Every step of the chain then marginalises in closed form with
Beta-binomial algebra, so the training sample ``z2`` follows a finite Markov
chain whose transition matrix and stationary law can be computed exactly.
None of this depends on the link function.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import special

from .core import Dataset, LinkSpec, get_link
from .data import ReplicationIndex

__all__ = [
    "FiniteChainSpec",
    "OracleResult",
    "exact_bayes_factor",
    "exact_transition_matrix",
    "solve_oracle",
    "stationary_distribution",
    "DEMO_SPECS",
]


@dataclass(frozen=True)
class FiniteChainSpec:
    """Two distinct design rows ``(a, 1)``, ``(b, 1)`` with their data.

    Parameters
    ----------
    a, b
        Covariate values of the two rows.
    trials
        Number of observations at each row (the row multiplicities in ``X``).
    successes
        Observed successes at each row.
    n1_bound
        Replication bound ``N1`` of the intercept-only sub-row; defaults to
        the sample size.
    n2_bounds
        Replication bounds ``N2`` of the two rows; default to ``trials``.
    """

    a: float = 1.0
    b: float = 0.0
    trials: tuple = (4, 4)
    successes: tuple = (1, 3)
    n1_bound: int | None = None
    n2_bounds: tuple | None = None
    link: LinkSpec = LinkSpec("logit")

    def __post_init__(self):
        object.__setattr__(self, "link", get_link(self.link))
        object.__setattr__(self, "trials", tuple(int(t) for t in self.trials))
        object.__setattr__(self, "successes", tuple(int(s) for s in self.successes))
        if self.n1_bound is None:
            object.__setattr__(self, "n1_bound", sum(self.trials))
        if self.n2_bounds is None:
            object.__setattr__(self, "n2_bounds", self.trials)
        object.__setattr__(self, "n2_bounds", tuple(int(v) for v in self.n2_bounds))
        if self.a == self.b:
            raise ValueError("the two rows must be distinct")
        if self.link.restricted:
            raise ValueError("the exact oracle does not support the log link")
        if len(self.trials) != 2 or len(self.successes) != 2 or len(self.n2_bounds) != 2:
            raise ValueError("exactly two rows are required")
        if min(self.trials) < 1:
            raise ValueError("each row needs at least one observation")
        if any(not 0 <= s <= t for s, t in zip(self.successes, self.trials)):
            raise ValueError("successes must lie in [0, trials]")
        if self.n1_bound < 1 or min(self.n2_bounds) < 1:
            raise ValueError("replication bounds must be positive")

    @property
    def n(self) -> int:
        return sum(self.trials)

    @cached_property
    def dataset(self) -> Dataset:
        rows = np.array([[self.a, 1.0], [self.b, 1.0]])
        X = np.repeat(rows, self.trials, axis=0)
        y = np.concatenate(
            [np.r_[np.ones(s), np.zeros(t - s)] for s, t in zip(self.successes, self.trials)]
        )
        return Dataset(X, y, ("x", "(Intercept)"))

    def replication_indices(self) -> tuple[ReplicationIndex, ReplicationIndex]:
        """``(N1, N2)`` to hand to :class:`intprior.sampler.ModelContext`."""
        repl1 = ReplicationIndex((1,), {(1.0,): self.n1_bound})
        repl2 = ReplicationIndex(
            (0, 1), {(float(self.a), 1.0): self.n2_bounds[0], (float(self.b), 1.0): self.n2_bounds[1]}
        )
        return repl1, repl2

    @cached_property
    def z2_states(self) -> np.ndarray:
        """Rows ``(q_a, s_a, q_b, s_b)`` enumerating the ``z2`` state space."""
        na, nb = self.n2_bounds
        side_a = [(q, s) for q in range(1, na + 1) for s in range(q + 1)]
        side_b = [(q, s) for q in range(1, nb + 1) for s in range(q + 1)]
        return np.array([(qa, sa, qb, sb) for qa, sa in side_a for qb, sb in side_b], dtype=np.int64)

    @cached_property
    def z1_states(self) -> np.ndarray:
        """Rows ``(q, s)`` enumerating the ``z1`` state space."""
        return np.array([(q, s) for q in range(1, self.n1_bound + 1) for s in range(q + 1)], dtype=np.int64)

    def state_index(self, qa, sa, qb, sb) -> int:
        key = {tuple(r): i for i, r in enumerate(self.z2_states.tolist())}
        return key[(int(qa), int(sa), int(qb), int(sb))]

    def flip_permutation(self) -> np.ndarray:
        """Index map of the success/failure relabelling ``s -> q - s``."""
        st = self.z2_states
        flipped = np.column_stack([st[:, 0], st[:, 0] - st[:, 1], st[:, 2], st[:, 2] - st[:, 3]])
        lookup = {tuple(r): i for i, r in enumerate(st.tolist())}
        return np.array([lookup[tuple(r)] for r in flipped.tolist()])


def _log_betabinom(s, q, a, b):
    return (
        special.gammaln(q + 1) - special.gammaln(s + 1) - special.gammaln(q - s + 1)
        + special.betaln(s + a, q - s + b) - special.betaln(a, b)
    )


def _log_choose(n, k):
    return special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1)


def _half_step(spec: FiniteChainSpec) -> np.ndarray:
    """``A[z2, z1]``: probability of drawing ``z1`` (steps 1) from ``theta2 ~ pi(.|z2)``."""
    st, z1 = spec.z2_states, spec.z1_states
    w_row = np.asarray(spec.trials, dtype=float) / spec.n
    q, s = z1[:, 0][None, :], z1[:, 1][None, :]
    A = np.zeros((st.shape[0], z1.shape[0]))
    for r, (qc, sc) in enumerate(((0, 1), (2, 3))):
        alpha = (st[:, sc] + 0.5)[:, None]
        beta = (st[:, qc] - st[:, sc] + 0.5)[:, None]
        A += w_row[r] * np.exp(_log_betabinom(s, q, alpha, beta))
    return A / spec.n1_bound


def _return_step(spec: FiniteChainSpec) -> np.ndarray:
    """``K[z1, z2]``: probability of drawing ``z2`` (step 3) from ``theta1 ~ pi(.|z1)``."""
    st, z1 = spec.z2_states, spec.z1_states
    q, s = z1[:, 0][:, None], z1[:, 1][:, None]
    qa, sa, qb, sb = (st[:, j][None, :] for j in range(4))
    a1, b1 = s + 0.5, q - s + 0.5
    logk = (
        _log_choose(qa, sa) + _log_choose(qb, sb)
        + special.betaln(a1 + sa + sb, b1 + (qa - sa) + (qb - sb)) - special.betaln(a1, b1)
    )
    return np.exp(logk) / (spec.n2_bounds[0] * spec.n2_bounds[1])


def exact_transition_matrix(spec: FiniteChainSpec) -> np.ndarray:
    """Transition matrix of the embedded ``z2 -> z2''`` chain."""
    return _half_step(spec) @ _return_step(spec)


def stationary_distribution(P: np.ndarray, method: str = "solve", tol: float = 1e-14, max_iter: int = 100_000) -> np.ndarray:
    """Stationary law of a row-stochastic matrix.

    ``solve`` replaces one balance equation of ``(P^T - I) w = 0`` by the
    normalisation; ``power`` iterates ``w <- w P`` from the uniform law.
    """
    n = P.shape[0]
    if method == "solve":
        M = P.T - np.eye(n)
        M[-1, :] = 1.0
        rhs = np.zeros(n)
        rhs[-1] = 1.0
        w = np.linalg.solve(M, rhs)
    elif method == "power":
        w = np.full(n, 1.0 / n)
        for _ in range(max_iter):
            nxt = w @ P
            if np.abs(nxt - w).max() < tol:
                w = nxt
                break
            w = nxt
    else:
        raise ValueError(f"unknown method {method!r}")
    w = np.clip(w, 0.0, None)
    return w / w.sum()


@dataclass(frozen=True)
class OracleResult:
    log_bf21: float
    log_m1: float
    log_m2: float
    stationary: np.ndarray
    z1_weights: np.ndarray
    transition: np.ndarray


def _log_m2(states, w, trials, successes):
    ta, tb = trials
    ya, yb = successes
    aa, ba = states[:, 1] + 0.5, states[:, 0] - states[:, 1] + 0.5
    ab, bb = states[:, 3] + 0.5, states[:, 2] - states[:, 3] + 0.5
    comp = (
        special.betaln(aa + ya, ba + ta - ya) - special.betaln(aa, ba)
        + special.betaln(ab + yb, bb + tb - yb) - special.betaln(ab, bb)
    )
    with np.errstate(divide="ignore"):
        return float(special.logsumexp(comp + np.log(w)))


def _log_m1(z1, u, trials, successes):
    n, y = sum(trials), sum(successes)
    a, b = z1[:, 1] + 0.5, z1[:, 0] - z1[:, 1] + 0.5
    comp = special.betaln(a + y, b + n - y) - special.betaln(a, b)
    with np.errstate(divide="ignore"):
        return float(special.logsumexp(comp + np.log(u)))


def solve_oracle(spec: FiniteChainSpec) -> OracleResult:
    """Transition matrix, stationary laws and exact marginal likelihoods."""
    A, K = _half_step(spec), _return_step(spec)
    P = A @ K
    w = stationary_distribution(P)
    u = w @ A
    lm2 = _log_m2(spec.z2_states, w, spec.trials, spec.successes)
    lm1 = _log_m1(spec.z1_states, u, spec.trials, spec.successes)
    return OracleResult(lm2 - lm1, lm1, lm2, w, u, P)


def exact_bayes_factor(spec: FiniteChainSpec) -> float:
    """Exact ``log B21`` under the integral priors of a two-row design."""
    return solve_oracle(spec).log_bf21


DEMO_SPECS = {
    "default": FiniteChainSpec(1.0, 0.0, (4, 4), (1, 3)),
    "balanced": FiniteChainSpec(1.0, 0.0, (4, 4), (2, 2)),
    "imbalanced": FiniteChainSpec(1.0, 0.0, (20, 20), (0, 20), n1_bound=10, n2_bounds=(5, 5)),
}
