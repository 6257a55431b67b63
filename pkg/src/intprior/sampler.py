"""Markov chain whose invariant distributions are the integral priors.

One transition ``theta2 -> theta2'`` runs four steps:

1. pick ``k1`` design rows whose restriction to the null model's columns
   is nonsingular and simulate an imaginary training sample ``z1`` at
   ``theta2``;
2. draw ``theta1`` from the Jeffreys posterior given ``z1`` (tested
   coordinates pinned at zero);
3. pick ``k`` rows with a nonsingular submatrix and simulate ``z2`` at
   ``theta1``;
4. draw ``theta2'`` from the Jeffreys posterior given ``z2``.

The Jeffreys posterior on the success probabilities of the selected rows is
a product of Beta distributions whatever the link, so steps 2 and 4 draw
Beta variates and map them back to coefficients with a linear solve.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import NamedTuple

import numba
import numpy as np

from .core import Dataset, HypothesisTest, LinkSpec, RestrictionViolation, get_link
from .data import ReplicationIndex, count_replications

__all__ = [
    "ChainError",
    "ChainState",
    "ChainTrace",
    "DegenerateRestrictionError",
    "ModelContext",
    "TrainingSample",
    "Transition",
    "UnattainableSubmatrixError",
    "chain_seed",
    "markov_transition",
    "run_chain",
    "sample_posterior_coefficients",
    "select_full_rank_rows",
    "simulate_training_sample",
    "write_trace_csv",
]

RANK_TOL = 1e-10
MAX_RETRIES = 10**6


class UnattainableSubmatrixError(ValueError):
    """The design restricted to the requested columns has too low a rank."""


class DegenerateRestrictionError(RuntimeError):
    """Posterior draws kept violating the log-link restriction."""

    def __init__(self, msg, training_sample=None):
        super().__init__(msg)
        self.training_sample = training_sample


class ChainError(RuntimeError):
    """A transition failed; carries the iteration index."""

    def __init__(self, iteration, cause):
        super().__init__(f"iteration {iteration}: {cause}")
        self.iteration = iteration
        self.cause = cause


@dataclass(frozen=True)
class TrainingSample:
    """Imaginary training sample over ``m`` selected design rows.

    ``successes[i]`` out of ``q[i]`` Bernoulli draws at row ``row_indices[i]``;
    ``submatrix`` is the (square) design restricted to the model's free
    columns.
    """

    row_indices: np.ndarray
    submatrix: np.ndarray
    q: np.ndarray
    successes: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=np.int64)
        s = np.asarray(self.successes, dtype=np.int64)
        if np.any(q < 1) or np.any(s < 0) or np.any(s > q):
            raise ValueError("need q >= 1 and 0 <= successes <= q")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "successes", s)
        object.__setattr__(self, "row_indices", np.asarray(self.row_indices, dtype=np.int64))
        object.__setattr__(self, "submatrix", np.asarray(self.submatrix, dtype=float))

    @classmethod
    def _trusted(cls, row_indices, submatrix, q, successes):
        # hot-path constructor: inputs already validated by construction
        obj = object.__new__(cls)
        object.__setattr__(obj, "row_indices", row_indices)
        object.__setattr__(obj, "submatrix", submatrix)
        object.__setattr__(obj, "q", q)
        object.__setattr__(obj, "successes", successes)
        return obj

    @property
    def y_hat(self) -> np.ndarray:
        return self.successes / self.q

    def beta_params(self) -> tuple[np.ndarray, np.ndarray]:
        """Shape parameters of the Jeffreys posterior of each row probability."""
        return self.successes + 0.5, self.q - self.successes + 0.5


class ChainState(NamedTuple):
    theta1: np.ndarray
    theta2: np.ndarray


class Transition(NamedTuple):
    theta1: np.ndarray
    theta2: np.ndarray
    z1: TrainingSample
    z2: TrainingSample


def _rank_tol(X: np.ndarray) -> float:
    return RANK_TOL * max(float(np.max(np.abs(X))), 1.0) if X.size else RANK_TOL


def select_full_rank_rows(X, column_subset, m, rng, tol=None):
    """Pick ``m`` rows whose restriction to ``column_subset`` is nonsingular.

    Rows are visited in a uniformly random order and kept whenever they
    raise the rank (Gaussian elimination with partial pivoting).

    Returns
    -------
    rows : ndarray of int
        Indices of the selected rows, in selection order.
    submatrix : ndarray
        ``X[rows][:, column_subset]``, shape ``(m, m)``.
    """
    X = np.asarray(X, dtype=float)
    cols = list(column_subset)
    if len(cols) != m:
        raise ValueError(f"need a square submatrix: {len(cols)} columns for m={m}")
    Xs = np.ascontiguousarray(X[:, cols])
    return _select_rows(Xs, m, rng, _rank_tol(Xs) if tol is None else tol)


def _select_rows(Xs, m, rng, tol):
    chosen = _scan_rows(Xs, rng.permutation(Xs.shape[0]), m, tol)
    if chosen.size < m:
        raise UnattainableSubmatrixError(f"design columns have rank {chosen.size} < {m}")
    return chosen, Xs[chosen]


@numba.njit(cache=True)
def _scan_rows(Xs, order, m, tol):
    # incremental elimination; stops once m independent rows are found
    basis = np.empty((m, Xs.shape[1]))
    pivots = np.empty(m, dtype=np.int64)
    chosen = np.empty(m, dtype=np.int64)
    r = np.empty(Xs.shape[1])
    found = 0
    for i in order:
        r[:] = Xs[i]
        for j in range(found):
            p = pivots[j]
            if r[p] != 0.0:
                f = r[p] / basis[j, p]
                r -= f * basis[j]
        p = np.argmax(np.abs(r))
        if abs(r[p]) > tol:
            basis[found] = r
            pivots[found] = p
            chosen[found] = i
            found += 1
            if found == m:
                break
    return chosen[:found]


def simulate_training_sample(theta, design_rows, submatrix, counts, link, rng, row_indices=None):
    """Simulate successes at the selected rows under coefficients ``theta``.

    ``q_i`` is uniform on ``{1, ..., counts[i]}`` and the number of successes
    is ``Binomial(q_i, g^{-1}(x_i theta))``.
    """
    link = get_link(link)
    design_rows = np.atleast_2d(np.asarray(design_rows, dtype=float))
    eta = design_rows @ np.asarray(theta, dtype=float)
    if link.restricted and (eta >= 0).any():
        raise RestrictionViolation("coefficients violate the log-link restriction at a selected row")
    counts = np.asarray(counts, dtype=np.int64)
    q = rng.integers(1, counts + 1)
    s = rng.binomial(q, link.inverse(eta))
    if row_indices is None:
        row_indices = np.arange(len(q))
    return TrainingSample._trusted(row_indices, submatrix, q, s)


def sample_posterior_coefficients(ts, link, rng, check_rows=None, max_retries=MAX_RETRIES, return_probs=False):
    """Draw coefficients from the Jeffreys posterior given a training sample.

    Row probabilities are drawn from ``Beta(q y_hat + 1/2, q (1 - y_hat) + 1/2)``
    and mapped to coefficients through ``submatrix^{-1} g(p)``. For the log
    link, draws whose coefficients give ``check_rows @ v >= 0`` are redrawn.
    """
    link = get_link(link)
    a, b = ts.beta_params()
    for _ in range(max_retries if link.restricted else 1):
        p = rng.beta(a, b)
        v = _pivoted_solve(ts.submatrix, link.link(p))
        if not link.restricted:
            break
        rows = ts.submatrix if check_rows is None else check_rows
        if (rows @ v < 0).all():
            break
    else:
        raise DegenerateRestrictionError(
            f"no admissible draw in {max_retries} attempts", training_sample=ts
        )
    return (v, p) if return_probs else v


@numba.njit(cache=True)
def _pivoted_solve(A, b):
    # Gaussian elimination with partial pivoting for small dense systems
    n = A.shape[0]
    M = np.empty((n, n + 1))
    M[:, :n] = A
    M[:, n] = b
    for c in range(n):
        p = c + np.argmax(np.abs(M[c:, c]))
        if M[p, c] == 0.0:
            raise ValueError("singular submatrix")
        if p != c:
            tmp = M[c].copy()
            M[c] = M[p]
            M[p] = tmp
        for r in range(c + 1, n):
            f = M[r, c] / M[c, c]
            if f != 0.0:
                M[r, c:] -= f * M[c, c:]
    x = np.empty(n)
    for r in range(n - 1, -1, -1):
        acc = M[r, n]
        for j in range(r + 1, n):
            acc -= M[r, j] * x[j]
        x[r] = acc / M[r, r]
    return x


@dataclass(frozen=True)
class ModelContext:
    """Everything a transition needs: data, test, link and replication counts.

    ``repl_design`` optionally replaces the design when counting replications,
    e.g. a version with continuous covariates grouped into intervals.
    """

    data: Dataset
    test: HypothesisTest
    link: LinkSpec
    repl1: ReplicationIndex = None
    repl2: ReplicationIndex = None
    max_retries: int = MAX_RETRIES
    _n1: np.ndarray = field(init=False, repr=False)
    _n2: np.ndarray = field(init=False, repr=False)
    _x1: np.ndarray = field(init=False, repr=False)
    _tol1: float = field(init=False, repr=False)
    _tol2: float = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "link", get_link(self.link))
        if self.test.k != self.data.k:
            raise ValueError("hypothesis test and data disagree on k")
        X = self.data.X
        if self.repl1 is None:
            object.__setattr__(self, "repl1", count_replications(X, self.test.free1))
        if self.repl2 is None:
            object.__setattr__(self, "repl2", count_replications(X, range(self.data.k)))
        object.__setattr__(self, "_n1", self.repl1.lookup(X))
        object.__setattr__(self, "_n2", self.repl2.lookup(X))
        object.__setattr__(self, "_x1", np.ascontiguousarray(X[:, self.test.free1]))
        object.__setattr__(self, "_tol1", _rank_tol(self._x1))
        object.__setattr__(self, "_tol2", _rank_tol(X))
        for cols, m in ((self.test.free1, self.test.k1), (list(range(self.data.k)), self.data.k)):
            if np.linalg.matrix_rank(X[:, cols], tol=_rank_tol(X[:, cols])) < m:
                raise UnattainableSubmatrixError(f"columns {cols} of the design have rank < {m}")

    @classmethod
    def build(cls, data, k0, link="logit", repl_design=None, **kw):
        test = HypothesisTest(k0, data.k)
        if repl_design is not None:
            R = np.asarray(repl_design, dtype=float)
            kw.setdefault("repl1", count_replications(R, test.free1))
            kw.setdefault("repl2", count_replications(R, range(data.k)))
        return cls(data, test, get_link(link), **kw)

    @property
    def k0(self) -> int:
        return self.test.k0

    @property
    def n1_counts(self) -> np.ndarray:
        """``N1`` for every design row."""
        return self._n1

    @property
    def n2_counts(self) -> np.ndarray:
        """``N2`` for every design row."""
        return self._n2


def markov_transition(theta2, ctx: ModelContext, rng) -> Transition:
    """One ``theta2 -> theta2'`` step of the integral-prior chain."""
    X, link, k0, k = ctx.data.X, ctx.link, ctx.k0, ctx.data.k
    rows1, R2 = _select_rows(ctx._x1, ctx.test.k1, rng, ctx._tol1)
    z1 = simulate_training_sample(theta2, X[rows1], R2, ctx.n1_counts[rows1], link, rng, rows1)
    v = sample_posterior_coefficients(z1, link, rng, ctx._x1, ctx.max_retries)
    theta1 = np.zeros(k)
    theta1[k0:] = v

    rows2, S = _select_rows(X, k, rng, ctx._tol2)
    z2 = simulate_training_sample(theta1, X[rows2], S, ctx.n2_counts[rows2], link, rng, rows2)
    theta2_new = sample_posterior_coefficients(z2, link, rng, X, ctx.max_retries)
    return Transition(theta1, theta2_new, z1, z2)


def chain_seed(master: int, index: int) -> int:
    """64-bit seed of chain ``index`` derived from a master seed.

    Defined as the first 64 bits of ``numpy.random.SeedSequence(master,
    spawn_key=(index,))``; this mapping must not change.
    """
    state = np.random.SeedSequence(int(master), spawn_key=(int(index),)).generate_state(1, np.uint64)
    return int(state[0])


@dataclass
class ChainTrace:
    """Draws of both coordinate chains, optionally with their training samples.

    ``z1_*`` and ``z2_*`` hold the row indices, replication draws and success
    counts of each retained training sample, one row per iteration.
    """

    theta1: np.ndarray
    theta2: np.ndarray
    seed: int | None = None
    k0: int = 1
    z1_rows: np.ndarray | None = None
    z1_q: np.ndarray | None = None
    z1_s: np.ndarray | None = None
    z2_rows: np.ndarray | None = None
    z2_q: np.ndarray | None = None
    z2_s: np.ndarray | None = None

    @property
    def T(self) -> int:
        return self.theta2.shape[0]

    def __len__(self):
        return self.T

    @property
    def theta1_free(self) -> np.ndarray:
        """Draws of the coordinates left free under the null model."""
        return self.theta1[:, self.k0:]

    @property
    def has_training_samples(self) -> bool:
        return self.z2_rows is not None

    def training_samples(self, which: int, X, cols=None) -> list[TrainingSample]:
        """Rebuild the retained ``z1`` (``which=1``) or ``z2`` samples."""
        rows, q, s = (self.z1_rows, self.z1_q, self.z1_s) if which == 1 else (self.z2_rows, self.z2_q, self.z2_s)
        if rows is None:
            raise ValueError("trace was run without retaining training samples")
        X = np.asarray(X, dtype=float)
        if cols is None:
            cols = range(self.k0, X.shape[1]) if which == 1 else range(X.shape[1])
        cols = list(cols)
        return [TrainingSample(r, X[r][:, cols], qq, ss) for r, qq, ss in zip(rows, q, s)]


def run_chain(ctx: ModelContext, T: int, burn_in: int | None = None, seed=None, retain_z2=False, theta0=None) -> ChainTrace:
    """Run the chain for ``burn_in + T`` transitions and keep the last ``T``.

    ``theta0`` defaults to the maximum likelihood estimate under the full
    model, or zeros when that fit fails. ``burn_in`` defaults to ``T // 10``.
    With ``retain_z2`` the training samples of both steps are kept.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    if burn_in is None:
        burn_in = T // 10
    if burn_in < 0:
        raise ValueError("burn_in must be non-negative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    k, k0, k1 = ctx.data.k, ctx.k0, ctx.test.k1
    if theta0 is None:
        theta0 = _initial_theta(ctx)
    theta2 = np.asarray(theta0, dtype=float).copy()

    th1 = np.empty((T, k))
    th2 = np.empty((T, k))
    if retain_z2:
        z1r, z1q, z1s = (np.empty((T, k1), dtype=np.int64) for _ in range(3))
        z2r, z2q, z2s = (np.empty((T, k), dtype=np.int64) for _ in range(3))
    for it in range(burn_in + T):
        try:
            step = markov_transition(theta2, ctx, rng)
        except (DegenerateRestrictionError, RestrictionViolation, UnattainableSubmatrixError) as exc:
            raise ChainError(it, exc) from exc
        theta2 = step.theta2
        t = it - burn_in
        if t < 0:
            continue
        th1[t] = step.theta1
        th2[t] = step.theta2
        if retain_z2:
            z1r[t], z1q[t], z1s[t] = step.z1.row_indices, step.z1.q, step.z1.successes
            z2r[t], z2q[t], z2s[t] = step.z2.row_indices, step.z2.q, step.z2.successes
    trace = ChainTrace(th1, th2, seed=seed if isinstance(seed, (int, np.integer)) else None, k0=k0)
    if retain_z2:
        trace.z1_rows, trace.z1_q, trace.z1_s = z1r, z1q, z1s
        trace.z2_rows, trace.z2_q, trace.z2_s = z2r, z2q, z2s
    return trace


def _initial_theta(ctx: ModelContext) -> np.ndarray:
    from .estimators import IrlsError, irls_fit

    try:
        theta = irls_fit(ctx.data, ctx.link).theta
    except IrlsError:
        theta = np.zeros(ctx.data.k)
    if ctx.link.restricted and not np.all(ctx.data.X @ theta < 0):
        theta = np.zeros(ctx.data.k)
        theta[-1] = -1.0
    return theta


def write_trace_csv(trace: ChainTrace, dest, column_names=None) -> None:
    """Write one record per iteration: index, then theta1 and theta2 entries."""
    k = trace.theta2.shape[1]
    names = list(column_names) if column_names is not None else [f"b{j + 1}" for j in range(k)]
    header = ["iteration"] + [f"theta1:{c}" for c in names] + [f"theta2:{c}" for c in names]

    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t in range(trace.T):
            w.writerow([t + 1, *map(repr, trace.theta1[t].tolist()), *map(repr, trace.theta2[t].tolist())])

    if hasattr(dest, "write"):
        _write(dest)
    else:
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            _write(fh)
