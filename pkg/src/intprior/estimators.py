"""Bayes factor estimators built on integral-prior chain output.

Four estimators are provided:

* ``ergodic``: ratio of likelihood sums along the two coordinate chains;
* ``importance_kde``: importance sampling from ``Normal(mle, 2 cov)`` with
  the priors replaced by product-Gaussian kernel density estimates;
* ``importance_rb``: as above, with each prior replaced by the average of
  the exact training-sample posteriors visited by the chain;
* ``bic``: the Schwarz approximation, as a rough comparator.

Monte Carlo standard errors of the importance estimators combine the
variance of the importance weights with a batch-means estimate of the
variability carried over from the chain through the prior estimate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import special, stats

from .core import BayesFactorEstimate, Dataset, get_link, log_likelihood_many
from .sampler import ChainTrace, ModelContext, TrainingSample, run_chain

__all__ = [
    "EstimatorError",
    "GaussianImportance",
    "IrlsError",
    "IrlsResult",
    "KdeModel",
    "bic_bf",
    "ergodic_bf",
    "estimate_from_chain",
    "fit_models",
    "importance_bf",
    "irls_fit",
    "kde_fit",
    "pooled_estimate",
    "rao_blackwell_prior_density",
    "score",
]

N_BATCHES = 20
MAX_KDE_SUPPORT = 50_000


class IrlsError(RuntimeError):
    """Maximum likelihood fit failed (separation or singular information)."""


class EstimatorError(RuntimeError):
    """A Bayes factor estimate could not be formed."""


# --------------------------------------------------------------------------
# maximum likelihood


@dataclass(frozen=True)
class IrlsResult:
    theta: np.ndarray
    """Full-length coefficient vector; non-free coordinates are zero."""
    cov: np.ndarray
    """Inverse expected information over the free coordinates."""
    loglik: float
    free: tuple
    n_iter: int

    @property
    def free_theta(self) -> np.ndarray:
        return self.theta[list(self.free)]

    @property
    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))

    @property
    def wald_pvalues(self) -> np.ndarray:
        return 2.0 * stats.norm.sf(np.abs(self.free_theta / self.std_errors))

    @property
    def odds_ratios(self) -> np.ndarray:
        return np.exp(self.free_theta)


def _glm_terms(rows, trials, succ, beta, link):
    eta = rows @ beta
    mu = np.clip(link.inverse(eta), 1e-15, 1 - 1e-15)
    dmu = link.inverse_deriv(eta)
    var = mu * (1.0 - mu)
    u = rows.T @ ((succ - trials * mu) * dmu / var)
    info = (rows * (trials * dmu**2 / var)[:, None]).T @ rows
    return u, info


def score(data: Dataset, theta, link, free=None) -> np.ndarray:
    """Gradient of the log-likelihood with respect to the free coordinates."""
    link = get_link(link)
    free = list(range(data.k)) if free is None else list(free)
    rows, trials, succ = data.aggregated
    return _glm_terms(rows[:, free], trials, succ, np.asarray(theta, dtype=float)[free], link)[0]


def irls_fit(data: Dataset, link="logit", free=None, tol=1e-8, max_iter=100) -> IrlsResult:
    """Maximum likelihood by Fisher scoring (iteratively reweighted least squares).

    Iterates until the score norm drops below ``tol``. Steps that lower the
    likelihood or leave the log-link domain are halved.

    Raises
    ------
    IrlsError
        When coefficients diverge (``|theta| > 1e3``), a standard error
        exceeds ``1e3`` (both typical of separation) or the information
        matrix is singular.
    """
    link = get_link(link)
    free = tuple(range(data.k)) if free is None else tuple(int(j) for j in free)
    rows, trials, succ = data.aggregated
    R = rows[:, list(free)]
    if np.linalg.matrix_rank(R) < len(free):
        raise IrlsError("design restricted to the free coordinates is rank deficient")

    def loglik(b):
        th = np.zeros(data.k)
        th[list(free)] = b
        return float(log_likelihood_many(data, th, link)[0])

    beta = np.zeros(len(free))
    if free[-1] == data.k - 1:
        beta[-1] = float(link.link(np.clip(succ.sum() / trials.sum(), 0.01, 0.99)))
    ll = loglik(beta)
    for it in range(1, max_iter + 1):
        u, info = _glm_terms(R, trials, succ, beta, link)
        if np.linalg.norm(u) < tol:
            break
        try:
            step = np.linalg.solve(info, u)
        except np.linalg.LinAlgError:
            raise IrlsError("singular information matrix") from None
        for _ in range(60):
            cand = beta + step
            ll_new = loglik(cand)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12 * abs(ll):
                break
            step *= 0.5
        beta, ll = cand, ll_new
        if np.max(np.abs(beta)) > 1e3:
            raise IrlsError("coefficients diverge; the data may be separated")
    u, info = _glm_terms(R, trials, succ, beta, link)
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise IrlsError("singular information matrix") from None
    if not np.all(np.diag(cov) < 1e6):
        # saturated fit: the score vanishes before |theta| reaches the bound
        raise IrlsError("information matrix nearly singular at the optimum; the data may be separated")
    theta = np.zeros(data.k)
    theta[list(free)] = beta
    return IrlsResult(theta, (cov + cov.T) / 2.0, ll, free, it)


# --------------------------------------------------------------------------
# densities


@dataclass(frozen=True)
class GaussianImportance:
    """Multivariate normal importance density."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float)
        if not np.allclose(cov, cov.T, atol=1e-12, rtol=0):
            raise ValueError("covariance must be symmetric")
        object.__setattr__(self, "covariance", (cov + cov.T) / 2.0)
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "_chol", np.linalg.cholesky(self.covariance))

    @classmethod
    def from_fit(cls, fit: IrlsResult, inflation: float = 2.0):
        return cls(fit.free_theta, inflation * fit.cov)

    def sample(self, rng, size: int) -> np.ndarray:
        z = rng.standard_normal((size, self.mean.size))
        return self.mean + z @ self._chol.T

    def logpdf(self, x) -> np.ndarray:
        x = np.atleast_2d(x)
        d = self.mean.size
        sol = np.linalg.solve(self._chol, (x - self.mean).T)
        logdet = 2.0 * np.log(np.diag(self._chol)).sum()
        return -0.5 * (np.sum(sol**2, axis=0) + logdet + d * np.log(2.0 * np.pi))


@dataclass(frozen=True)
class KdeModel:
    """Product-Gaussian kernel density estimate."""

    support_points: np.ndarray
    bandwidths: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.support_points, dtype=float))
        h = np.asarray(self.bandwidths, dtype=float).ravel()
        if pts.shape[1] != h.size:
            raise ValueError("one bandwidth per coordinate is required")
        if np.any(h <= 0):
            raise ValueError("bandwidths must be positive")
        object.__setattr__(self, "support_points", pts)
        object.__setattr__(self, "bandwidths", h)

    @property
    def dim(self) -> int:
        return self.bandwidths.size

    @property
    def _log_norm(self) -> float:
        return -np.log(self.bandwidths).sum() - 0.5 * self.dim * np.log(2.0 * np.pi)

    def _kernel_chunks(self, x, chunk):
        # unnormalised kernel values exp(-d2/2), support points along rows
        xs = np.atleast_2d(x) / self.bandwidths
        ss = self.support_points / self.bandwidths
        hx2 = 0.5 * np.sum(xs**2, axis=1)
        hs2 = 0.5 * np.sum(ss**2, axis=1)
        for lo in range(0, ss.shape[0], chunk):
            E = ss[lo:lo + chunk] @ xs.T
            E -= hs2[lo:lo + chunk, None]
            E -= hx2[None, :]
            np.minimum(E, 0.0, out=E)
            np.exp(E, out=E)
            yield lo, E

    def logpdf(self, x, chunk: int = 1024) -> np.ndarray:
        x = np.atleast_2d(x)
        acc = np.zeros(x.shape[0])
        for _, E in self._kernel_chunks(x, chunk):
            acc += E.sum(axis=0)
        with np.errstate(divide="ignore"):
            return np.log(acc) - np.log(self.support_points.shape[0]) + self._log_norm

    def pdf(self, x) -> np.ndarray:
        return np.exp(self.logpdf(x))


def _thin(draws: np.ndarray, max_points: int) -> np.ndarray:
    if draws.shape[0] <= max_points:
        return draws
    idx = np.unique(np.round(np.linspace(0, draws.shape[0] - 1, max_points)).astype(np.int64))
    return draws[idx]


def kde_fit(draws, rule: str = "scott", bandwidths=None, scale: float = 1.0, max_support: int = MAX_KDE_SUPPORT, min_draws: int = 100) -> KdeModel:
    """Fit a product-Gaussian KDE to chain draws (one row per draw).

    The default bandwidth of coordinate ``j`` is
    ``sd_j * (4 / ((d + 2) T)) ** (1 / (d + 4))``, multiplied by ``scale``.
    Chains longer than ``max_support`` are thinned uniformly.
    """
    draws = np.asarray(draws, dtype=float)
    draws = draws[:, None] if draws.ndim == 1 else np.atleast_2d(draws)
    pts = _thin(draws, max_support)
    T, d = pts.shape
    if bandwidths is None:
        if rule != "scott":
            raise ValueError(f"unknown bandwidth rule {rule!r}")
        if T < min_draws:
            raise EstimatorError(f"need at least {min_draws} draws for a KDE, got {T}")
        sd = pts.std(axis=0, ddof=1)
        if np.any(~(sd > 0)):
            raise EstimatorError("degenerate trace: a coordinate has zero variance")
        h = sd * (4.0 / ((d + 2) * T)) ** (1.0 / (d + 4))
    else:
        h = np.broadcast_to(np.asarray(bandwidths, dtype=float), (d,))
    return KdeModel(pts, h * scale)


def _log_beta_pdf(lp, lq, a, b):
    return (a - 1.0) * lp + (b - 1.0) * lq - special.betaln(a, b)


def _training_logpdf(theta, ts_sub, a, b, link):
    """Exact log posterior density of coefficients given one training sample.

    ``theta`` has shape ``(N, m)``; returns shape ``(N,)``.
    """
    eta = theta @ ts_sub.T
    lp, lq = link.log_probs(eta)
    out = _log_beta_pdf(lp, lq, a, b).sum(axis=1) + link.log_inverse_deriv(eta).sum(axis=1)
    out += np.log(abs(np.linalg.det(ts_sub)))
    if link.restricted:
        out = np.where(np.all(eta < 0, axis=1), out, -np.inf)
    return out


def rao_blackwell_prior_density(theta, z_draws: Sequence[TrainingSample], link, check_rows=None, rng=None, n_accept: int = 4000):
    """Mixture of exact training-sample posterior densities at ``theta``.

    ``theta`` holds the free coordinates (one vector or a stack of them).
    Identical training samples are merged into one weighted component. For
    the log link each component is renormalised by its estimated acceptance
    probability under the restriction ``check_rows @ theta < 0``.
    """
    link = get_link(link)
    th = np.atleast_2d(np.asarray(theta, dtype=float))
    if not len(z_draws):
        raise ValueError("need at least one training sample")
    stack = _ComponentStack(list(z_draws), link)
    logw = np.log(stack.weights)
    if link.restricted and check_rows is not None:
        rng = np.random.default_rng(rng)
        logw = logw - np.array([_log_acceptance(c, link, check_rows, rng, n_accept) for c in stack.reps])
    L = stack.logpdf_block(0, len(stack), th) + logw[:, None]
    dens = special.logsumexp(L, axis=0)
    if link.restricted and check_rows is not None:
        dens = np.where(np.all(th @ np.asarray(check_rows).T < 0, axis=1), dens, -np.inf)
    out = np.exp(dens)
    return float(out[0]) if np.ndim(theta) == 1 else out


def _log_acceptance(ts, link, check_rows, rng, n):
    if check_rows is None:
        return 0.0
    a, b = ts.beta_params()
    p = rng.beta(a, b, size=(n, a.size))
    v = np.linalg.solve(ts.submatrix, link.link(p).T).T
    ok = np.all(v @ np.asarray(check_rows).T < 0, axis=1).mean()
    return np.log(max(ok, 1.0 / n))


# --------------------------------------------------------------------------
# estimators


def _batch_var_of_mean(x: np.ndarray, n_batches: int = N_BATCHES) -> float:
    """Batch-means variance of the mean of an autocorrelated sequence."""
    T = x.shape[0]
    b = min(n_batches, T)
    if b < 2:
        return np.inf
    size = T // b
    means = x[: size * b].reshape(b, size).mean(axis=1)
    return float(means.var(ddof=1) / b)


def ergodic_bf(trace: ChainTrace, data: Dataset, link) -> BayesFactorEstimate:
    """Ratio of likelihood averages along the ``theta2`` and ``theta1`` chains.

    The standard error is a batch-means estimate (20 batches) for the log of
    a ratio of means.
    """
    link = get_link(link)
    if trace.theta1.shape != trace.theta2.shape:
        raise ValueError("coordinate chains differ in length or dimension")
    ll2 = log_likelihood_many(data, trace.theta2, link)
    ll1 = log_likelihood_many(data, trace.theta1, link)
    T = trace.T
    lm2 = special.logsumexp(ll2) - np.log(T)
    lm1 = special.logsumexp(ll1) - np.log(T)
    if not (np.isfinite(lm1) and np.isfinite(lm2)):
        raise EstimatorError("all likelihood values vanish along a chain")
    d = np.exp(ll2 - lm2) - np.exp(ll1 - lm1)
    se = np.sqrt(_batch_var_of_mean(d)) if T > 1 else np.inf
    return BayesFactorEstimate(lm2 - lm1, "ergodic", T, se, log_m1=lm1, log_m2=lm2)


def _model_pieces(ctx: ModelContext, model: int):
    data = ctx.data
    if model == 1:
        free = ctx.test.free1
        return free, data.X[:, free]
    return list(range(data.k)), data.X


def _importance_log_marginal(ctx, model, fit, prior_eval, n_draws, rng):
    """Importance-sampling estimate of ``log m_i`` and its error pieces.

    ``prior_eval(theta_free, logfg)`` must return ``(log prior density at each
    draw, per-iteration log contributions)`` where the contributions are
    ``log mean_s exp(logfg_s) * pi(theta_s | component t)``.
    """
    free, check = _model_pieces(ctx, model)
    G = GaussianImportance.from_fit(fit)
    th = G.sample(rng, n_draws)
    full = np.zeros((n_draws, ctx.data.k))
    full[:, free] = th
    ll = log_likelihood_many(ctx.data, full, ctx.link)
    logfg = ll - G.logpdf(th)
    keep = np.isfinite(logfg)
    if not keep.any():
        raise EstimatorError(f"every importance draw for model M{model} violates the link restriction")
    logfg = np.where(keep, logfg, -np.inf)
    log_prior, log_contrib = prior_eval(th, logfg)
    logw = logfg + log_prior
    lm = special.logsumexp(logw) - np.log(n_draws)
    if not np.isfinite(lm):
        raise EstimatorError(f"importance weights for model M{model} all vanish")
    w = np.exp(logw - lm)
    rel_var_is = w.var(ddof=1) / n_draws if n_draws > 1 else np.inf
    contrib = np.exp(log_contrib - lm)
    return lm, rel_var_is, contrib


def _kde_evaluator(kde: KdeModel, chunk: int = 1024):
    def evaluate(th, logfg):
        n = th.shape[0]
        acc = np.zeros(n)
        shift = np.max(logfg[np.isfinite(logfg)])
        wexp = np.exp(logfg - shift)
        contrib = np.empty(kde.support_points.shape[0])
        for lo, E in kde._kernel_chunks(th, chunk):
            acc += E.sum(axis=0)
            contrib[lo:lo + E.shape[0]] = E @ wexp
        S = kde.support_points.shape[0]
        with np.errstate(divide="ignore"):
            log_prior = np.log(acc) - np.log(S) + kde._log_norm
            log_contrib = np.log(contrib) + shift + kde._log_norm - np.log(n)
        return log_prior, log_contrib

    return evaluate


class _ComponentStack:
    """Distinct training-sample posteriors stacked for vectorised evaluation."""

    def __init__(self, samples, link):
        groups: dict = {}
        order = np.empty(len(samples), dtype=np.int64)
        for t, ts in enumerate(samples):
            key = tuple(sorted(zip(map(tuple, ts.submatrix.tolist()), ts.q.tolist(), ts.successes.tolist())))
            order[t] = groups.setdefault(key, len(groups))
        first = {}
        for t, u in enumerate(order):
            first.setdefault(int(u), t)
        reps = [samples[first[u]] for u in range(len(groups))]
        self.link = link
        self.order = order
        self.weights = np.bincount(order, minlength=len(reps)) / len(samples)
        self.sub = np.stack([c.submatrix for c in reps])
        self.a = np.stack([c.beta_params()[0] for c in reps])
        self.b = np.stack([c.beta_params()[1] for c in reps])
        self.const = np.log(np.abs(np.linalg.det(self.sub))) - special.betaln(self.a, self.b).sum(axis=1)
        self.reps = reps

    def __len__(self):
        return len(self.reps)

    def logpdf_block(self, lo, hi, th):
        """Log densities of components ``lo:hi`` at points ``th``; shape ``(hi - lo, n)``."""
        eta = np.einsum("umj,nj->unm", self.sub[lo:hi], th)
        lp, lq = self.link.log_probs(eta)
        a, b = self.a[lo:hi, None, :], self.b[lo:hi, None, :]
        out = ((a - 1.0) * lp + (b - 1.0) * lq + self.link.log_inverse_deriv(eta)).sum(axis=2)
        out += self.const[lo:hi, None]
        if self.link.restricted:
            out = np.where(np.all(eta < 0, axis=2), out, -np.inf)
        return out


def _rb_evaluator(samples, link, check_rows, rng, budget: int = 2_000_000):
    stack = _ComponentStack(samples, link)
    log_acc = np.zeros(len(stack))
    if link.restricted:
        log_acc = np.array([_log_acceptance(c, link, check_rows, rng, 4000) for c in stack.reps])
    logw = np.log(stack.weights) - log_acc

    def evaluate(th, logfg):
        n, m = th.shape
        inside = np.all(th @ check_rows.T < 0, axis=1) if link.restricted else np.ones(n, bool)
        log_prior = np.full(n, -np.inf)
        log_comp = np.empty(len(stack))
        step = max(1, budget // (n * m))
        for lo in range(0, len(stack), step):
            hi = min(lo + step, len(stack))
            L = stack.logpdf_block(lo, hi, th) - log_acc[lo:hi, None]
            L[:, ~inside] = -np.inf
            log_prior = np.logaddexp(log_prior, special.logsumexp(L + logw[lo:hi, None] + log_acc[lo:hi, None], axis=0))
            log_comp[lo:hi] = special.logsumexp(L + logfg[None, :], axis=1) - np.log(n)
        return log_prior, log_comp[stack.order]

    return evaluate


def fit_models(ctx: ModelContext) -> tuple[IrlsResult, IrlsResult]:
    """Maximum likelihood fits of the null and full models."""
    return (
        irls_fit(ctx.data, ctx.link, ctx.test.free1),
        irls_fit(ctx.data, ctx.link),
    )


def importance_bf(trace: ChainTrace, ctx: ModelContext, T_is: int | None = None, rng=None, method: str = "importance_kde", fits=None, bandwidth_scale: float = 1.0) -> BayesFactorEstimate:
    """Importance-sampling Bayes factor with estimated integral-prior densities.

    For each model, ``T_is`` draws from ``Normal(mle, 2 cov)`` weight the
    likelihood times the prior density estimate. ``method`` selects a kernel
    density estimate (``importance_kde``) or the training-sample mixture
    (``importance_rb``, needs a trace run with ``retain_z2=True``).
    ``fits`` may pass precomputed ``(M1, M2)`` :class:`IrlsResult` objects.
    """
    if method not in ("importance_kde", "importance_rb"):
        raise ValueError(f"unknown importance method {method!r}")
    rng = np.random.default_rng(rng)
    rng1, rng2, rng_acc = rng.spawn(3)
    T_is = trace.T if T_is is None else int(T_is)
    fit1, fit2 = fit_models(ctx) if fits is None else fits
    X = ctx.data.X
    if method == "importance_kde":
        ev1 = _kde_evaluator(kde_fit(trace.theta1_free, scale=bandwidth_scale))
        ev2 = _kde_evaluator(kde_fit(trace.theta2, scale=bandwidth_scale))
    else:
        if not trace.has_training_samples:
            raise EstimatorError("importance_rb needs a trace with retained training samples")
        ev1 = _rb_evaluator(trace.training_samples(1, X), ctx.link, X[:, ctx.test.free1], rng_acc)
        ev2 = _rb_evaluator(trace.training_samples(2, X), ctx.link, X, rng_acc)
    lm1, v1, c1 = _importance_log_marginal(ctx, 1, fit1, ev1, T_is, rng1)
    lm2, v2, c2 = _importance_log_marginal(ctx, 2, fit2, ev2, T_is, rng2)
    var_chain = _batch_var_of_mean(c2 - c1)
    se = float(np.sqrt(v1 + v2 + var_chain))
    return BayesFactorEstimate(lm2 - lm1, method, trace.T, se, log_m1=lm1, log_m2=lm2)


def bic_bf(data: Dataset, link, k0: int) -> BayesFactorEstimate:
    """Schwarz approximation ``(l2 - l1) - (k0 / 2) log n``."""
    link = get_link(link)
    fit1 = irls_fit(data, link, range(k0, data.k))
    fit2 = irls_fit(data, link)
    val = (fit2.loglik - fit1.loglik) - 0.5 * k0 * np.log(data.n)
    return BayesFactorEstimate(val, "bic", 0, 0.0)


def pooled_estimate(estimates: Sequence[BayesFactorEstimate]) -> tuple[float, float]:
    """Mean and standard deviation of the posterior probabilities."""
    if len(estimates) < 2:
        raise ValueError("need at least two estimates to pool")
    methods = {e.method for e in estimates}
    if len(methods) > 1:
        raise ValueError(f"cannot pool estimates from different methods: {sorted(methods)}")
    probs = np.array([e.posterior_prob_m2 for e in estimates])
    return float(probs.mean()), float(probs.std(ddof=1))


def estimate_from_chain(ctx: ModelContext, T: int, method: str = "importance_kde", seed=None, burn_in=None, T_is=None, fits=None, bandwidth_scale: float = 1.0, theta0=None):
    """Run one chain and turn it into a Bayes factor estimate.

    The chain and the importance draws use independent streams spawned from
    ``seed``. Returns ``(estimate, trace)``.
    """
    if method == "bic":
        return bic_bf(ctx.data, ctx.link, ctx.k0), None
    ss = np.random.SeedSequence(seed)
    chain_ss, is_ss = ss.spawn(2)
    if theta0 is None and fits is not None:
        theta0 = fits[1].theta
    trace = run_chain(ctx, T, burn_in, np.random.default_rng(chain_ss), retain_z2=(method == "importance_rb"), theta0=theta0)
    if method == "ergodic":
        return ergodic_bf(trace, ctx.data, ctx.link), trace
    est = importance_bf(trace, ctx, T_is, np.random.default_rng(is_ss), method, fits, bandwidth_scale)
    return est, trace
