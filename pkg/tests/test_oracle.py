import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from intprior.core import HypothesisTest
from intprior.oracle import (
    DEMO_SPECS,
    FiniteChainSpec,
    exact_bayes_factor,
    exact_transition_matrix,
    solve_oracle,
    stationary_distribution,
)
from intprior.sampler import ModelContext, markov_transition

specs = st.builds(
    FiniteChainSpec,
    a=st.sampled_from([1.0, 2.0, -1.0, 0.5]),
    b=st.just(0.0),
    trials=st.tuples(st.integers(1, 5), st.integers(1, 5)),
    successes=st.just((0, 0)),
    link=st.sampled_from(["logit", "probit", "cloglog", "cauchit"]),
)


def _with_successes(spec, frac):
    s = tuple(int(round(f * t)) for f, t in zip(frac, spec.trials))
    return FiniteChainSpec(spec.a, spec.b, spec.trials, s, spec.n1_bound, spec.n2_bounds, spec.link)


@settings(max_examples=100, deadline=None)
@given(specs, st.tuples(st.floats(0, 1), st.floats(0, 1)))
def test_transition_matrix_properties(spec, frac):
    spec = _with_successes(spec, frac)
    P = exact_transition_matrix(spec)
    assert np.all(P > 0)
    assert np.abs(P.sum(axis=1) - 1).max() < 1e-12
    w = stationary_distribution(P)
    assert np.abs(w - stationary_distribution(P, "power")).max() < 1e-10
    assert np.abs(w @ P - w).max() < 1e-12


@settings(max_examples=100, deadline=None)
@given(specs, st.tuples(st.floats(0, 1), st.floats(0, 1)))
def test_row_relabelling_invariance(spec, frac):
    spec = _with_successes(spec, frac)
    swapped = FiniteChainSpec(
        spec.b, spec.a, spec.trials[::-1], spec.successes[::-1], spec.n1_bound, spec.n2_bounds[::-1], spec.link
    )
    assert exact_bayes_factor(spec) == pytest.approx(exact_bayes_factor(swapped), abs=1e-10)


@pytest.mark.parametrize("kind", ["logit", "probit", "cloglog", "cauchit"])
def test_link_independence(kind):
    ref = exact_bayes_factor(DEMO_SPECS["default"])
    spec = FiniteChainSpec(1.0, 0.0, (4, 4), (1, 3), link=kind)
    assert exact_bayes_factor(spec) == ref


def test_flip_commutation_on_balanced_data():
    spec = DEMO_SPECS["balanced"]
    P = exact_transition_matrix(spec)
    perm = spec.flip_permutation()
    assert np.abs(P[np.ix_(perm, perm)] - P).max() < 1e-14
    w = solve_oracle(spec).stationary
    assert np.abs(w[perm] - w).max() < 1e-12


def test_unit_bounds_single_step_is_beta_mean():
    # with q = 1 everywhere, a z1 success has probability equal to the Beta mean
    spec = FiniteChainSpec(1.0, 0.0, (1, 1), (0, 1), n1_bound=1, n2_bounds=(1, 1))
    from intprior.oracle import _half_step

    A = _half_step(spec)
    for row, (qa, sa, qb, sb) in zip(A, spec.z2_states):
        mean = 0.5 * (sa + 0.5) / (qa + 1) + 0.5 * (sb + 0.5) / (qb + 1)
        assert row[1] == pytest.approx(mean)  # z1 state (q=1, s=1)


def test_signs_of_demo_specs():
    assert exact_bayes_factor(DEMO_SPECS["balanced"]) < 0
    assert exact_bayes_factor(DEMO_SPECS["imbalanced"]) > 0
    assert np.isfinite(exact_bayes_factor(DEMO_SPECS["default"]))


def test_marginals_against_direct_mixture():
    spec = DEMO_SPECS["default"]
    res = solve_oracle(spec)
    st_ = spec.z2_states
    comp = [
        np.exp(special.betaln(sa + 0.5 + 1, qa - sa + 0.5 + 3) - special.betaln(sa + 0.5, qa - sa + 0.5)
               + special.betaln(sb + 0.5 + 3, qb - sb + 0.5 + 1) - special.betaln(sb + 0.5, qb - sb + 0.5))
        for qa, sa, qb, sb in st_
    ]
    assert np.log(np.dot(res.stationary, comp)) == pytest.approx(res.log_m2, rel=1e-12)


def test_spec_validation():
    with pytest.raises(ValueError):
        FiniteChainSpec(1.0, 1.0)
    with pytest.raises(ValueError):
        FiniteChainSpec(link="log")
    with pytest.raises(ValueError):
        FiniteChainSpec(successes=(5, 0))


def test_sampler_visits_follow_stationary_law():
    spec = DEMO_SPECS["default"]
    r1, r2 = spec.replication_indices()
    ctx = ModelContext(spec.dataset, HypothesisTest(1, 2), spec.link, r1, r2)
    res = solve_oracle(spec)
    index = {tuple(s): i for i, s in enumerate(spec.z2_states.tolist())}
    X = spec.dataset.X
    rng = np.random.default_rng(77)
    theta = np.zeros(2)
    for _ in range(200):
        theta = markov_transition(theta, ctx, rng).theta2
    counts = np.zeros(len(index))
    thin = 10  # thinning keeps the chi-square approximation honest
    for t in range(20000 * thin):
        step = markov_transition(theta, ctx, rng)
        theta = step.theta2
        if t % thin:
            continue
        z = step.z2
        by_row = {X[r, 0]: (q, s) for r, q, s in zip(z.row_indices, z.q, z.successes)}
        qa, sa = by_row[spec.a]
        qb, sb = by_row[spec.b]
        counts[index[(qa, sa, qb, sb)]] += 1
    _, p = stats.chisquare(counts, res.stationary * counts.sum())
    assert p > 0.01
