"""Objective Bayesian testing in binomial regression with integral priors.

The integral priors of the null and full models are simulated with a
Markov chain over imaginary training samples; Bayes factors follow from
the chain output by importance sampling or ergodic averages.
"""

__version__ = "0.1.0"

from .core import (
    BayesFactorEstimate,
    Dataset,
    HypothesisTest,
    LinkSpec,
    RestrictionViolation,
    link_inverse,
    log_likelihood,
    posterior_probability,
)
from .data import FactorSpec, count_replications, discretize_quantiles, load_dataset, load_preset, order_for_test
from .estimators import (
    bic_bf,
    ergodic_bf,
    estimate_from_chain,
    importance_bf,
    irls_fit,
    kde_fit,
    pooled_estimate,
    rao_blackwell_prior_density,
)
from .oracle import FiniteChainSpec, exact_bayes_factor, exact_transition_matrix
from .sampler import ChainTrace, ModelContext, markov_transition, run_chain
