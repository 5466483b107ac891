#!/usr/bin/env python3
"""Exact conditioning and marginalization in a Beta-Bernoulli coin model.

The log joint is written as an ordinary tensor expression; the engine
recognizes the Beta structure of the coin probability, hands back the
posterior as a distribution object, and integrates the probability out to
give the marginal evidence of the observed counts.
"""

import numpy as np
from scipy import integrate

from symconj import SupportType, complete_conditional, evaluate, marginalize
from symconj.models import fixture

log_joint = fixture("beta_bernoulli").graph()

n_heads, n_draws = 60.0, 100.0
prior_a = prior_b = 0.5

# posterior of the coin probability given the counts
make_conditional = complete_conditional(log_joint, 0, SupportType.UNIT_INTERVAL)
posterior = make_conditional(n_heads, n_draws, prior_a, prior_b)
print("complete conditional:", posterior.describe())
print("posterior mean:", 60.5 / 101.0)

# draw from it
rng = np.random.default_rng(0)
print("three posterior draws:", [float(posterior.sample(rng)) for _ in range(3)])

# marginal log-probability of the counts
marginal = marginalize(log_joint, 0, SupportType.UNIT_INTERVAL)
env = dict(n_heads=n_heads, n_draws=n_draws, prior_a=prior_a, prior_b=prior_b)
lp = float(evaluate(marginal, env))
print("log p(n_heads=60 | a, b) =", lp)

# cross-check against brute-force quadrature of the joint
val, _ = integrate.quad(
    lambda z: np.exp(evaluate(log_joint, dict(env, prob=z))), 0, 1)
print("quadrature check        =", np.log(val))
