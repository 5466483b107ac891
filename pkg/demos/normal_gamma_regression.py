#!/usr/bin/env python3
"""Bayesian linear regression with a normal-gamma compound prior.

The posterior factorizes as p(tau | x, y) p(beta | tau, x, y). The first
factor comes from marginalizing the weights out of the joint and then
conditioning the marginal; the second is a complete conditional of the
full joint. Transforms compose: the output of marginalize feeds straight
back into complete_conditional.
"""

import numpy as np

from symconj import SupportType, complete_conditional, marginalize
from symconj.models import fixture

fx = fixture("normal_gamma")
log_joint = fx.graph()
v = fx.example_args(0)

# log p(tau, x, y): integrate the weights out
tau_x_y_log_prob = marginalize(log_joint, 1, SupportType.REAL)
print("marginal over:", tau_x_y_log_prob.input_names)

# p(tau | x, y) from the marginal, then sample a precision
make_tau_posterior = complete_conditional(
    tau_x_y_log_prob, 0, SupportType.NONNEGATIVE)
tau_post = make_tau_posterior(v["x"], v["y"], v["a"], v["b"], v["kappa"],
                              v["mu0"])
print("tau | x, y:", tau_post.describe())
rng = np.random.default_rng(0)
tau_sample = float(tau_post.sample(rng))

# p(beta | tau, x, y) from the full joint at the sampled precision
make_beta_conditional = complete_conditional(log_joint, 1, SupportType.REAL)
beta_cond = make_beta_conditional(tau_sample, v["x"], v["y"], v["a"], v["b"],
                                  v["kappa"], v["mu0"])
std = beta_cond.standard()
print("beta | tau, x, y mean:", np.round(std["mean"], 4))
beta_sample = beta_cond.sample(rng)
print("one joint posterior draw: tau=%.4f beta=%s"
      % (tau_sample, np.round(beta_sample, 4)))

# the tau posterior matches the textbook closed form
n, d = v["x"].shape
w = v["x"].T @ v["y"] + v["kappa"] * v["mu0"]
K = v["x"].T @ v["x"] + v["kappa"] * np.eye(d)
shape_cf = v["a"] + n / 2
rate_cf = v["b"] + 0.5 * (v["y"] @ v["y"] + v["kappa"] * v["mu0"] @ v["mu0"]
                          - w @ np.linalg.solve(K, w))
print("closed form: Gamma(shape=%.6g, rate=%.6g)" % (shape_cf, rate_cf))
