#!/usr/bin/env python3
"""Exact marginal likelihood of a linear-Gaussian chain.

Four transform artifacts are built once -- the initial-step conditional
and marginal, and the generic step marginals/conditional -- then folded
over the series, carrying the filtered state as (mean, standard
deviation). The result equals the direct T-dimensional Gaussian evidence.
"""

import numpy as np

from symconj.models import make_kalman_marginal

marginal = make_kalman_marginal()

rng = np.random.default_rng(0)
T = 10
ys = rng.standard_normal(T)

lp = marginal(ys, x_scale=1.0, y_scale=1.0)
print("recursion:  log p(y_1:T) =", lp)

# direct evidence from the implied joint covariance of y
P = np.fromfunction(lambda t, u: 1.0 + np.minimum(t, u), (T, T))
C = P + np.eye(T)
sign, ld = np.linalg.slogdet(C)
direct = -0.5 * ys @ np.linalg.solve(C, ys) - 0.5 * ld \
    - T / 2 * np.log(2 * np.pi)
print("direct:     log p(y_1:T) =", direct)
print("difference:", abs(lp - direct))
