#!/usr/bin/env python3
"""A small tour of the rewrite system.

A log density written with squares, quotients, and scale transformations
is rewritten into a sum of einsum monomials over statistic atoms; the
canonical form is what the conjugacy analysis reads its structure from.
"""

import numpy as np

from symconj import canonicalize, dump, evaluate, is_canonical
from symconj import graph as G

LOG2PI = np.log(2 * np.pi)


def model(z, kappa, tau):
    # a Gaussian with precision kappa*tau, written the way one writes it
    scale = 1.0 / G.sqrt(kappa * tau)
    return -0.5 * G.square(z / scale) - G.log(scale) - 0.5 * LOG2PI


g = G.build(model, [("z", (), "REAL"), ("kappa", (), "NONNEGATIVE"),
                    ("tau", (), "NONNEGATIVE")])

print("--- original graph ---")
print(dump(g, "text"))

fired = []
cf = canonicalize(g, firing_log=fired)
print("--- canonical form ---")
print(dump(cf.graph, "text"))
print("rules fired:", fired)
print("is_canonical:", is_canonical(cf.graph))
print("monomials:", len(cf.monomials))

env = dict(z=0.3, kappa=1.7, tau=2.2)
print("evaluation preserved:",
      float(evaluate(g, env)) - float(evaluate(cf.graph, env)))

# the statistics of tau are now visible: a bare tau factor and log(tau),
# exactly the signature of a Gamma-conjugate variable
from symconj import SupportType, complete_conditional

fac = complete_conditional(g, 2, SupportType.NONNEGATIVE)
print("tau conditional:", fac(0.3, 1.7).describe())
