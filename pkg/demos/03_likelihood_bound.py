"""
Transport cost never exceeds the decoder's negative log-likelihood
==================================================================

For costs in [0, 2] and at least 8 words, the exact transport cost
between ``x`` and ``z`` is at most ``-x^T log softmax((2 - M) z)``. This
demo measures the slack on random instances and shows where it is
smallest.
"""

import numpy as np

from sinkhorn_topics.verify import bound_suite, likelihood_bound_margin

rng = np.random.default_rng(1)

###############################################################################
# The slack shrinks as documents concentrate on cheap words, but stays
# positive.

for V in (8, 20, 50):
    margins = []
    for _ in range(200):
        K = int(rng.integers(2, 11))
        M = rng.uniform(0, 2, size=(V, K))
        x = rng.dirichlet(np.full(V, 0.1))
        z = rng.dirichlet(np.ones(K))
        margins.append(likelihood_bound_margin(x, z, M))
    print(f"V={V:2d}: min slack {min(margins):.4f}, median {np.median(margins):.4f}")

###############################################################################
# The verification suite runs the same check with mixed instance types.

for line in bound_suite(trials=300, seed=0).lines():
    print(line)
