"""Hopf-Lax data on a three-arc star.

The datum is 0 everywhere except at the leaf ``l0`` where it dips to -1. For
``H = p^2/2`` the solution is ``min(0, -1 + d(l0, x)^2 / 2t)``, so the error of
the scheme is visible directly. Run with ``python3 demos/star_hopf_lax.py``.
"""

import numpy as np

from hjnet import InitialDatum, SpaceTimeGrid, builtin_family, ConjugateEvaluator, maximal_limiter, solve, star_network
from hjnet import quadratic_minus_potential

net = star_network(3)
fam = builtin_family(net, 1.0, quadratic_minus_potential(0.0))
ce = ConjugateEvaluator(fam)
cbar = maximal_limiter(net, ce, 1.0)
leaf = net.vertex_point("l0")

print(f"{'1/ds':>6} {'max error':>12}")
for n in (25, 50, 100):
    g = SpaceTimeGrid(net, 1 / n, 1.0, 1 / n, kappa=16.0)
    F = solve(net, ce, cbar, InitialDatum(net, vertices={"l0": -1.0}), g)
    d = np.array([net.distance(leaf, g.node_point(i)) for i in range(g.n_nodes)])
    err = max(np.abs(F.values[k] - np.minimum(0, -1 + d ** 2 / (2 * g.t[k]))).max() for k in range(1, g.K + 1))
    print(f"{n:>6} {err:>12.3e}")

# the value at the centre reaches 0 once the dip has spread past it
centre = net.vertex_point("c")
for t in (0.25, 0.5, 1.0):
    print(f"u(c, {t}) = {F.values_at([centre], t)[0]:+.4f}  exact {min(0.0, -1 + 1 / (2 * t)):+.4f}")
