"""A negative flux limiter at the junction makes waiting there profitable.

With ``c = -1`` at the centre of a star, zero initial datum and no running cost
on the arcs, optimal curves travel to the centre, sit there and leave at the
last moment. The scheme is compared against the closed-form value.
"""

import numpy as np

from hjnet import (ConjugateEvaluator, InitialDatum, SpaceTimeGrid, builtin_family, maximal_limiter,
                   quadratic_minus_potential, solve, star_network, user_limiter, vertex_waiting_oracle)

net = star_network(3)
ce = ConjugateEvaluator(builtin_family(net, 1.0, quadratic_minus_potential(0.0)))
c = user_limiter(net, {"c": -1.0}, 1.0, default=maximal_limiter(net, ce, 1.0))
g = SpaceTimeGrid(net, 0.01, 1.0, 0.01, kappa=4.0)
F = solve(net, ce, c, InitialDatum(net), g)

pts = [net.point("a0", s) for s in np.linspace(0.0, 1.0, 6)]
exact = vertex_waiting_oracle(net, "c", -1.0, 1.0, pts)
for p, u, e in zip(pts, F.values_at(pts, 1.0), exact):
    print(f"{p.arc} s={p.offset:.1f}  scheme {u:+.4f}  exact {e:+.4f}")

curve = F.curve(net.point("a0", 0.3), 1.0)
waited = curve.dt * sum(1 for st in curve.steps if st.arc is None and st.vertex == "c")
print(f"time spent at the centre by the optimal curve ending at a0, s=0.3: {waited:.2f}")
