"""Hamilton-Jacobi equations on networks: value functions from the
Lax-Oleinik formula with flux-limited vertex conditions."""

from ._kernel import GridInfeasible, SpaceTimeGrid
from .action import (ActionResult, DiscreteCurve, LipschitzLedger, OverallLagrangian, Unreachable,
                     admissibility_report, discrete_action, eval_overall_lagrangian, lipschitz_ledger,
                     lipschitz_modulus_probe, minimal_action)
from .expressions import compile_expression
from .hamiltonian import (ArcHamiltonian, Envelopes, HamiltonianFamily, builtin_family, eval_h,
                          exponential, family_from_spec, power_p, quadratic_minus_potential,
                          validate_assumptions)
from .legendre import ConjugateEvaluator, conjugate, conjugate_envelope
from .limiter import (FluxLimiter, clamp_limiter, limiter_from_spec, maximal_limiter, user_limiter,
                      validate_limiter, zeno_criteria)
from .netgraph import (NetPoint, NetworkGraph, geodesic_distance, geodesic_path, load_network,
                       network_from_dict, path_network, star_network, validate_network)
from .semidiscrete import BoundaryTrace, GInput, disc_residual, f_gamma, f_x, g_operator, ordering_check
from .solver import (InitialDatum, ValueField, flux_limiter_sensitivity, hopf_lax_oracle, solve,
                     verify_solution, vertex_waiting_oracle)

__version__ = "0.1.0"
