"""Optimal protection of linear network equilibria against adversarial shocks."""

from netprotect.centrality import (
    CentralityVector,
    bonacich_centrality,
    ell_centrality,
    star_closed_forms,
)
from netprotect.model import (
    EquilibriumInput,
    InfluenceOperator,
    NetworkModel,
    build_coordination,
    build_production,
    build_quadratic,
    build_raw,
    build_star,
    equilibrium,
    influence,
    iterate_dynamics,
)
from netprotect.waterfill import (
    ProtectionSolution,
    classify_regime,
    diffuse_baseline,
    f_eval,
    kkt_verify,
    objective_value,
    solve,
    sweep,
    worst_case_shock,
)

__all__ = [
    "CentralityVector",
    "EquilibriumInput",
    "InfluenceOperator",
    "NetworkModel",
    "ProtectionSolution",
    "bonacich_centrality",
    "build_coordination",
    "build_production",
    "build_quadratic",
    "build_raw",
    "build_star",
    "classify_regime",
    "diffuse_baseline",
    "ell_centrality",
    "equilibrium",
    "f_eval",
    "influence",
    "iterate_dynamics",
    "kkt_verify",
    "objective_value",
    "solve",
    "star_closed_forms",
    "sweep",
    "worst_case_shock",
]
