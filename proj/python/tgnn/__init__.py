"""Python bindings for the tgnn C++ core."""

from ._tgnn import (
    ConductivityField,
    CovarianceSpec,
    HeadSolution,
    IoError,
    Mlp,
    NumericError,
    ScenarioSpec,
    SpecError,
    __version__,
    basis_eigenvalues,
    characteristic_roots,
    eigenfunction_1d,
    eigenvalue_1d,
    r2_score,
    relative_l2,
    run_scenario,
    sample_xi,
    scenario_keys,
    simulate,
)

__all__ = [
    "ConductivityField",
    "CovarianceSpec",
    "HeadSolution",
    "IoError",
    "Mlp",
    "NumericError",
    "ScenarioSpec",
    "SpecError",
    "basis_eigenvalues",
    "characteristic_roots",
    "eigenfunction_1d",
    "eigenvalue_1d",
    "r2_score",
    "relative_l2",
    "run_scenario",
    "sample_xi",
    "scenario_keys",
    "simulate",
]
