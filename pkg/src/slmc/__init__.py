"""Stochastic Langevin Monte Carlo with Poissonian subsampling.

Submodules: :mod:`~slmc.potential` (models and potentials),
:mod:`~slmc.sampler` (SLMC and full-gradient LMC), :mod:`~slmc.klcheck`
(curvature hypothesis checks), :mod:`~slmc.theory` (rate calculators),
:mod:`~slmc.diagnostics` (ensemble estimators) and :mod:`~slmc.harness`
(experiments and reports).
"""

__version__ = "0.1.0"

from .potential import (  # noqa: E402
    ObservationSet,
    PotentialModel,
    PriorSpec,
    conjugate_posterior,
    gaussian_model,
    model_from_dict,
    normalize,
    power_model,
    power_potential,
)
from .sampler import (  # noqa: E402
    SamplerConfig,
    default_alpha,
    init_sigma,
    run_ensemble,
    run_full_lmc,
    run_slmc,
)
from .klcheck import KLParams, check_growth_bounds, check_hkl, check_hmin, compose_posterior_kl  # noqa: E402
from .theory import TheoryInputs, mixing_time, theory_report  # noqa: E402
from .diagnostics import estimate_It, estimate_Jt, estimate_moments, generator_consistency  # noqa: E402
from .harness import (  # noqa: E402
    ExperimentConfig,
    compare_samplers,
    run_experiment,
    run_verification_suite,
)

__all__ = [
    "ObservationSet", "PotentialModel", "PriorSpec", "conjugate_posterior", "gaussian_model",
    "model_from_dict", "normalize", "power_model", "power_potential",
    "SamplerConfig", "default_alpha", "init_sigma", "run_ensemble", "run_full_lmc", "run_slmc",
    "KLParams", "check_growth_bounds", "check_hkl", "check_hmin", "compose_posterior_kl",
    "TheoryInputs", "mixing_time", "theory_report",
    "estimate_It", "estimate_Jt", "estimate_moments", "generator_consistency",
    "ExperimentConfig", "compare_samplers", "run_experiment", "run_verification_suite",
]
