"""Kernel-score particle sampling with Langevin baselines and an exact Gaussian engine."""

from .errors import (
    BRWPError,
    ConfigError,
    DegenerateNormalizerError,
    DivergenceError,
    InvalidArgument,
    NumericOverflowError,
    ObserverError,
    PreconditionError,
    ReduceStepError,
    StepTooLargeError,
)
from .potentials import (
    LogisticRegressionTarget,
    PotentialSpec,
    QuadraticTarget,
    bimodal_potential,
    gaussian_mixture_potential,
    logistic_regression_potential,
    quadratic_potential,
)
from .report import ExperimentReport
from .rng import RngStream
from .samplers import (
    ParticleEnsemble,
    SamplerConfig,
    brwp_normalizers,
    brwp_score,
    brwp_step,
    mala_step,
    run_chain,
    ula_step,
)

__version__ = "0.1.0"
