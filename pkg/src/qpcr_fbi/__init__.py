"""Fully Bayesian imputation of qPCR non-detects treated as missing not at random."""

__version__ = "0.1.0"

from .model import (  # noqa: E402
    ChainState,
    Dataset,
    DegenerateStateError,
    InverseGamma,
    Priors,
    SamplerSettings,
    UniformOnSd,
    UniformOnVariance,
    VariancePrior,
    logistic_prob,
)
from .sampler import ChainOutput, run_chain, run_chains  # noqa: E402
from .simulate import SimConfig, TruthRecord, simulate_dataset, truncate_dataset  # noqa: E402
from .estimators import (  # noqa: E402
    EstimateTable,
    ScoreSummary,
    fbi_estimates,
    score_against_truth,
    sensitivity_sweep,
    si_bayes_estimates,
    table1_grid,
    trunc_estimates,
)
from .diagnostics import diagnose, effective_sample_size, split_rhat  # noqa: E402
