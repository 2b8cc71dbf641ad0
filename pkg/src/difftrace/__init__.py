"""difftrace: diffusion coefficients from periodic-boundary MD trajectories.

Two-stage Bayesian pipeline: per-trajectory MAP estimates under a latent
random-walk Gaussian process, pooled across box sizes by a hierarchical
model with a shared finite-size slope.  Ships the supporting calibration
machinery (quasi-random parameter search, pair energetics, relative-error
scoring), an analytical finite-size correction, a closed-form
temperature/pressure surface, and synthetic-data oracles.
"""

__version__ = "0.1.0"

from .calibration import (
    CandidateResult,
    LJParams,
    RadicalModel,
    SiteGeometry,
    WaterModel,
    are,
    evaluate_candidate,
    halton,
    halton_candidates,
    interaction_energy,
    lj_energy,
    orientation_ok,
    orientation_scan,
    pair_energy,
    pair_energy_terms,
    winnow,
)
from .gp import (
    GpDataset,
    GpParams,
    LocalDiffusionEstimator,
    LocalEstimate,
    dataset_from_segments,
    gram_matrix,
    log_posterior,
    loglik_dense,
    loglik_increment,
    map_estimate,
)
from .hier import (
    ConditionData,
    HierarchicalDiffusion,
    HierParams,
    HierPosterior,
    SamplerConfig,
    constrain,
    log_posterior_hier,
    loglik_hier,
    sample_posterior,
    summarize,
    unconstrained_log_posterior,
)
from .pipeline import PipelineConfig, run_pipeline, version_and_provenance
from .sampling import hmc_chain, rhat
from .sizecorr import CorrectionInput, box_length, yeh_hummer
from .surface import (
    REFERENCE_COEFFS,
    DiffusionSurface,
    SurfaceCoeffs,
    eval_surface,
    fit_surface,
)
from .synth import SynthSpec, gen_brownian, gen_condition, msd_estimate
from .trajectory import (
    UnwrappedTrajectory,
    WrappedTrajectory,
    downsample,
    load_trajectory,
    remove_drift,
    save_trajectory,
    segment,
    unwrap,
)

__all__ = [
    "__version__",
    # trajectory
    "WrappedTrajectory", "UnwrappedTrajectory", "load_trajectory", "save_trajectory",
    "unwrap", "remove_drift", "downsample", "segment",
    # gp
    "GpParams", "GpDataset", "LocalEstimate", "gram_matrix", "loglik_dense",
    "loglik_increment", "log_posterior", "map_estimate", "dataset_from_segments",
    "LocalDiffusionEstimator",
    # hier
    "ConditionData", "HierParams", "HierPosterior", "SamplerConfig",
    "log_posterior_hier", "loglik_hier", "unconstrained_log_posterior", "constrain",
    "sample_posterior", "summarize", "HierarchicalDiffusion",
    # sampling
    "hmc_chain", "rhat",
    # size correction
    "CorrectionInput", "yeh_hummer", "box_length",
    # calibration
    "LJParams", "WaterModel", "RadicalModel", "SiteGeometry", "CandidateResult",
    "halton", "halton_candidates", "lj_energy", "pair_energy", "pair_energy_terms",
    "interaction_energy", "orientation_scan", "orientation_ok", "evaluate_candidate",
    "are", "winnow",
    # surface
    "SurfaceCoeffs", "eval_surface", "fit_surface", "DiffusionSurface",
    "REFERENCE_COEFFS",
    # synth
    "SynthSpec", "gen_brownian", "gen_condition", "msd_estimate",
    # pipeline
    "PipelineConfig", "run_pipeline", "version_and_provenance",
]
