"""Deterministic probability-flow transport with variance-inflation
schedules, at toy scale.

The pieces: seeded linear algebra (:mod:`inflare.core`), toy datasets and
the whitened eigenbasis (:mod:`inflare.datasets`), dimension-preserving and
dimension-reducing schedules (:mod:`inflare.schedule`), the preconditioned
denoiser and its training loop (:mod:`inflare.denoiser`), the flow ODE and
integrators (:mod:`inflare.pfode`), evaluation metrics and coverage
geometry (:mod:`inflare.analysis`), and posterior calibration by HMC
(:mod:`inflare.hmc`).
"""

__version__ = "0.1.0"

from .core import RngStream, sample_diag_gaussian, sym_eig
from .datasets import (
    DatasetKind,
    EigenFrame,
    PointCloud,
    estimate_eigenframe,
    generate,
    standardize,
    unwhiten,
    whiten,
)
from .schedule import InflationSchedule, build_rates, pr_attractor, pr_trajectory, sample_latent
from .denoiser import TrainConfig, TrainedDenoiser, precondition, train
from .pfode import (
    Discretization,
    NetworkScore,
    OracleGaussian,
    Trajectory,
    conditional_vf,
    discretize,
    inflate,
    integrate,
    oracle_score,
    rhs,
    roundtrip,
    score_from_denoiser,
    shifted_grid,
    uniform_grid,
    unscale,
)
from .analysis import (
    AcfReport,
    BoundarySet,
    CoverageReport,
    coverage_experiment,
    coverage_fraction,
    make_ball_boundary,
    participation_ratio,
    residual_autocorrelation,
    roundtrip_mse,
)
from .hmc import (
    Chain,
    GenerativeFlow,
    GmmPrior,
    HmcConfig,
    hmc_run,
    log_posterior_and_grad,
    prp_prior,
    prr_prior,
    summarize,
    synthesize_observations,
    weight_posterior_experiment,
)

__all__ = [name for name in dir() if not name.startswith("_")]
