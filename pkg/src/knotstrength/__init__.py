"""Spatial Bayesian modelling of lumber tensile strength with knot effects."""

from .data import (
    CellGrid,
    Knot,
    ModelParams,
    Specimen,
    cell_centroids,
    distance_matrix,
    validate_specimens,
)
from .diagnostics import Diagnostics, bulk_ess, posterior_quantiles, split_rhat
from .estimators import MoeMaxKnotRegression, MoeRegression, SpatialStrengthModel
from .evaluation import (
    CvMetrics,
    CvReport,
    PpcReport,
    PredictiveSummary,
    kfold_cv,
    large_knot_subgroup,
    ols_fit,
    ols_predict_interval,
    posterior_predictive_check,
    predict_strength,
    predictive_samples,
    subgroup_mspe,
)
from .hmc import (
    ChainState,
    HmcConfig,
    PosteriorDraws,
    adapt_warmup,
    find_reasonable_step_size,
    hmc_iterate,
    leapfrog,
    run_chains,
)
from .io import RunConfig, load_config, read_dataset, read_draws_csv, write_draws_csv
from .model import (
    DecayKernel,
    adjust_strength,
    ar1_logpdf,
    ar1_sample,
    knot_effect_vector,
    observed_strength,
    weight_matrix,
)
from .posterior import (
    AugmentedPosterior,
    LatentBlock,
    PriorSpec,
    augmented_loglik,
    grad_log_posterior_unconstrained,
    log_posterior_unconstrained,
    log_prior,
)
from .simulate import (
    DEFAULT_TRUTH,
    SimConfig,
    SimulatedDataset,
    generate_dataset,
    generate_specimen,
)

__version__ = "0.1.0"
