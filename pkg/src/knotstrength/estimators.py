"""Estimators with a scikit-learn style fit/predict surface.

All three take a sequence of Specimen objects in place of a feature
matrix: the Bayesian spatial model uses the full knot pattern, while the
two regression baselines reduce each specimen to one or two covariates.
Every estimator supports get_params/set_params and sklearn.base.clone,
which the cross-validation driver relies on.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .data import CellGrid
from .evaluation import (
    ols_fit,
    ols_predict_interval,
    predict_strength,
    predictive_samples,
)
from .hmc import HmcConfig, run_chains
from .model import DecayKernel
from .posterior import AugmentedPosterior, PriorSpec


class SpatialStrengthModel(BaseEstimator):
    """Bayesian spatial strength model fitted by Hamiltonian Monte Carlo.

    fit() samples the augmented posterior for the given specimens;
    predict() and predict_interval() are posterior predictive summaries
    for new specimens with known MOE and knot pattern.  Sampling quality
    is not policed here: inspect ``diagnostics_`` (split R-hat, effective
    sample size, divergence counts, the ``failed`` flag) after fitting.

    Parameters mirror the run configuration; see HmcConfig for the
    sampler settings and PriorSpec for the prior.
    """

    def __init__(self, n_cells=24, span_length=96.0, width=5.5, cutoff=96.0,
                 kernel="exponential", prior=None, n_chains=4,
                 iterations=10000, warmup=5000, target_accept=0.8,
                 max_leapfrog_steps=1024, trajectory_time=1.5, seed=0,
                 adapt_mass=True, n_predict_draws=2000):
        self.n_cells = n_cells
        self.span_length = span_length
        self.width = width
        self.cutoff = cutoff
        self.kernel = kernel
        self.prior = prior
        self.n_chains = n_chains
        self.iterations = iterations
        self.warmup = warmup
        self.target_accept = target_accept
        self.max_leapfrog_steps = max_leapfrog_steps
        self.trajectory_time = trajectory_time
        self.seed = seed
        self.adapt_mass = adapt_mass
        self.n_predict_draws = n_predict_draws

    def _grid(self) -> CellGrid:
        return CellGrid(n_cells=self.n_cells, span_length=self.span_length,
                        width=self.width, cutoff=self.cutoff)

    def _kernel(self) -> DecayKernel:
        if isinstance(self.kernel, DecayKernel):
            return self.kernel
        return DecayKernel(self.kernel)

    def fit(self, specimens, y=None):
        grid = self._grid()
        posterior = AugmentedPosterior(
            specimens, grid, self._kernel(), self.prior or PriorSpec()
        )
        config = HmcConfig(
            n_chains=self.n_chains,
            iterations=self.iterations,
            warmup=self.warmup,
            target_accept=self.target_accept,
            max_leapfrog_steps=self.max_leapfrog_steps,
            trajectory_time=self.trajectory_time,
            seed=self.seed,
            adapt_mass=self.adapt_mass,
        )
        draws, diagnostics = run_chains(posterior, config)
        self.grid_ = grid
        self.posterior_ = posterior
        self.draws_ = draws
        self.diagnostics_ = diagnostics
        return self

    def _require_fitted(self):
        if not hasattr(self, "draws_"):
            raise ValueError("this model has not been fitted yet")

    def predict(self, specimens) -> np.ndarray:
        """Posterior predictive mean UTS for each specimen."""
        self._require_fitted()
        samples = predictive_samples(
            self.draws_, specimens, self.grid_, self._kernel(),
            n_draws=self.n_predict_draws, seed=self.seed,
        )
        return samples.mean(axis=0)

    def predict_interval(self, specimens, level: float = 0.95):
        """(prediction, lower, upper) equal-tailed predictive intervals."""
        self._require_fitted()
        summary = predict_strength(
            self.draws_, specimens, self.grid_, self._kernel(),
            n_draws=self.n_predict_draws, seed=self.seed, level=level,
        )
        return summary.mean, summary.lower, summary.upper


class MoeRegression(BaseEstimator):
    """Baseline: UTS regressed on MOE alone, with t prediction intervals."""

    def _features(self, specimens) -> np.ndarray:
        return np.array([[s.moe] for s in specimens])

    def fit(self, specimens, y=None):
        specimens = list(specimens)
        for s in specimens:
            if not s.observed:
                raise ValueError(f"specimen {s.id!r} has no recorded test outcome")
        response = np.array([s.uts for s in specimens])
        self.fit_ = ols_fit(self._features(specimens), response)
        return self

    def predict(self, specimens) -> np.ndarray:
        pred, _, _ = self.predict_interval(specimens)
        return pred

    def predict_interval(self, specimens, level: float = 0.95):
        if not hasattr(self, "fit_"):
            raise ValueError("this model has not been fitted yet")
        return ols_predict_interval(self.fit_, self._features(specimens), level)


class MoeMaxKnotRegression(MoeRegression):
    """Baseline: UTS regressed on MOE and the largest knot volume, taken as
    zero for knot-free specimens."""

    def _features(self, specimens) -> np.ndarray:
        return np.array([[s.moe, s.max_knot_volume()] for s in specimens])
