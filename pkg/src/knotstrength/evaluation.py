"""Model assessment: posterior predictive strength, predictive checks,
least-squares baselines, cross-validation, and subgroup error analysis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse, stats
from sklearn.base import clone

from .data import CellGrid, Specimen, distance_matrix, validate_specimens
from .model import DecayKernel, ar1_sample

PPC_QUANTITIES = ("mean", "sd", "p10", "p50", "p90")


def _stack_knots(specimens, grid: CellGrid):
    """Concatenate all specimens' knots with a sparse per-specimen selector."""
    n = len(specimens)
    if n == 0:
        raise ValueError("need at least one specimen")
    dist = np.concatenate([distance_matrix(grid, s.knots) for s in specimens], axis=1)
    volume = np.concatenate(
        [np.array([k.volume for k in s.knots], dtype=float) for s in specimens]
    )
    edge = np.concatenate(
        [np.array([float(k.edge) for k in s.knots]) for s in specimens]
    )
    owner = np.concatenate(
        [np.full(len(s.knots), i, dtype=int) for i, s in enumerate(specimens)]
    )
    select = sparse.csr_matrix(
        (np.ones(owner.shape[0]), (owner, np.arange(owner.shape[0]))),
        shape=(n, owner.shape[0]),
    )
    return dist, volume, edge, select


def _thin_rows(matrix: np.ndarray, n_draws: int) -> np.ndarray:
    total = matrix.shape[0]
    if n_draws >= total:
        return matrix
    idx = np.round(np.linspace(0, total - 1, n_draws)).astype(int)
    return matrix[idx]


def _param_matrix(draws) -> np.ndarray:
    if hasattr(draws, "pooled_params"):
        return draws.pooled_params()
    arr = np.asarray(draws, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 7:
        raise ValueError("draws must be a PosteriorDraws or an (N, 7) array")
    return arr


def predictive_samples(draws, specimens, grid: CellGrid = CellGrid(),
                       kernel: DecayKernel = DecayKernel(),
                       n_draws: int = 2000, seed: int = 0,
                       n_rep_per_draw: int = 1) -> np.ndarray:
    """Posterior predictive UTS replicates, shaped (n_draws_used *
    n_rep_per_draw, n_specimens).

    Each posterior draw simulates a fresh AR(1) strength profile for every
    specimen given its MOE, applies that specimen's actual knot pattern,
    and records the weakest adjusted cell.  Draws are thinned evenly from
    the pooled chains.
    """
    if n_rep_per_draw < 1:
        raise ValueError("n_rep_per_draw must be >= 1")
    specimens = validate_specimens(specimens, grid)
    theta = _thin_rows(_param_matrix(draws), n_draws)
    if n_rep_per_draw > 1:
        theta = np.repeat(theta, n_rep_per_draw, axis=0)
    dist, volume, edge, select = _stack_knots(specimens, grid)
    moe = np.array([s.moe for s in specimens])
    rng = np.random.default_rng(seed)

    out = np.empty((theta.shape[0], len(specimens)))
    for s, (eta0, eta1, rho, sigma, beta, g0, g1) in enumerate(theta):
        mu = eta0 + eta1 * moe
        clear = ar1_sample(rng, mu, rho, sigma, grid.n_cells)
        weights = kernel.weights(dist, beta, grid.cutoff)
        effects = (g0 * (1.0 - edge) + g1 * edge) * volume
        adjusted = clear - select @ (weights * effects).T
        out[s] = adjusted.min(axis=1)
    return out


@dataclass(frozen=True)
class PredictiveSummary:
    """Posterior predictive mean and equal-tailed interval per specimen."""

    specimen_ids: tuple
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    samples: np.ndarray


def predict_strength(draws, specimens, grid: CellGrid = CellGrid(),
                     kernel: DecayKernel = DecayKernel(),
                     n_draws: int = 2000, seed: int = 0,
                     level: float = 0.95,
                     n_rep_per_draw: int = 1) -> PredictiveSummary:
    """Point predictions and predictive intervals for specimens whose MOE
    and knot pattern are known but whose strength is not."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    samples = predictive_samples(draws, specimens, grid, kernel, n_draws,
                                 seed, n_rep_per_draw)
    tail = (1.0 - level) / 2.0
    lower, upper = np.quantile(samples, [tail, 1.0 - tail], axis=0)
    return PredictiveSummary(
        specimen_ids=tuple(s.id for s in specimens),
        mean=samples.mean(axis=0),
        lower=lower,
        upper=upper,
        level=level,
        samples=samples,
    )


@dataclass(frozen=True)
class PpcStat:
    """One test quantity: its observed value, the replicated values (one
    per draw used), their central 95% interval, and Pr(T_rep >= T_obs)."""

    observed: float
    p_value: float
    lower: float
    upper: float
    replicated: np.ndarray


@dataclass(frozen=True)
class PpcReport:
    """Posterior predictive check over summary statistics of the UTS sample.

    p-values are Pr(T_rep >= T_obs); values near 0 or 1 flag a statistic
    the model cannot reproduce.
    """

    statistics: dict
    n_draws: int

    def p_value(self, name: str) -> float:
        return self.statistics[name].p_value


def _summary_stat(values: np.ndarray, name: str, axis=None):
    if name == "mean":
        return np.mean(values, axis=axis)
    if name == "sd":
        return np.std(values, ddof=1, axis=axis)
    if name == "p10":
        return np.quantile(values, 0.10, axis=axis)
    if name == "p50":
        return np.quantile(values, 0.50, axis=axis)
    if name == "p90":
        return np.quantile(values, 0.90, axis=axis)
    raise ValueError(f"unknown test quantity {name!r}")


def posterior_predictive_check(draws, specimens, grid: CellGrid = CellGrid(),
                               kernel: DecayKernel = DecayKernel(),
                               n_draws: int = 2000, seed: int = 0,
                               quantities=PPC_QUANTITIES) -> PpcReport:
    """Compare observed UTS summary statistics with replicates drawn at the
    fitted parameters, keeping each specimen's covariate and knot pattern."""
    specimens = validate_specimens(specimens, grid, require_observed=True)
    samples = predictive_samples(draws, specimens, grid, kernel, n_draws, seed)
    observed = np.array([s.uts for s in specimens])
    stats_out = {}
    for name in quantities:
        t_obs = float(_summary_stat(observed, name))
        t_rep = np.asarray(_summary_stat(samples, name, axis=1), dtype=float)
        lower, upper = np.quantile(t_rep, [0.025, 0.975])
        stats_out[name] = PpcStat(
            observed=t_obs,
            p_value=float(np.mean(t_rep >= t_obs)),
            lower=float(lower),
            upper=float(upper),
            replicated=t_rep,
        )
    return PpcReport(statistics=stats_out, n_draws=samples.shape[0])


# ----------------------------------------------------------------------
# least-squares baselines
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class OlsFit:
    """Ordinary least squares with an intercept prepended to the features."""

    coef: np.ndarray
    resid_se: float
    xtx_inv: np.ndarray
    df: int


def ols_fit(features: np.ndarray, response: np.ndarray) -> OlsFit:
    features = np.atleast_2d(np.asarray(features, dtype=float))
    response = np.asarray(response, dtype=float)
    n = response.shape[0]
    design = np.column_stack([np.ones(n), features])
    p = design.shape[1]
    if n <= p:
        raise ValueError(f"need more than {p} observations to fit, got {n}")
    if np.linalg.matrix_rank(design) < p:
        raise ValueError("design matrix is singular")
    xtx_inv = np.linalg.inv(design.T @ design)
    coef = xtx_inv @ design.T @ response
    resid = response - design @ coef
    df = n - p
    resid_se = float(np.sqrt(resid @ resid / df))
    return OlsFit(coef=coef, resid_se=resid_se, xtx_inv=xtx_inv, df=df)


def ols_predict_interval(fit: OlsFit, features: np.ndarray, level: float = 0.95):
    """Point predictions with classical t prediction intervals for new
    observations.  Returns (prediction, lower, upper) arrays."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    features = np.atleast_2d(np.asarray(features, dtype=float))
    design = np.column_stack([np.ones(features.shape[0]), features])
    if design.shape[1] != fit.coef.shape[0]:
        raise ValueError(
            f"features imply {design.shape[1]} coefficients, fit has {fit.coef.shape[0]}"
        )
    pred = design @ fit.coef
    leverage = np.einsum("ij,jk,ik->i", design, fit.xtx_inv, design)
    t_crit = stats.t.ppf(0.5 + level / 2.0, fit.df)
    half = t_crit * fit.resid_se * np.sqrt(1.0 + leverage)
    return pred, pred - half, pred + half


# ----------------------------------------------------------------------
# cross-validation
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class CvMetrics:
    """Held-out predictive performance, with standard errors taken across
    per-specimen contributions."""

    mspe: float
    mspe_se: float
    mape: float
    mape_se: float
    interval_length: float
    interval_length_se: float
    coverage: float
    mean_prediction: float


@dataclass(frozen=True)
class CvReport:
    model_names: tuple
    metrics: dict
    specimen_ids: tuple
    observed: np.ndarray
    fold: np.ndarray
    predictions: dict
    lower: dict
    upper: dict

    @property
    def observed_mean(self) -> float:
        return float(self.observed.mean())


def _se(values: np.ndarray) -> float:
    return float(np.std(values, ddof=1) / np.sqrt(values.shape[0]))


def kfold_cv(specimens, models: dict, k: int = 5, seed: int = 0,
             level: float = 0.95, fold_assignment=None) -> CvReport:
    """Shuffled k-fold cross-validation of several strength predictors.

    Every model is cloned per fold, fitted on the training specimens, and
    asked for predictions plus a predictive interval on the held-out ones.
    Models follow the fit/predict/predict_interval convention used across
    this package.  fold_assignment (an array of fold indices 0..k-1, one
    per specimen) overrides the seeded random partition.
    """
    specimens = list(specimens)
    n = len(specimens)
    if k < 2 or k > n:
        raise ValueError(f"k must lie in 2..{n}, got {k}")
    if not models:
        raise ValueError("need at least one model to evaluate")

    if fold_assignment is None:
        order = np.random.default_rng(seed).permutation(n)
        folds = np.array_split(order, k)
    else:
        fold_assignment = np.asarray(fold_assignment, dtype=int)
        if fold_assignment.shape != (n,):
            raise ValueError("fold_assignment must give one fold per specimen")
        if sorted(set(fold_assignment.tolist())) != list(range(k)):
            raise ValueError(f"fold_assignment must use exactly the folds 0..{k - 1}")
        order = np.arange(n)
        folds = [np.flatnonzero(fold_assignment == j) for j in range(k)]
    short = min(len(f) for f in folds)
    if short < 2:
        raise ValueError(f"every fold needs at least 2 specimens, smallest has {short}")
    observed = np.array([s.uts for s in specimens])
    fold_of = np.empty(n, dtype=int)
    predictions = {name: np.empty(n) for name in models}
    lower = {name: np.empty(n) for name in models}
    upper = {name: np.empty(n) for name in models}

    for fold_idx, test_idx in enumerate(folds):
        fold_of[test_idx] = fold_idx
        held_out = set(test_idx.tolist())
        train = [specimens[i] for i in order if i not in held_out]
        test = [specimens[i] for i in test_idx]
        for name, model in models.items():
            fitted = clone(model).fit(train)
            pred, lo, hi = fitted.predict_interval(test, level=level)
            predictions[name][test_idx] = pred
            lower[name][test_idx] = lo
            upper[name][test_idx] = hi

    metrics = {}
    for name in models:
        err = observed - predictions[name]
        sq = err * err
        ab = np.abs(err)
        length = upper[name] - lower[name]
        covered = (observed >= lower[name]) & (observed <= upper[name])
        metrics[name] = CvMetrics(
            mspe=float(sq.mean()), mspe_se=_se(sq),
            mape=float(ab.mean()), mape_se=_se(ab),
            interval_length=float(length.mean()), interval_length_se=_se(length),
            coverage=float(covered.mean()),
            mean_prediction=float(predictions[name].mean()),
        )

    return CvReport(
        model_names=tuple(models),
        metrics=metrics,
        specimen_ids=tuple(s.id for s in specimens),
        observed=observed,
        fold=fold_of,
        predictions=predictions,
        lower=lower,
        upper=upper,
    )


def large_knot_subgroup(specimens, grid: CellGrid, min_knots: int = 3,
                        volume_fraction: float = 0.10,
                        thickness: float = 1.5) -> np.ndarray:
    """Boolean mask of specimens carrying at least min_knots knots whose
    volume exceeds volume_fraction of one cell's volume (cell length x
    width x board thickness)."""
    threshold = volume_fraction * grid.cell_length * grid.width * thickness
    return np.array(
        [sum(1 for k in s.knots if k.volume > threshold) >= min_knots
         for s in specimens]
    )


def subgroup_mspe(report: CvReport, mask) -> dict:
    """MSPE restricted to a subgroup of the cross-validated specimens.

    Returns {model: (mspe, se, n_subgroup)} using the report's stored
    per-specimen predictions.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != report.observed.shape:
        raise ValueError("mask length does not match the report")
    if mask.sum() < 2:
        raise ValueError("subgroup needs at least 2 specimens")
    out = {}
    for name in report.model_names:
        sq = (report.observed[mask] - report.predictions[name][mask]) ** 2
        out[name] = (float(sq.mean()), _se(sq), int(mask.sum()))
    return out
