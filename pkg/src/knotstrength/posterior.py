"""Augmented posterior over model parameters and latent cell strengths.

The posterior couples the seven model parameters with, per specimen, the
J-1 unobserved cell strengths, each constrained to exceed the observed
UTS.  Sampling happens in an unconstrained space:

    z = [eta0, eta1, logit(rho), log(sigma), log(beta), log(gamma0),
         log(gamma1), u_{i,j} ...]

with u_{i,j} = log(Y_{i,j} - uts_i) for every non-failure cell, so the
truncation region is enforced exactly by construction.  Densities include
the log-Jacobian of this change of variables; gradients are analytic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.special import erfinv, expit

from .data import CellGrid, ModelParams, distance_matrix, validate_specimens
from .model import DecayKernel

N_PARAMS = 7


@dataclass(frozen=True)
class PriorSpec:
    """Weakly informative priors: normal regression coefficients, a truncated
    normal correlation, half-normal positive coefficients, half-Cauchy scale.
    Normalizing constants that do not involve the parameters are dropped.
    """

    sd_eta: float = 10.0
    rho_loc: float = 0.5
    rho_scale: float = 0.5
    half_normal_scale: float = 1.0
    cauchy_scale: float = 5.0

    def __post_init__(self):
        for name in ("sd_eta", "rho_scale", "half_normal_scale", "cauchy_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class LatentBlock:
    """Latent cell strengths of one specimen, excluding the failure cell,
    in increasing cell order.  Every entry must exceed the observed UTS."""

    specimen_index: int
    y_minus_obs: np.ndarray


def log_prior(params: ModelParams, prior: PriorSpec = PriorSpec()) -> float:
    """Joint log prior density on the constrained scale, up to constants."""
    lp = -(params.eta0 ** 2 + params.eta1 ** 2) / (2.0 * prior.sd_eta ** 2)
    lp += -((params.rho - prior.rho_loc) ** 2) / (2.0 * prior.rho_scale ** 2)
    hn2 = prior.half_normal_scale ** 2
    lp += -(params.beta ** 2 + params.gamma0 ** 2 + params.gamma1 ** 2) / (2.0 * hn2)
    lp += -np.log1p((params.sigma / prior.cauchy_scale) ** 2)
    return float(lp)


def transform_params(params: ModelParams) -> np.ndarray:
    """Map constrained parameters to the 7 leading unconstrained coordinates."""
    return np.array([
        params.eta0,
        params.eta1,
        np.log(params.rho) - np.log1p(-params.rho),
        np.log(params.sigma),
        np.log(params.beta),
        np.log(params.gamma0),
        np.log(params.gamma1),
    ])


def untransform_params(z7: np.ndarray) -> ModelParams:
    """Inverse of :func:`transform_params`."""
    z7 = np.asarray(z7, dtype=float)
    return ModelParams(
        eta0=float(z7[0]),
        eta1=float(z7[1]),
        rho=float(expit(z7[2])),
        sigma=float(np.exp(z7[3])),
        beta=float(np.exp(z7[4])),
        gamma0=float(np.exp(z7[5])),
        gamma1=float(np.exp(z7[6])),
    )


class AugmentedPosterior:
    """Unnormalized augmented posterior for a fully observed sample.

    Precomputes per-specimen distance matrices and knot marks once; the
    weight matrix is re-derived from the current decay rate inside every
    evaluation.  Instances are immutable after construction and safe to
    share across threads.
    """

    def __init__(self, specimens, grid: CellGrid = CellGrid(),
                 kernel: DecayKernel = DecayKernel(),
                 prior: PriorSpec = PriorSpec()):
        specimens = validate_specimens(specimens, grid, require_observed=True)
        if len(specimens) == 0:
            raise ValueError("at least one specimen is required")
        self.specimens = tuple(specimens)
        self.grid = grid
        self.kernel = kernel
        self.prior = prior

        n = len(specimens)
        J = grid.n_cells
        self.n_specimens = n
        self.n_cells = J
        self.dim = N_PARAMS + n * (J - 1)

        self._moe = np.array([s.moe for s in specimens])
        self._uts = np.array([s.uts for s in specimens])
        self._fail0 = np.array([s.failure_cell - 1 for s in specimens], dtype=int)

        # all knots concatenated, with a selector matrix for per-specimen sums
        dist_blocks = [distance_matrix(grid, s.knots) for s in specimens]
        self._dist = np.concatenate(dist_blocks, axis=1) if n else np.zeros((J, 0))
        self._volume = np.concatenate(
            [np.array([k.volume for k in s.knots], dtype=float) for s in specimens]
        ) if n else np.zeros(0)
        self._edge = np.concatenate(
            [np.array([float(k.edge) for k in s.knots]) for s in specimens]
        ) if n else np.zeros(0)
        self._knot_owner = np.concatenate(
            [np.full(len(s.knots), i, dtype=int) for i, s in enumerate(specimens)]
        ) if n else np.zeros(0, dtype=int)
        k_tot = self._dist.shape[1]
        self._select = sparse.csr_matrix(
            (np.ones(k_tot), (self._knot_owner, np.arange(k_tot))), shape=(n, k_tot)
        )

        # scatter indices for the latent (non-failure) cells, row-major
        cols = np.tile(np.arange(J), (n, 1))
        keep = cols != self._fail0[:, None]
        self._lat_rows = np.repeat(np.arange(n), J - 1)
        self._lat_cols = cols[keep]
        self._uts_lat = self._uts[self._lat_rows]

    # ------------------------------------------------------------------
    # packing / unpacking
    # ------------------------------------------------------------------

    def pack(self, params: ModelParams, latents) -> np.ndarray:
        """Build the unconstrained state from constrained parameters and an
        (n, J-1) array of latent cell strengths (cell order, failure cell
        omitted)."""
        latents = self._as_latent_array(latents)
        gap = latents - self._uts[:, None]
        if np.any(gap <= 0):
            i = int(np.argwhere(gap <= 0)[0, 0])
            raise ValueError(
                f"latent strengths for specimen {self.specimens[i].id!r} do not "
                "exceed the observed UTS"
            )
        return np.concatenate([transform_params(params), np.log(gap).ravel()])

    def unpack(self, z: np.ndarray) -> tuple[ModelParams, np.ndarray]:
        """Inverse of :meth:`pack`: constrained parameters and latent strengths."""
        z = np.asarray(z, dtype=float)
        params = untransform_params(z[:N_PARAMS])
        u = z[N_PARAMS:].reshape(self.n_specimens, self.n_cells - 1)
        latents = self._uts[:, None] + np.exp(u)
        return params, latents

    def latent_blocks(self, z: np.ndarray) -> list[LatentBlock]:
        _, latents = self.unpack(z)
        return [LatentBlock(i, latents[i].copy()) for i in range(self.n_specimens)]

    def full_strengths(self, z: np.ndarray) -> np.ndarray:
        """Adjusted strengths Y as an (n, J) matrix with the observed UTS
        inserted at each failure cell."""
        _, latents = self.unpack(z)
        return self._assemble(latents)

    def _assemble(self, latents: np.ndarray) -> np.ndarray:
        y = np.empty((self.n_specimens, self.n_cells))
        y[self._lat_rows, self._lat_cols] = latents.ravel()
        y[np.arange(self.n_specimens), self._fail0] = self._uts
        return y

    def _as_latent_array(self, latents) -> np.ndarray:
        if isinstance(latents, np.ndarray):
            arr = latents
        else:
            blocks = sorted(latents, key=lambda b: b.specimen_index)
            arr = np.vstack([np.asarray(b.y_minus_obs, dtype=float) for b in blocks])
        arr = np.asarray(arr, dtype=float)
        expected = (self.n_specimens, self.n_cells - 1)
        if arr.shape != expected:
            raise ValueError(f"latents must have shape {expected}, got {arr.shape}")
        return arr

    def coordinate_name(self, index: int) -> str:
        if index < N_PARAMS:
            return ModelParams.PARAM_NAMES[index]
        flat = index - N_PARAMS
        i = flat // (self.n_cells - 1)
        cell = self._lat_cols[flat] + 1
        return f"u[{self.specimens[i].id},cell{cell}]"

    # ------------------------------------------------------------------
    # densities
    # ------------------------------------------------------------------

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        """Starting point: parameters at their prior medians (rho at 0.5),
        latents just above the observed UTS."""
        # median of the half-normal: scale * sqrt(2) * erfinv(1/2)
        med = float(np.sqrt(2.0) * erfinv(0.5) * self.prior.half_normal_scale)
        params = ModelParams(
            eta0=0.0, eta1=0.0, rho=0.5,
            sigma=self.prior.cauchy_scale,
            beta=med, gamma0=med, gamma1=med,
        )
        gap = np.abs(rng.normal(0.5, 0.1, size=(self.n_specimens, self.n_cells - 1)))
        return self.pack(params, self._uts[:, None] + gap)

    def log_density(self, z: np.ndarray) -> float:
        value, _, bad = self._evaluate(z, want_grad=False)
        if bad is not None:
            raise ValueError(
                f"non-finite log posterior; offending coordinate {bad}: "
                f"{self.coordinate_name(bad)}"
            )
        return value

    def grad_log_density(self, z: np.ndarray) -> np.ndarray:
        _, grad, bad = self._evaluate(z, want_grad=True)
        if bad is not None:
            raise ValueError(
                f"non-finite gradient; offending coordinate {bad}: "
                f"{self.coordinate_name(bad)}"
            )
        return grad

    def log_density_and_grad(self, z: np.ndarray):
        """(value, gradient) for the sampler; a divergent evaluation comes
        back as (-inf, None) instead of raising."""
        value, grad, bad = self._evaluate(z, want_grad=True)
        if bad is not None:
            return -np.inf, None
        return value, grad

    def check_draw(self, z: np.ndarray) -> None:
        """Assert parameter constraints and every latent truncation."""
        params, latents = self.unpack(z)  # ModelParams validates constraints
        if np.any(latents <= self._uts[:, None]):
            raise AssertionError("latent strength at or below the observed UTS")

    def constrain(self, z: np.ndarray) -> np.ndarray:
        """Constrained parameter vector for one unconstrained state."""
        z = np.asarray(z, dtype=float)
        return untransform_params(z[:N_PARAMS]).as_array()

    @property
    def param_names(self):
        return list(ModelParams.PARAM_NAMES)

    # ------------------------------------------------------------------

    def _evaluate(self, z, want_grad: bool):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.dim,):
            raise ValueError(f"state must have shape ({self.dim},), got {z.shape}")
        if not np.all(np.isfinite(z)):
            return -np.inf, None, int(np.argmin(np.isfinite(z)))

        n, J = self.n_specimens, self.n_cells
        eta0, eta1, z_rho, z_sig, z_beta, z_g0, z_g1 = z[:N_PARAMS]
        rho = float(expit(z_rho))
        if not 0.0 < rho < 1.0:
            return -np.inf, None, 2
        with np.errstate(over="ignore", invalid="ignore", under="ignore"):
            scales = np.exp([z_sig, z_beta, z_g0, z_g1])
            # Values whose cube would overflow or underflow are treated as
            # outside the constrained space, like an exact zero or inf from
            # exp itself: the densities and gradients below need powers up
            # to the third to stay finite and positive.
            usable = np.isfinite(scales) & (scales > 1e-100) & (scales < 1e100)
            if not np.all(usable):
                return -np.inf, None, 3 + int(np.argmin(usable))
            sigma, beta, g0, g1 = scales

            u = z[N_PARAMS:].reshape(n, J - 1)
            exp_u = np.exp(u)
            if not np.all(np.isfinite(exp_u)):
                flat = int(np.argmin(np.isfinite(exp_u.ravel())))
                return -np.inf, None, N_PARAMS + flat

            y = self._assemble(self._uts[:, None] + exp_u)

            effects = (g0 * (1.0 - self._edge) + g1 * self._edge) * self._volume
            weights = self.kernel.weights(self._dist, beta, self.grid.cutoff)
            adjustment = self._select @ (weights * effects).T  # (n, J)
            x = y + adjustment

            mu = eta0 + eta1 * self._moe
            one_m_r2 = 1.0 - rho * rho
            sig2 = sigma * sigma
            stat_var = sig2 / one_m_r2
            r1 = x[:, 0] - mu
            resid = x[:, 1:] - (1.0 - rho) * mu[:, None] - rho * x[:, :-1]

            loglik = (
                -0.5 * n * np.log(2.0 * np.pi * stat_var)
                - 0.5 * np.sum(r1 * r1) / stat_var
                - 0.5 * n * (J - 1) * np.log(2.0 * np.pi * sig2)
                - 0.5 * np.sum(resid * resid) / sig2
            )

            prior = self.prior
            lp = (
                -(eta0 * eta0 + eta1 * eta1) / (2.0 * prior.sd_eta ** 2)
                - (rho - prior.rho_loc) ** 2 / (2.0 * prior.rho_scale ** 2)
                - (beta * beta + g0 * g0 + g1 * g1) / (2.0 * prior.half_normal_scale ** 2)
                - np.log1p((sigma / prior.cauchy_scale) ** 2)
            )

            # log|d constrained / d unconstrained|; logit terms written stably
            jac = (
                z_sig + z_beta + z_g0 + z_g1
                - np.logaddexp(0.0, -z_rho) - np.logaddexp(0.0, z_rho)
                + np.sum(u)
            )

            value = float(loglik + lp + jac)
            if not np.isfinite(value):
                return -np.inf, None, int(np.argmax(np.abs(z)))
            if not want_grad:
                return value, None, None

            # d loglik / d X
            delta = np.zeros((n, J))
            delta[:, 0] = -r1 / stat_var
            if J > 1:
                delta[:, 1:] -= resid / sig2
                delta[:, :-1] += rho * resid / sig2

            d_mu = r1 / stat_var + (1.0 - rho) / sig2 * resid.sum(axis=1)
            d_eta0 = d_mu.sum() - eta0 / prior.sd_eta ** 2
            d_eta1 = (self._moe * d_mu).sum() - eta1 / prior.sd_eta ** 2

            d_rho = (
                -n * rho / one_m_r2
                + rho * np.sum(r1 * r1) / sig2
                + np.sum(resid * (x[:, :-1] - mu[:, None])) / sig2
                - (rho - prior.rho_loc) / prior.rho_scale ** 2
            )
            d_sigma = (
                -n * J / sigma
                + one_m_r2 * np.sum(r1 * r1) / sigma ** 3
                + np.sum(resid * resid) / sigma ** 3
                - 2.0 * sigma / (prior.cauchy_scale ** 2 + sig2)
            )

            hn2 = prior.half_normal_scale ** 2
            if self._volume.shape[0] > 0:
                delta_sel = delta[self._knot_owner]  # (K, J)
                per_knot = np.einsum("jk,kj->k", weights, delta_sel)
                d_g0 = np.sum((1.0 - self._edge) * self._volume * per_knot) - g0 / hn2
                d_g1 = np.sum(self._edge * self._volume * per_knot) - g1 / hn2
                dw_dbeta = self.kernel.weight_beta_derivative(self._dist, weights)
                d_beta = (
                    np.sum(effects * np.einsum("jk,kj->k", dw_dbeta, delta_sel))
                    - beta / hn2
                )
            else:
                d_g0 = -g0 / hn2
                d_g1 = -g1 / hn2
                d_beta = -beta / hn2

            grad = np.empty(self.dim)
            grad[0] = d_eta0
            grad[1] = d_eta1
            grad[2] = d_rho * rho * (1.0 - rho) + (1.0 - 2.0 * rho)
            grad[3] = d_sigma * sigma + 1.0
            grad[4] = d_beta * beta + 1.0
            grad[5] = d_g0 * g0 + 1.0
            grad[6] = d_g1 * g1 + 1.0
            grad[N_PARAMS:] = delta[self._lat_rows, self._lat_cols] * exp_u.ravel() + 1.0

            if not np.all(np.isfinite(grad)):
                return -np.inf, None, int(np.argmin(np.isfinite(grad)))
            return value, grad, None


def augmented_loglik(params: ModelParams, data: AugmentedPosterior, latents) -> float:
    """Likelihood factor of the augmented posterior on the constrained scale:
    the sum over specimens of the AR(1) log-density of the knot-readjusted
    strengths.  Latents are assumed to satisfy their truncation."""
    latents = data._as_latent_array(latents)
    y = data._assemble(latents)
    effects = (params.gamma0 * (1.0 - data._edge) + params.gamma1 * data._edge) * data._volume
    weights = data.kernel.weights(data._dist, params.beta, data.grid.cutoff)
    x = y + data._select @ (weights * effects).T
    mu = params.eta0 + params.eta1 * data._moe
    total = 0.0
    for i in range(data.n_specimens):
        total += _ar1_logpdf_row(x[i], mu[i], params.rho, params.sigma)
    return float(total)


def _ar1_logpdf_row(x, mu, rho, sigma) -> float:
    stat_var = sigma * sigma / (1.0 - rho * rho)
    r1 = x[0] - mu
    out = -0.5 * (np.log(2.0 * np.pi * stat_var) + r1 * r1 / stat_var)
    if x.shape[0] > 1:
        resid = x[1:] - (1.0 - rho) * mu - rho * x[:-1]
        out += -0.5 * (x.shape[0] - 1) * np.log(2.0 * np.pi * sigma * sigma)
        out += -0.5 * np.sum(resid * resid) / (sigma * sigma)
    return float(out)


def log_posterior_unconstrained(z: np.ndarray, data: AugmentedPosterior) -> float:
    """Unconstrained-space log posterior including all Jacobian terms."""
    return data.log_density(z)


def grad_log_posterior_unconstrained(z: np.ndarray, data: AugmentedPosterior) -> np.ndarray:
    """Analytic gradient of :func:`log_posterior_unconstrained`."""
    return data.grad_log_density(z)
