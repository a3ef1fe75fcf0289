"""Forward model: distance-decay kernels, knot-adjusted cell strengths,
the min/argmin observation map, and the AR(1) latent strength process.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KERNEL_KINDS = ("exponential", "power", "gaussian")


@dataclass(frozen=True)
class DecayKernel:
    """Distance-decay weight h(d) applied to knot effects.

    kind
        "exponential": h(d) = exp(-beta*d) * 1(d <= cutoff)
        "power":       h(d) = d**(-beta)   * 1(d <= cutoff), singular at d=0
        "gaussian":    h(d) = exp(-beta*d^2) * 1(d <= cutoff)
    """

    kind: str = "exponential"

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}; expected one of {KERNEL_KINDS}")

    def weights(self, distances: np.ndarray, beta: float, cutoff: float) -> np.ndarray:
        """Element-wise h(d); zero beyond the cutoff distance."""
        if beta <= 0:
            raise ValueError(f"beta must be > 0, got {beta}")
        d = np.asarray(distances, dtype=float)
        inside = d <= cutoff
        if self.kind == "exponential":
            w = np.exp(-beta * d)
        elif self.kind == "gaussian":
            w = np.exp(-beta * d * d)
        else:
            if np.any(d == 0):
                raise ValueError("power kernel is singular at zero distance")
            w = d ** (-beta)
        return np.where(inside, w, 0.0)

    def weight_beta_derivative(self, distances: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """d h(d) / d beta, given h(d) already evaluated (cutoff included)."""
        d = np.asarray(distances, dtype=float)
        if self.kind == "exponential":
            return -d * weights
        if self.kind == "gaussian":
            return -d * d * weights
        # log(d) is safe: a zero distance was rejected when weights were built
        return -np.log(d, where=weights > 0, out=np.zeros_like(d)) * weights


def weight_matrix(distances: np.ndarray, beta: float, cutoff: float,
                  kernel: DecayKernel = DecayKernel()) -> np.ndarray:
    """Apply a decay kernel element-wise to a distance matrix."""
    return kernel.weights(distances, beta, cutoff)


def knot_effect_vector(knots, gamma0: float, gamma1: float) -> np.ndarray:
    """Per-knot strength reduction per unit weight: gamma1*volume for edge
    knots, gamma0*volume otherwise."""
    if gamma0 <= 0 or gamma1 <= 0:
        raise ValueError("gamma0 and gamma1 must be > 0")
    if len(knots) == 0:
        return np.zeros(0)
    volumes = np.array([k.volume for k in knots], dtype=float)
    edges = np.array([k.edge for k in knots], dtype=bool)
    return np.where(edges, gamma1, gamma0) * volumes


def adjust_strength(clear: np.ndarray, weights: np.ndarray, effects: np.ndarray) -> np.ndarray:
    """Cell strengths adjusted for knots: clear strength minus the
    distance-weighted knot effects."""
    clear = np.asarray(clear, dtype=float)
    weights = np.asarray(weights, dtype=float)
    effects = np.asarray(effects, dtype=float)
    if weights.shape != (clear.shape[0], effects.shape[0]):
        raise ValueError(
            f"weight matrix shape {weights.shape} does not conform to "
            f"{clear.shape[0]} cells and {effects.shape[0]} knots"
        )
    if effects.shape[0] == 0:
        return clear.copy()
    return clear - weights @ effects


def observed_strength(adjusted: np.ndarray) -> tuple[float, int]:
    """The destructive-test outcome: (minimum cell strength, 1-based cell
    index of the minimum).  Ties break to the lowest index."""
    adjusted = np.asarray(adjusted, dtype=float)
    if adjusted.ndim != 1 or adjusted.shape[0] < 1:
        raise ValueError("adjusted strengths must be a non-empty vector")
    m = int(np.argmin(adjusted))
    return float(adjusted[m]), m + 1


def ar1_sample(rng: np.random.Generator, mu, rho, sigma, n_cells: int) -> np.ndarray:
    """Draw from the stationary AR(1) strength process.

    The first cell is drawn from the stationary marginal
    N(mu, sigma^2/(1-rho^2)); subsequent cells follow
    X_j = (1-rho)*mu + rho*X_{j-1} + eps_j with eps_j ~ N(0, sigma^2).

    ``mu``, ``rho``, ``sigma`` may be scalars (returns shape (n_cells,)) or
    arrays of a common shape (m,) for m independent draws (returns
    (m, n_cells)).
    """
    mu = np.asarray(mu, dtype=float)
    rho = np.asarray(rho, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(rho <= 0) or np.any(rho >= 1):
        raise ValueError("rho must be in (0, 1)")
    if np.any(sigma <= 0):
        raise ValueError("sigma must be > 0")
    scalar = mu.ndim == 0 and rho.ndim == 0 and sigma.ndim == 0
    mu, rho, sigma = np.broadcast_arrays(np.atleast_1d(mu), np.atleast_1d(rho),
                                         np.atleast_1d(sigma))
    m = mu.shape[0]
    eps = rng.standard_normal((m, n_cells))
    x = np.empty((m, n_cells))
    x[:, 0] = mu + sigma / np.sqrt(1.0 - rho * rho) * eps[:, 0]
    drift = (1.0 - rho) * mu
    for j in range(1, n_cells):
        x[:, j] = drift + rho * x[:, j - 1] + sigma * eps[:, j]
    return x[0] if scalar else x


def ar1_logpdf(x: np.ndarray, mu: float, rho: float, sigma: float) -> float:
    """Log-density of the stationary AR(1) process, evaluated sequentially.

    Equals the density of the joint Gaussian with covariance
    sigma^2 * rho^|j-k| / (1 - rho^2).
    """
    x = np.asarray(x, dtype=float)
    if not (np.all(np.isfinite(x)) and np.isfinite(mu) and np.isfinite(rho)
            and np.isfinite(sigma)):
        raise ValueError("ar1_logpdf requires finite inputs")
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must be in (0, 1), got {rho}")
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    stat_var = sigma * sigma / (1.0 - rho * rho)
    r1 = x[0] - mu
    out = -0.5 * (np.log(2.0 * np.pi * stat_var) + r1 * r1 / stat_var)
    if x.shape[0] > 1:
        resid = x[1:] - (1.0 - rho) * mu - rho * x[:-1]
        out += -0.5 * (x.shape[0] - 1) * np.log(2.0 * np.pi * sigma * sigma)
        out += -0.5 * np.sum(resid * resid) / (sigma * sigma)
    return float(out)
