"""Convergence diagnostics and posterior summaries for multi-chain draws.

All functions take plain arrays shaped (n_chains, n_draws) so they work on
any scalar quantity, not just model parameters.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _as_chains(draws) -> np.ndarray:
    arr = np.asarray(draws, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"expected draws shaped (n_chains, n_draws), got {arr.shape}")
    if arr.shape[1] < 4:
        raise ValueError("need at least 4 draws per chain")
    return arr


def split_rhat(draws) -> float:
    """Potential scale reduction factor with each chain split in half.

    Values near 1 indicate the chain halves are indistinguishable; the
    usual cutoff for concern is 1.01-1.05.
    """
    arr = _as_chains(draws)
    n = arr.shape[1]
    half = n // 2
    splits = np.concatenate([arr[:, :half], arr[:, n - half:]], axis=0)
    within = splits.var(axis=1, ddof=1).mean()
    between = splits.mean(axis=1).var(ddof=1)  # already divided by n
    if within == 0.0 or np.all(splits == splits[:, :1]):
        # degenerate chains: the ratio is undefined, report that honestly
        return float("nan")
    var_plus = (half - 1) / half * within + between
    return float(np.sqrt(var_plus / within))


def _autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased (1/n) autocovariance of one sequence via FFT."""
    n = x.shape[0]
    centered = x - x.mean()
    size = 1
    while size < 2 * n:
        size *= 2
    freq = np.fft.rfft(centered, size)
    acov = np.fft.irfft(freq * np.conj(freq), size)[:n]
    return acov.real / n


def bulk_ess(draws) -> float:
    """Effective sample size from chain-averaged autocorrelations.

    Chains are split in half, autocorrelations are combined across splits
    using the between/within variance decomposition, and the Geyer pair
    sums rho_{2k} + rho_{2k+1} are accumulated until the first
    non-positive pair.  The estimate is capped at the total draw count.
    Rank-normalization is not applied.
    """
    arr = _as_chains(draws)
    m, n = arr.shape
    total = m * n
    half = n // 2
    splits = np.concatenate([arr[:, :half], arr[:, n - half:]], axis=0)
    n_seq, length = splits.shape

    acov = np.stack([_autocovariance(splits[c]) for c in range(n_seq)])
    within = (acov[:, 0] * length / (length - 1)).mean()
    between = splits.mean(axis=1).var(ddof=1)
    var_plus = (length - 1) / length * within + between
    if var_plus <= 0.0:
        return float(total)

    rho = 1.0 - (within - acov.mean(axis=0)) / var_plus
    tau = 0.0
    max_pairs = length // 2
    for k in range(max_pairs):
        pair = rho[2 * k] + rho[2 * k + 1] if 2 * k + 1 < length else rho[2 * k]
        if k > 0 and pair <= 0.0:
            break
        tau += pair
    tau = 2.0 * tau - 1.0
    if tau <= 0.0:
        return float(total)
    return float(min(total / tau, total))


def posterior_quantiles(draws, probs=(0.5, 0.025, 0.975)) -> np.ndarray:
    """Pooled-chain quantiles.

    draws may be (n_chains, n_draws) for one quantity, giving a result of
    shape (len(probs),), or (n_chains, n_draws, P) for P quantities,
    giving (len(probs), P).  Linear interpolation, matching np.quantile's
    default.
    """
    arr = np.asarray(draws, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if np.any(probs < 0) or np.any(probs > 1):
        raise ValueError("probs must lie in [0, 1]")
    if arr.ndim == 2:
        return np.quantile(arr.ravel(), probs, method="linear")
    if arr.ndim == 3:
        pooled = arr.reshape(-1, arr.shape[2])
        return np.quantile(pooled, probs, axis=0, method="linear")
    raise ValueError(f"expected 2- or 3-dimensional draws, got shape {arr.shape}")


@dataclass(frozen=True)
class Diagnostics:
    """Per-parameter convergence summary for one sampling run."""

    param_names: tuple
    rhat: np.ndarray
    ess: np.ndarray
    divergences: np.ndarray
    accept_rate: np.ndarray
    failed: bool

    @property
    def max_rhat(self) -> float:
        return float(np.max(self.rhat))

    @property
    def min_ess(self) -> float:
        return float(np.min(self.ess))

    def __str__(self) -> str:
        lines = ["parameter      rhat      ess"]
        for name, r, e in zip(self.param_names, self.rhat, self.ess):
            lines.append(f"{name:<12} {r:7.4f} {e:8.1f}")
        lines.append(
            f"divergences per chain: {list(map(int, self.divergences))}; "
            f"mean accept: {self.accept_rate.mean():.3f}; "
            f"failed: {self.failed}"
        )
        return "\n".join(lines)


def compute_diagnostics(params, param_names, divergences, accept_rate,
                        max_divergence_share: float = 0.10) -> Diagnostics:
    """Build a :class:`Diagnostics` from constrained draws shaped
    (n_chains, n_kept, P).  A run fails when any single chain spends more
    than max_divergence_share of its kept iterations diverging."""
    params = np.asarray(params, dtype=float)
    if params.ndim != 3:
        raise ValueError("params must be (n_chains, n_kept, P)")
    n_kept = params.shape[1]
    rhat = np.array([split_rhat(params[:, :, j]) for j in range(params.shape[2])])
    ess = np.array([bulk_ess(params[:, :, j]) for j in range(params.shape[2])])
    divergences = np.asarray(divergences, dtype=int)
    failed = bool(np.any(divergences > max_divergence_share * n_kept))
    return Diagnostics(
        param_names=tuple(param_names),
        rhat=rhat,
        ess=ess,
        divergences=divergences,
        accept_rate=np.asarray(accept_rate, dtype=float),
        failed=failed,
    )
