"""Hamiltonian Monte Carlo with dual-averaging step size adaptation and a
diagonal mass matrix estimated over expanding warmup windows.

The sampler is target-agnostic.  A target must provide:

``dim``
    dimension of the unconstrained state
``log_density_and_grad(z) -> (float, ndarray | None)``
    unnormalized log density and gradient; a divergent evaluation is
    signalled as ``(-inf, None)`` rather than an exception
``initial_state(rng) -> ndarray``
    a starting point with finite density

and may provide ``constrain(z)`` mapping the state to the reported
parameter vector (default: identity), ``param_names``, and
``check_draw(z)`` which run_chains calls on a sparse subsample of kept
draws as a cheap invariant audit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diagnostics import Diagnostics, compute_diagnostics

DIVERGENCE_THRESHOLD = 1000.0


@dataclass(frozen=True)
class HmcConfig:
    """Run settings.  iterations counts all transitions per chain; the
    first warmup of them adapt step size and mass and are discarded."""

    n_chains: int = 4
    iterations: int = 10000
    warmup: int = 5000
    target_accept: float = 0.8
    max_leapfrog_steps: int = 1024
    trajectory_time: float = 1.5
    seed: int = 0
    adapt_mass: bool = True
    keep_states: bool = False

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if not 0 < self.warmup < self.iterations:
            raise ValueError("need 0 < warmup < iterations")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.max_leapfrog_steps < 1:
            raise ValueError("max_leapfrog_steps must be >= 1")
        if self.trajectory_time <= 0:
            raise ValueError("trajectory_time must be > 0")


@dataclass
class ChainState:
    """Current position with its cached density value and gradient."""

    z: np.ndarray
    log_density: float
    grad: np.ndarray


@dataclass(frozen=True)
class PosteriorDraws:
    """Kept draws from every chain, on the constrained scale."""

    params: np.ndarray            # (n_chains, n_kept, P)
    param_names: tuple
    log_posterior: np.ndarray     # (n_chains, n_kept)
    accept_rate: np.ndarray       # (n_chains,)
    divergences: np.ndarray       # (n_chains,)
    step_size: np.ndarray         # (n_chains,)
    inv_mass: np.ndarray          # (n_chains, dim)
    states: np.ndarray | None = None  # (n_chains, n_kept, dim) if kept

    @property
    def n_chains(self) -> int:
        return self.params.shape[0]

    @property
    def n_kept(self) -> int:
        return self.params.shape[1]

    def parameter(self, name: str) -> np.ndarray:
        """Draws of one parameter, shaped (n_chains, n_kept)."""
        try:
            j = self.param_names.index(name)
        except ValueError:
            raise ValueError(f"unknown parameter {name!r}") from None
        return self.params[:, :, j]

    def pooled(self, name: str) -> np.ndarray:
        """All chains' draws of one parameter as a flat vector."""
        return self.parameter(name).reshape(-1)

    def pooled_params(self) -> np.ndarray:
        """(n_chains * n_kept, P) matrix of all kept draws."""
        return self.params.reshape(-1, self.params.shape[2])


def leapfrog(z, p, step_size, n_steps, grad_fn, inv_mass=None):
    """Volume-preserving leapfrog integration of Hamilton's equations.

    grad_fn returns the gradient of the log density, or None where the
    density is not finite; in that case integration stops and the momentum
    comes back as None.
    """
    z = np.array(z, dtype=float)
    p = np.array(p, dtype=float)
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if step_size <= 0:
        raise ValueError("step_size must be > 0")
    if inv_mass is None:
        inv_mass = np.ones_like(z)
    grad = grad_fn(z)
    if grad is None:
        return z, None
    p = p + 0.5 * step_size * grad
    for step in range(n_steps):
        z = z + step_size * inv_mass * p
        grad = grad_fn(z)
        if grad is None or not np.all(np.isfinite(grad)):
            return z, None
        p = p + (step_size if step < n_steps - 1 else 0.5 * step_size) * grad
    return z, p


def hmc_iterate(target, state: ChainState, rng, step_size, n_steps, inv_mass=None):
    """One HMC transition: momentum refresh, trajectory, Metropolis test.

    Returns (new_state, accept_prob, divergent).  A trajectory whose
    energy error exceeds DIVERGENCE_THRESHOLD in magnitude, or that leaves
    the support entirely, is divergent and always rejected.
    """
    dim = state.z.shape[0]
    if inv_mass is None:
        inv_mass = np.ones(dim)
    p = rng.standard_normal(dim) / np.sqrt(inv_mass)
    energy0 = -state.log_density + 0.5 * np.sum(p * p * inv_mass)

    z = state.z
    grad = state.grad
    log_density = state.log_density
    ok = True
    p_cur = p + 0.5 * step_size * grad
    for step in range(n_steps):
        z = z + step_size * inv_mass * p_cur
        log_density, grad = target.log_density_and_grad(z)
        if grad is None:
            ok = False
            break
        p_cur = p_cur + (step_size if step < n_steps - 1 else 0.5 * step_size) * grad

    if ok:
        # An overflowing kinetic term is one way a trajectory diverges; the
        # non-finite delta below already routes it to the divergence branch.
        with np.errstate(over="ignore"):
            energy1 = -log_density + 0.5 * np.sum(p_cur * p_cur * inv_mass)
            delta = energy1 - energy0
        if not np.isfinite(delta) or abs(delta) > DIVERGENCE_THRESHOLD:
            return state, 0.0, True
        accept_prob = float(min(1.0, np.exp(-delta)))
        if rng.random() < accept_prob:
            return ChainState(z, log_density, grad), accept_prob, False
        return state, accept_prob, False
    return state, 0.0, True


def find_reasonable_step_size(target, z, rng, inv_mass=None, initial=1.0):
    """Double or halve the step size until a single leapfrog step has an
    acceptance ratio on the near side of 1/2."""
    log_density, grad = target.log_density_and_grad(z)
    if grad is None:
        raise ValueError("log density is not finite at the given state")
    dim = z.shape[0]
    if inv_mass is None:
        inv_mass = np.ones(dim)
    p = rng.standard_normal(dim) / np.sqrt(inv_mass)
    energy0 = -log_density + 0.5 * np.sum(p * p * inv_mass)

    def log_ratio(eps):
        p1 = p + 0.5 * eps * grad
        z1 = z + eps * inv_mass * p1
        value, g1 = target.log_density_and_grad(z1)
        if g1 is None:
            return -np.inf
        p1 = p1 + 0.5 * eps * g1
        # Overflowing kinetic energy just means the trial step is far too
        # large; the -inf ratio steers the search back down.
        with np.errstate(over="ignore"):
            ratio = energy0 - (-value + 0.5 * np.sum(p1 * p1 * inv_mass))
        return -np.inf if np.isnan(ratio) else ratio

    eps = float(initial)
    ratio = log_ratio(eps)
    direction = 1.0 if ratio > np.log(0.5) else -1.0
    for _ in range(100):
        if not direction * ratio > -direction * np.log(2.0):
            break
        eps *= 2.0 ** direction
        if not 1e-10 < eps < 1e10:
            break
        ratio = log_ratio(eps)
    return eps


@dataclass
class DualAveraging:
    """Nesterov dual averaging of the log step size toward a target
    acceptance statistic."""

    initial_step_size: float
    target: float = 0.8
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75
    _t: int = field(default=0, init=False)
    _h_bar: float = field(default=0.0, init=False)

    def __post_init__(self):
        self.mu = np.log(10.0 * self.initial_step_size)
        self._log_eps = np.log(self.initial_step_size)
        self._log_eps_bar = np.log(self.initial_step_size)

    def update(self, accept_prob: float) -> None:
        self._t += 1
        eta = 1.0 / (self._t + self.t0)
        self._h_bar = (1.0 - eta) * self._h_bar + eta * (self.target - accept_prob)
        self._log_eps = self.mu - np.sqrt(self._t) / self.gamma * self._h_bar
        self._log_eps = float(np.clip(self._log_eps, -30.0, 10.0))
        weight = self._t ** (-self.kappa)
        self._log_eps_bar = weight * self._log_eps + (1.0 - weight) * self._log_eps_bar

    @property
    def step_size(self) -> float:
        return float(np.exp(self._log_eps))

    @property
    def smoothed_step_size(self) -> float:
        return float(np.exp(self._log_eps_bar))


class _RunningVariance:
    """Welford accumulator with the regularized variance used for the mass
    matrix: shrink toward a small constant when counts are low."""

    def __init__(self, dim: int):
        self.dim = dim
        self.reset()

    def reset(self) -> None:
        self.count = 0
        self._mean = np.zeros(self.dim)
        self._m2 = np.zeros(self.dim)

    def add(self, x: np.ndarray) -> None:
        self.count += 1
        delta = x - self._mean
        self._mean += delta / self.count
        self._m2 += delta * (x - self._mean)

    def regularized_variance(self) -> np.ndarray:
        if self.count < 2:
            return np.ones(self.dim)
        var = self._m2 / (self.count - 1)
        weight = self.count / (self.count + 5.0)
        var = weight * var + 1e-3 * (1.0 - weight)
        return np.maximum(var, 1e-10)


def _adaptation_schedule(warmup, init_buffer=75, term_buffer=50, base_window=25):
    """Iteration counts of the fast start buffer and the slow-window
    boundaries at which the mass matrix is re-estimated."""
    if warmup < init_buffer + base_window + term_buffer:
        init_buffer = max(1, int(round(0.15 * warmup)))
        term_buffer = max(1, int(round(0.10 * warmup)))
        base_window = max(1, warmup - init_buffer - term_buffer)
    end_slow = warmup - term_buffer
    boundaries = []
    start = init_buffer
    size = base_window
    while start < end_slow:
        end = start + size
        if end_slow - end < 2 * size:
            end = end_slow
        boundaries.append(end)
        start = end
        size *= 2
    return init_buffer, boundaries, end_slow


def _jittered_steps(rng, step_size, config: HmcConfig) -> int:
    longest = int(np.clip(round(config.trajectory_time / step_size),
                          1, config.max_leapfrog_steps))
    return int(rng.integers(1, longest, endpoint=True))


def adapt_warmup(target, state: ChainState, config: HmcConfig, rng):
    """Run the warmup phase of one chain.

    Returns (state, step_size, inv_mass) ready for fixed-setting sampling.
    Step size follows dual averaging, restarted with a fresh heuristic
    search every time the mass matrix is re-estimated from the draws of a
    completed slow window.
    """
    dim = state.z.shape[0]
    inv_mass = np.ones(dim)
    init_buffer, boundaries, end_slow = _adaptation_schedule(config.warmup)
    boundary_set = set(boundaries)

    eps = find_reasonable_step_size(target, state.z, rng, inv_mass)
    averager = DualAveraging(eps, target=config.target_accept)
    accumulator = _RunningVariance(dim)

    for it in range(config.warmup):
        n_steps = _jittered_steps(rng, averager.step_size, config)
        state, accept_prob, _ = hmc_iterate(
            target, state, rng, averager.step_size, n_steps, inv_mass
        )
        averager.update(accept_prob)
        if config.adapt_mass and init_buffer <= it < end_slow:
            accumulator.add(state.z)
        if config.adapt_mass and (it + 1) in boundary_set:
            inv_mass = accumulator.regularized_variance()
            accumulator.reset()
            eps = find_reasonable_step_size(target, state.z, rng, inv_mass,
                                            initial=averager.smoothed_step_size)
            averager = DualAveraging(eps, target=config.target_accept)

    return state, averager.smoothed_step_size, inv_mass


def run_chains(target, config: HmcConfig = HmcConfig()):
    """Sample every chain sequentially and assemble draws plus diagnostics.

    Chains get independent RNG streams spawned from the config seed, so
    results are reproducible for a fixed (target, config) pair regardless
    of how many chains ran before.  Roughly one percent of kept draws are
    passed to target.check_draw when the target defines it.
    """
    n_kept = config.iterations - config.warmup
    param_names = tuple(getattr(target, "param_names", None)
                        or [f"x{j}" for j in range(target.dim)])
    constrain = getattr(target, "constrain", None)
    check_draw = getattr(target, "check_draw", None)

    all_params = None
    all_logp = np.empty((config.n_chains, n_kept))
    all_states = (np.empty((config.n_chains, n_kept, target.dim))
                  if config.keep_states else None)
    accept_rate = np.empty(config.n_chains)
    divergences = np.zeros(config.n_chains, dtype=int)
    step_sizes = np.empty(config.n_chains)
    inv_masses = np.empty((config.n_chains, target.dim))

    seed_seqs = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    for c, seq in enumerate(seed_seqs):
        rng = np.random.default_rng(seq)
        z0 = target.initial_state(rng)
        value, grad = target.log_density_and_grad(z0)
        if grad is None:
            raise ValueError("log density is not finite at the initial state")
        state = ChainState(np.asarray(z0, dtype=float), value, grad)

        state, eps, inv_mass = adapt_warmup(target, state, config, rng)
        step_sizes[c] = eps
        inv_masses[c] = inv_mass

        accept_sum = 0.0
        for it in range(n_kept):
            n_steps = _jittered_steps(rng, eps, config)
            state, accept_prob, divergent = hmc_iterate(
                target, state, rng, eps, n_steps, inv_mass
            )
            accept_sum += accept_prob
            if divergent:
                divergences[c] += 1
            theta = (constrain(state.z) if constrain is not None
                     else np.array(state.z, dtype=float))
            if all_params is None:
                all_params = np.empty((config.n_chains, n_kept, theta.shape[0]))
            all_params[c, it] = theta
            all_logp[c, it] = state.log_density
            if all_states is not None:
                all_states[c, it] = state.z
            if check_draw is not None and rng.random() < 0.01:
                check_draw(state.z)
        accept_rate[c] = accept_sum / n_kept

    diagnostics = compute_diagnostics(all_params, param_names,
                                      divergences, accept_rate)
    draws = PosteriorDraws(
        params=all_params,
        param_names=param_names,
        log_posterior=all_logp,
        accept_rate=accept_rate,
        divergences=divergences,
        step_size=step_sizes,
        inv_mass=inv_masses,
        states=all_states,
    )
    return draws, diagnostics
