"""Continuous-time stochastic Langevin dynamics with Poissonian subsampling.

The pair ``(theta_t, X_t)`` evolves as follows.  ``X_t`` holds one observation
index, redrawn uniformly from ``{0..n-1}`` at the arrival times of a Poisson
clock of intensity ``alpha_n``.  Between arrivals ``theta`` follows the
overdamped Langevin SDE driven by the active observation,

    d theta = -grad U_{X_t}(theta) dt + sqrt(2) dB_t.

Jump times are simulated exactly.  The diffusion is discretised by
Euler-Maruyama with step ``h``; the last sub-step before a jump or a
recording time is shortened so that both are hit exactly.

Replicas are simulated in blocks of ``block_size``.  Block ``b`` draws from a
Philox stream keyed by ``(seed, b)``, so results do not depend on the number
of workers or on completion order.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Optional, Union

import numpy as np

from .potential import PotentialModel, grad_mean_potential, grad_potential

__all__ = [
    "DivergenceError",
    "SamplerConfig",
    "SamplerState",
    "Trajectory",
    "EnsembleSnapshot",
    "Ensemble",
    "TestFunction",
    "init_sigma",
    "default_alpha",
    "sample_jump_schedule",
    "step_euler",
    "run_slmc",
    "run_full_lmc",
    "run_ensemble",
    "apply_generator",
    "block_rng",
    "constant_one",
    "squared_norm",
    "indicator",
]

DIVERGENCE_RADIUS = 1e6


class DivergenceError(FloatingPointError):
    """theta left the ball of radius 1e6 * sqrt(d) or became non-finite."""

    def __init__(self, t, theta, h):
        super().__init__(f"divergence at t={t:g} with step h={h:g}")
        self.t = t
        self.theta = theta
        self.h = h


@dataclass(frozen=True)
class SamplerConfig:
    """Run-time settings.

    ``init_x_mode`` is ``"uniform"`` or an integer observation index (the
    fixed start).  ``zero_noise`` drops the Brownian increment and is only
    meant for tests.
    """

    alpha_n: float
    h: float
    T: float
    sigma2: float
    seed: int = 0
    init_x_mode: Union[str, int] = "uniform"
    zero_noise: bool = False
    block_size: int = 4096

    def __post_init__(self):
        errors = []
        if not self.alpha_n >= 0:
            errors.append("alpha_n must be nonnegative")
        if not self.h > 0:
            errors.append("h must be positive")
        elif self.alpha_n > 0 and self.h > 1.0 / (10.0 * self.alpha_n) * (1 + 1e-12):
            errors.append("h must not exceed 1/(10 alpha_n)")
        if not self.T > 0:
            errors.append("T must be positive")
        if not self.sigma2 > 0:
            errors.append("sigma2 must be positive")
        if not (self.init_x_mode == "uniform" or isinstance(self.init_x_mode, (int, np.integer))):
            errors.append("init_x_mode must be 'uniform' or an observation index")
        if self.block_size < 1:
            errors.append("block_size must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            errors.append("seed must be a 64-bit unsigned integer")
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def fixed_obs(self) -> Optional[int]:
        return None if self.init_x_mode == "uniform" else int(self.init_x_mode)

    def to_dict(self) -> dict:
        return {
            "alpha_n": self.alpha_n, "h": self.h, "T": self.T, "sigma2": self.sigma2,
            "seed": int(self.seed), "init_x_mode": self.init_x_mode if self.fixed_obs is None
            else int(self.init_x_mode),
            "zero_noise": self.zero_noise, "block_size": self.block_size,
        }


@dataclass(frozen=True)
class SamplerState:
    t: float
    theta: np.ndarray
    active_obs: int
    next_jump_t: float
    gradient_evals: int = 0


@dataclass
class Trajectory:
    times: np.ndarray
    thetas: np.ndarray
    active_obs_seq: np.ndarray
    jump_times: np.ndarray
    gradient_evals: int
    steps: int


@dataclass
class EnsembleSnapshot:
    """R replicas of ``(theta, active_obs)`` at one time."""

    time: float
    theta: np.ndarray
    active_obs: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.ndim == 1:
            self.theta = self.theta[:, None]
        self.active_obs = np.asarray(self.active_obs, dtype=np.int64)
        if self.theta.shape[0] != self.active_obs.shape[0]:
            raise ValueError("theta and active_obs must have one row per replica")
        if self.theta.shape[0] < 2:
            raise ValueError("a snapshot needs at least two replicas")

    @property
    def R(self) -> int:
        return self.theta.shape[0]

    @property
    def d(self) -> int:
        return self.theta.shape[1]


@dataclass
class Ensemble:
    snapshots: dict
    R: int
    config: SamplerConfig
    gradient_evals: int = 0
    steps: int = 0
    method: str = "slmc"

    @property
    def times(self):
        return sorted(self.snapshots)


# ---------------------------------------------------------------- tuning


def init_sigma(n: int, L: float, lam_bar: float, c1: float, c2: float) -> float:
    """Initial variance at the midpoint of ``[c1, c2] / (n L + lam_bar)``."""
    if not lam_bar > 0:
        raise ValueError("prior Lipschitz constant must be positive")
    if not L > 0 or n < 1:
        raise ValueError("need n >= 1 and L > 0")
    if not 0 < c1 <= c2:
        raise ValueError("need 0 < c1 <= c2")
    if c2 >= 1:
        raise ValueError("the initial-variance window requires c2 < 1")
    return 0.5 * (c1 + c2) / (n * L + lam_bar)


def default_alpha(n: int, d: int, r: float) -> float:
    """Jump intensity ``1 / (n (d ln^2 n)^(1+r))``, natural log."""
    if n < 2:
        raise ValueError("default_alpha needs n >= 2")
    if d < 1:
        raise ValueError("d must be >= 1")
    return 1.0 / (n * (d * math.log(n) ** 2) ** (1 + r))


def sample_jump_schedule(alpha_n: float, T: float, rng) -> np.ndarray:
    """Arrival times in ``[0, T]`` of a Poisson clock of intensity ``alpha_n``."""
    if not alpha_n > 0:
        raise ValueError("alpha_n must be positive")
    if T <= 0:
        return np.empty(0)
    out = []
    t = 0.0
    chunk = max(16, int(alpha_n * T * 1.2) + 16)
    while True:
        arr = t + np.cumsum(rng.exponential(1.0 / alpha_n, chunk))
        keep = arr[arr <= T]
        out.append(keep)
        if keep.size < chunk:
            break
        t = arr[-1]
    return np.concatenate(out)


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(block)])))


# ---------------------------------------------------------------- single step


def step_euler(model: PotentialModel, state: SamplerState, h: float, rng,
               zero_noise: bool = False) -> SamplerState:
    """One Euler-Maruyama step driven by the active observation.

    ``h = 0`` returns the state untouched and draws nothing.
    """
    if h < 0:
        raise ValueError("h must be nonnegative")
    if state.t + h > state.next_jump_t * (1 + 1e-12) + 1e-300:
        raise ValueError("an Euler step may not cross the next jump time")
    if h == 0:
        return state
    theta = np.asarray(state.theta, dtype=float)
    g = grad_potential(model, state.active_obs, theta)
    new = theta - h * g
    if not zero_noise:
        new = new + math.sqrt(2 * h) * rng.standard_normal(theta.shape)
    t = state.t + h
    _guard(new, t, h)
    return replace(state, t=t, theta=new, gradient_evals=state.gradient_evals + 1)


def _guard(theta, t, h):
    theta = np.atleast_2d(theta)
    bound2 = DIVERGENCE_RADIUS**2 * theta.shape[-1]
    sq = np.einsum("ij,ij->i", theta, theta)
    # NaN compares false, so this also catches non-finite states
    if not (sq <= bound2).all():
        k = int(np.flatnonzero(~(sq <= bound2))[0])
        tk = float(np.broadcast_to(t, sq.shape)[k])
        raise DivergenceError(tk, theta[k].copy(), h)


# ---------------------------------------------------------------- engine


def _check_record_times(record_times, T):
    times = np.asarray(record_times, dtype=float).ravel()
    if times.size == 0:
        raise ValueError("record_times must not be empty")
    if np.any(times < 0) or np.any(times > T * (1 + 1e-12)):
        raise ValueError("record_times must lie in [0, T]")
    if np.any(np.diff(times) <= 0):
        raise ValueError("record_times must be strictly increasing")
    return times


def _simulate(model, cfg: SamplerConfig, n_rep: int, times, full_gradient: bool, rng,
              track_jumps: bool = False, grad_counter: Optional[Callable] = None):
    """Advance ``n_rep`` replicas through ``times``; returns recorded arrays."""
    n, d = model.n, model.d
    theta = math.sqrt(cfg.sigma2) * rng.standard_normal((n_rep, d))
    fixed = cfg.fixed_obs
    if fixed is not None:
        if not 0 <= fixed < n:
            raise ValueError(f"fixed start index {fixed} outside [0, {n})")
        obs = np.full(n_rep, fixed, dtype=np.int64)
    else:
        obs = rng.integers(n, size=n_rep)
    if cfg.alpha_n > 0:
        next_jump = rng.exponential(1.0 / cfg.alpha_n, n_rep)
    else:
        next_jump = np.full(n_rep, np.inf)
    t = np.zeros(n_rep)
    steps = np.zeros(n_rep, dtype=np.int64)
    # active data points, refreshed only at jumps
    X = model.X
    xcur = X[obs]
    prior_grad, lik_grad = model.prior.gradient, model.grad_neg_log_lik
    rec_theta = np.empty((len(times), n_rep, d))
    rec_obs = np.empty((len(times), n_rep), dtype=np.int64)
    jumps = []
    for k, tau in enumerate(times):
        while True:
            live = t < tau
            n_live = int(np.count_nonzero(live))
            if n_live == 0:
                break
            # all-live fast path avoids fancy indexing; arithmetic is identical
            act = slice(None) if n_live == n_rep else np.flatnonzero(live)
            ta = t[act]
            nj = next_jump[act]
            to_jump = nj - ta
            to_rec = tau - ta
            dt = np.minimum(cfg.h, np.minimum(to_jump, to_rec))
            th = theta[act]
            if full_gradient:
                g = grad_mean_potential(model, th)
            else:
                # same sum as grad_potential; the divergence guard below
                # catches non-finite gradients through theta
                g = prior_grad(th) + n * lik_grad(th, xcur[act])
            if grad_counter is not None:
                grad_counter(n_live * (n if full_gradient else 1))
            th = th - dt[:, None] * g
            if not cfg.zero_noise:
                th += np.sqrt(2.0 * dt)[:, None] * rng.standard_normal((n_live, d))
            new_t = ta + dt
            hit_rec = to_rec <= dt
            hit_jump = to_jump <= dt
            new_t[hit_rec] = tau
            new_t[hit_jump] = nj[hit_jump]
            _guard(th, new_t, cfg.h)
            theta[act] = th
            t[act] = new_t
            steps[act] += 1
            if hit_jump.any():
                jidx = np.flatnonzero(live)[hit_jump] if n_live < n_rep else np.flatnonzero(hit_jump)
                if track_jumps:
                    jumps.extend(nj[hit_jump].tolist())
                obs[jidx] = rng.integers(n, size=jidx.size)
                xcur[jidx] = X[obs[jidx]]
                next_jump[jidx] = nj[hit_jump] + rng.exponential(1.0 / cfg.alpha_n, jidx.size)
        rec_theta[k] = theta
        rec_obs[k] = obs
    return rec_theta, rec_obs, steps, np.asarray(jumps)


def _trajectory(model, cfg, record_times, full_gradient):
    times = _check_record_times(record_times, cfg.T)
    rng = block_rng(cfg.seed, 0)
    th, ob, steps, jumps = _simulate(model, cfg, 1, times, full_gradient, rng, track_jumps=True)
    per_step = model.n if full_gradient else 1
    s = int(steps[0])
    return Trajectory(times, th[:, 0, :], ob[:, 0], jumps, s * per_step, s)


def run_slmc(model: PotentialModel, config: SamplerConfig, record_times) -> Trajectory:
    """Single SLMC path recorded at ``record_times``."""
    return _trajectory(model, config, record_times, full_gradient=False)


def run_full_lmc(model: PotentialModel, config: SamplerConfig, record_times) -> Trajectory:
    """Full-gradient Langevin path.

    The jump clock is still simulated, with the same random draws as
    :func:`run_slmc`, so both samplers share one time grid and matched seeds
    give matched Brownian increments.  ``X_t`` does not enter the drift.
    """
    return _trajectory(model, config, record_times, full_gradient=True)


def run_ensemble(model: PotentialModel, config: SamplerConfig, R: int, record_times,
                 method: str = "slmc", workers: int = 1,
                 grad_counter: Optional[Callable] = None) -> Ensemble:
    """``R`` independent replicas, snapshotted at each of ``record_times``."""
    if method not in ("slmc", "lmc"):
        raise ValueError("method must be 'slmc' or 'lmc'")
    if R < 1:
        raise ValueError("R must be >= 1")
    times = _check_record_times(record_times, config.T)
    full = method == "lmc"
    bs = config.block_size
    blocks = [(b, min(bs, R - b * bs)) for b in range((R + bs - 1) // bs)]

    def run(block):
        b, size = block
        return _simulate(model, config, size, times, full, block_rng(config.seed, b),
                         grad_counter=grad_counter)

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, blocks))
    else:
        results = [run(b) for b in blocks]
    thetas = np.concatenate([r[0] for r in results], axis=1)
    obs = np.concatenate([r[1] for r in results], axis=1)
    steps = int(sum(int(r[2].sum()) for r in results))
    snaps = {float(tk): EnsembleSnapshot(float(tk), thetas[k], obs[k]) for k, tk in enumerate(times)}
    per_step = model.n if full else 1
    return Ensemble(snaps, R, config, gradient_evals=steps * per_step, steps=steps, method=method)


# ---------------------------------------------------------------- generator


@dataclass(frozen=True)
class TestFunction:
    """f(theta, x) with its theta-gradient and theta-Laplacian.

    All callables take ``theta`` of shape ``(..., d)`` and an integer array of
    observation indices broadcastable to ``theta.shape[:-1]``.
    """

    value: Callable
    grad: Callable
    laplacian: Callable
    name: str = "f"

    __test__ = False  # not a pytest class


def constant_one() -> TestFunction:
    return TestFunction(
        lambda th, i: np.ones(np.shape(th)[:-1]),
        lambda th, i: np.zeros(np.shape(th)),
        lambda th, i: np.zeros(np.shape(th)[:-1]),
        name="one",
    )


def squared_norm() -> TestFunction:
    return TestFunction(
        lambda th, i: np.sum(np.asarray(th) ** 2, axis=-1),
        lambda th, i: 2.0 * np.asarray(th),
        lambda th, i: np.full(np.shape(th)[:-1], 2.0 * np.shape(th)[-1]),
        name="sqnorm",
    )


def indicator(k: int) -> TestFunction:
    return TestFunction(
        lambda th, i: (np.broadcast_to(i, np.shape(th)[:-1]) == k).astype(float),
        lambda th, i: np.zeros(np.shape(th)),
        lambda th, i: np.zeros(np.shape(th)[:-1]),
        name=f"indicator_{k}",
    )


def apply_generator(model: PotentialModel, alpha_n: float, f: TestFunction, theta, i):
    """(L f)(theta, X_i): diffusion part plus uniform-jump part."""
    theta = np.asarray(theta, dtype=float)
    i = np.asarray(i)
    drift = -np.sum(grad_potential(model, i, theta) * f.grad(theta, i), axis=-1)
    diffusion = f.laplacian(theta, i)
    fi = f.value(theta, i)
    jump = np.zeros_like(fi)
    for j in range(model.n):
        jump = jump + f.value(theta, np.full(np.shape(fi), j)) - fi
    return drift + diffusion + (alpha_n / model.n) * jump
