"""Ensemble estimators: conditional L2 distance, relative entropy, moments.

All estimators read an :class:`~slmc.sampler.EnsembleSnapshot`, i.e. ``R``
replicas of ``(theta, active_obs)`` at a common time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .potential import NormalizerEstimate, PotentialModel, eval_mean_potential
from .sampler import (
    EnsembleSnapshot,
    SamplerConfig,
    TestFunction,
    apply_generator,
    run_ensemble,
)

__all__ = [
    "EnsembleSnapshot",
    "ConditionalL2Estimate",
    "EntropyEstimate",
    "MomentEstimate",
    "GeneratorCheck",
    "BandwidthUnderflowError",
    "estimate_It",
    "estimate_Jt",
    "estimate_moments",
    "generator_consistency",
    "kde_bandwidth",
]


class BandwidthUnderflowError(FloatingPointError):
    pass


@dataclass
class ConditionalL2Estimate:
    value: float
    bins: int
    per_bin_counts: list
    standard_error: float
    plugin_bias: float = 0.0


@dataclass
class EntropyEstimate:
    value: float
    bandwidth: float
    Z_n_used: float
    standard_error: float
    log_Z_used: float = float("nan")

    @property
    def negative_within_noise(self) -> bool:
        return -self.standard_error <= self.value < 0


@dataclass
class MomentEstimate:
    estimate: float
    standard_error: float

    def __iter__(self):
        return iter((self.estimate, self.standard_error))


@dataclass
class GeneratorCheck:
    residual: float
    scale: float
    time_derivative: float
    generator_mean: float
    se_time_derivative: float
    se_generator_mean: float
    inconsistent: bool = False

    def __iter__(self):
        return iter((self.residual, self.scale))


# ---------------------------------------------------------------- I_t


def _rank_bins(theta, bins):
    """Equal-count bins from empirical quantiles (1-D) or nested quantiles (2-D)."""
    R, d = theta.shape
    if d == 1:
        order = np.argsort(theta[:, 0], kind="stable")
        lab = np.empty(R, dtype=np.int64)
        lab[order] = np.arange(R) * bins // R
        return lab, bins
    b1 = max(1, int(round(math.sqrt(bins))))
    b2 = max(1, bins // b1)
    order = np.argsort(theta[:, 0], kind="stable")
    first = np.empty(R, dtype=np.int64)
    first[order] = np.arange(R) * b1 // R
    lab = np.empty(R, dtype=np.int64)
    for g in range(b1):
        idx = np.flatnonzero(first == g)
        sub = idx[np.argsort(theta[idx, 1], kind="stable")]
        lab[sub] = g * b2 + np.arange(sub.size) * b2 // max(sub.size, 1)
    return lab, b1 * b2


def _It_value(theta, obs, n, bins):
    lab, nb = _rank_bins(theta, bins)
    counts = np.bincount(lab * n + obs, minlength=nb * n).reshape(nb, n)
    tot = counts.sum(axis=1)
    if np.any(tot == 0):
        return None, counts
    # sum_b c_b (n sum_i p_bi^2 - 1) / R, in integer-friendly form
    num = n * np.sum(counts.astype(float) ** 2, axis=1) / tot - tot
    return float(num.sum() / theta.shape[0]), counts


def estimate_It(snap: EnsembleSnapshot, n: int, bins: int | None = None, n_boot: int = 200,
                seed: int = 0) -> ConditionalL2Estimate:
    """Plug-in estimate of the nu_n-weighted L2 distance of Law(X_t | theta_t) to uniform.

    theta-space is cut into equal-count bins; within each the conditional pmf
    of the active observation is replaced by its empirical frequencies.  The
    plug-in bias under independence is about ``(n - 1) * bins / R``.
    """
    if snap.d > 2:
        raise ValueError("binning estimator supports d <= 2")
    R = snap.R
    if bins is None:
        bins = max(1, min(20, R // 50))
    obs = snap.active_obs
    if obs.min() < 0 or obs.max() >= n:
        raise ValueError("active_obs outside [0, n)")
    if n == 1:
        return ConditionalL2Estimate(0.0, 1, [R], 0.0, 0.0)
    b = int(bins)
    while True:
        if b < 1:
            raise ValueError("no nonempty binning of the snapshot exists")
        value, counts = _It_value(snap.theta, obs, n, b)
        if value is not None:
            break
        b -= 1
    nb = counts.shape[0]
    rng = np.random.default_rng(seed)
    boots = []
    for _ in range(n_boot):
        idx = rng.integers(R, size=R)
        v, _ = _It_value(snap.theta[idx], obs[idx], n, b)
        if v is not None:
            boots.append(v)
    se = float(np.std(boots, ddof=1)) if len(boots) > 1 else float("nan")
    return ConditionalL2Estimate(value, nb, counts.sum(axis=1).tolist(), se,
                                 (n - 1) * nb / R)


# ---------------------------------------------------------------- J_t


def kde_bandwidth(theta, rule="silverman") -> float:
    """Bandwidth factor; the kernel scale along axis j is factor * std_j."""
    R, d = theta.shape
    if isinstance(rule, (int, float)):
        if rule <= 0:
            raise ValueError("bandwidth must be positive")
        return float(rule)
    if rule == "silverman":
        return (4.0 / ((d + 2) * R)) ** (1.0 / (d + 4))
    if rule == "scott":
        return R ** (-1.0 / (d + 4))
    raise ValueError(f"unknown bandwidth rule {rule!r}")


def _loo_log_kde(theta, scales, chunk=2048):
    R, d = theta.shape
    z = theta / scales
    log_norm = -np.log(R - 1) - np.sum(np.log(scales)) - 0.5 * d * math.log(2 * math.pi)
    out = np.empty(R)
    sq = np.sum(z * z, axis=1)
    for lo in range(0, R, chunk):
        hi = min(R, lo + chunk)
        d2 = sq[lo:hi, None] + sq[None, :] - 2.0 * z[lo:hi] @ z.T
        np.maximum(d2, 0.0, out=d2)
        k = np.exp(-0.5 * d2)
        k[np.arange(hi - lo), np.arange(lo, hi)] = 0.0
        s = k.sum(axis=1)
        if np.any(s <= 0):
            raise BandwidthUnderflowError(
                "leave-one-out density is zero at some replica; use a larger bandwidth"
            )
        out[lo:hi] = np.log(s) + log_norm
    return out


def estimate_Jt(snap: EnsembleSnapshot, model: PotentialModel, Z_n=None, bandwidth="silverman",
                log_Z: float | None = None) -> EntropyEstimate:
    """Relative entropy of Law(theta_t) w.r.t. the posterior, KDE plug-in.

    ``(1/R) sum_r [log n_hat(theta_r) + U_nu(theta_r) + log Z_n]`` with a
    leave-one-out Gaussian KDE.  Pass ``Z_n`` (a float or a
    :class:`NormalizerEstimate`) or ``log_Z``.  Small negative values are
    returned as is.
    """
    if snap.d > 3:
        raise ValueError("KDE entropy estimate supports d <= 3")
    if isinstance(Z_n, NormalizerEstimate):
        log_Z = Z_n.log_Z
        Z_n = Z_n.Z_n
    if log_Z is None:
        if Z_n is None or not Z_n > 0:
            raise ValueError("need a positive Z_n or log_Z")
        log_Z = math.log(Z_n)
    elif Z_n is None:
        Z_n = math.exp(log_Z) if log_Z < 700 else float("inf")
    theta = snap.theta
    factor = kde_bandwidth(theta, bandwidth)
    std = theta.std(axis=0, ddof=1)
    if np.any(std <= 0):
        raise ValueError("degenerate ensemble: zero spread along some axis")
    log_n = _loo_log_kde(theta, factor * std)
    terms = log_n + eval_mean_potential(model, theta) + log_Z
    return EntropyEstimate(float(terms.mean()), factor, float(Z_n),
                           float(terms.std(ddof=1) / math.sqrt(snap.R)), float(log_Z))


# ---------------------------------------------------------------- moments


def estimate_moments(snap: EnsembleSnapshot, model: PotentialModel, alpha_mom: float = 1.0):
    """Mean of ``U_nu(theta_r) ** alpha_mom`` over replicas, with standard error."""
    if alpha_mom < 1:
        raise ValueError("alpha_mom must be >= 1")
    vals = eval_mean_potential(model, snap.theta) ** alpha_mom
    if np.ptp(vals) == 0:
        # roundoff in the mean would otherwise leave a spurious ~1e-16 spread
        return MomentEstimate(float(vals[0]), 0.0)
    return MomentEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(snap.R)))


# ---------------------------------------------------------------- generator


def generator_consistency(model: PotentialModel, config: SamplerConfig, f: TestFunction,
                          t: float, dt: float, R: int, workers: int = 1) -> GeneratorCheck:
    """Compare d/dt E f(theta_t, X_t) with E[(L f)(theta_t, X_t)].

    One ensemble is recorded at ``t`` and ``t + dt`` so the difference
    quotient uses common random numbers.
    """
    if dt < 10 * config.h * (1 - 1e-12):
        raise ValueError("dt must be at least 10 h")
    cfg = replace(config, T=max(config.T, t + dt))
    ens = run_ensemble(model, cfg, R, [t, t + dt] if t > 0 else [0.0, dt], workers=workers)
    s0, s1 = (ens.snapshots[k] for k in ens.times)
    f0 = f.value(s0.theta, s0.active_obs)
    f1 = f.value(s1.theta, s1.active_obs)
    dq = (f1 - f0) / dt
    lf = apply_generator(model, config.alpha_n, f, s0.theta, s0.active_obs)
    lhs, rhs = float(dq.mean()), float(lf.mean())
    se_l = float(dq.std(ddof=1) / math.sqrt(R))
    se_r = float(lf.std(ddof=1) / math.sqrt(R))
    residual = abs(lhs - rhs)
    scale = abs(rhs) + se_l + se_r
    return GeneratorCheck(residual, scale, lhs, rhs, se_l, se_r,
                          inconsistent=(scale == 0 and residual > 0))
