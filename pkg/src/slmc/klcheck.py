"""Grid-based verification of the curvature hypotheses and their consequences.

A potential ``V`` is checked against the Kurdyka-Lojasiewicz type condition

    lambda_min(Hess V(theta)) >= c * V(theta)^(-r)

together with the growth bounds it implies, the composition rule for the
posterior potential and the localisation of per-observation minimisers.
Finite grids give a sound-but-incomplete verification: a failure is a
witness, a pass only covers the probed points.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .potential import (
    HypothesisViolation,
    Potential,
    PotentialModel,
    find_minimizer,
    MinimizerResult,
)

__all__ = [
    "KLParams",
    "CheckReport",
    "make_grid",
    "random_pairs",
    "check_hkl",
    "estimate_lipschitz",
    "check_growth_bounds",
    "compose_posterior_kl",
    "check_hmin",
    "declared_params",
    "ANALYTIC_TOL",
    "FD_TOL",
]

ANALYTIC_TOL = 1e-8
FD_TOL = 1e-4


@dataclass(frozen=True)
class KLParams:
    """Curvature constants ``(c, r)``, gradient Lipschitz constant ``L``,
    prior gradient Lipschitz constant ``lam_bar`` and localisation exponent ``beta``.

    ``r = 1`` with ``c >= 0`` is accepted as the limiting Laplace case
    (``c = 0`` reduces the curvature condition to plain convexity).
    """

    c: float
    r: float
    L: float
    lam_bar: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        errors = []
        if not 0 <= self.r <= 1:
            errors.append("r must lie in [0, 1]")
        if self.r < 1 and not self.c > 0:
            errors.append("c must be positive")
        if self.r == 1 and not self.c >= 0:
            errors.append("c must be nonnegative")
        if not self.L > 0:
            errors.append("L must be positive")
        if not self.lam_bar > 0:
            errors.append("lam_bar must be positive")
        if self.beta < 0:
            errors.append("beta must be nonnegative")
        if not errors and self.c > (8 * self.L / (1 + self.r)) ** (1 + self.r):
            errors.append("c exceeds (8L/(1+r))^(1+r)")
        if errors:
            raise ValueError("; ".join(errors))


@dataclass
class CheckReport:
    passed: bool
    worst_margin: float
    worst_point: Optional[np.ndarray]
    points_checked: int
    name: str = ""
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["worst_point"] = None if self.worst_point is None else np.asarray(self.worst_point).tolist()
        return out

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, default=float))


def _report(name, margins, grid, tol, details=None):
    margins = np.asarray(margins, dtype=float)
    k = int(np.argmin(margins))
    worst = float(margins[k])
    return CheckReport(worst >= -tol, worst, np.asarray(grid)[k].copy(), int(margins.size),
                       name, details or {})


def _slack(lhs, rhs, relative):
    # margin of lhs >= rhs
    s = lhs - rhs
    if relative:
        s = s / np.maximum(1.0, np.maximum(np.abs(lhs), np.abs(rhs)))
    return s


def make_grid(d: int, n_points: int = 1000, sigma2: float = 1.0, radius: Optional[float] = None,
              seed: int = 0) -> np.ndarray:
    """Half Gaussian bulk draws from N(0, sigma2 I), half a radial sweep to ``10 sqrt(d)``."""
    rng = np.random.default_rng(seed)
    radius = 10.0 * math.sqrt(d) if radius is None else radius
    n_bulk = n_points // 2
    bulk = math.sqrt(sigma2) * rng.standard_normal((n_bulk, d))
    n_rad = n_points - n_bulk
    if d == 1:
        radial = np.linspace(-radius, radius, n_rad)[:, None]
    else:
        dirs = rng.standard_normal((n_rad, d))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radial = np.linspace(0.0, radius, n_rad)[:, None] * dirs
    return np.concatenate([bulk, radial])


def random_pairs(d: int, n_pairs: int = 1000, scale: float = 1.0, seed: int = 0):
    rng = np.random.default_rng(seed)
    return scale * rng.standard_normal((n_pairs, d)), scale * rng.standard_normal((n_pairs, d))


def _values_positive(V, grid):
    vals = np.asarray(V.value(grid), dtype=float)
    if np.any(vals <= 0):
        k = int(np.argmin(vals))
        raise HypothesisViolation(
            f"potential is not positive on the grid (V={vals[k]:g} at {np.asarray(grid)[k]})"
        )
    return vals


def check_hkl(potential: Potential, params: KLParams, grid, tol: float = ANALYTIC_TOL,
              relative: bool = False) -> CheckReport:
    """Slack ``lambda_min(Hess V) - c V^{-r}`` over the grid."""
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    vals = _values_positive(potential, grid)
    lam = np.linalg.eigvalsh(potential.hessian(grid))[:, 0]
    rhs = params.c * vals ** (-params.r)
    margins = _slack(lam, rhs, relative)
    return _report("hkl", margins, grid, tol, {"c": params.c, "r": params.r})


def estimate_lipschitz(grad, pairs) -> float:
    """Largest observed ratio ``|grad(a) - grad(b)| / |a - b|``; a lower bound on L."""
    a, b = (np.atleast_2d(np.asarray(p, dtype=float)) for p in pairs)
    dist = np.linalg.norm(a - b, axis=-1)
    keep = dist >= 1e-12
    if not np.any(keep):
        raise ValueError("all pairs are coincident")
    ga, gb = np.asarray(grad(a[keep])), np.asarray(grad(b[keep]))
    return float(np.max(np.linalg.norm(ga - gb, axis=-1) / dist[keep]))


def check_growth_bounds(potential: Potential, params: KLParams, minimizer: MinimizerResult, grid,
                        tol: float = ANALYTIC_TOL, relative: bool = False) -> CheckReport:
    """The gradient and growth inequalities implied by the curvature condition.

    With ``m = min V`` and ``theta*`` its minimiser, on every grid point:

    1. ``2c/(1-r) (V^(1-r) - m^(1-r)) <= |grad V|^2``
    2. ``|grad V|^2 <= 2L (V - m)``
    3. ``V^(1+r) - m^(1+r) >= (1+r) c/2 |theta - theta*|^2``
    4. ``V - m <= L/2 |theta - theta*|^2``
    5. ``V >= 2^(-r/(1+r)) (m + ((1+r)c/2)^(1/(1+r)) |theta - theta*|^(2/(1+r)))``

    For ``r = 1`` the first left side is read as its limit ``2c log(V/m)``.
    """
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    c, r, L = params.c, params.r, params.L
    V = _values_positive(potential, grid)
    m = float(minimizer.min_value)
    if not m > 0:
        raise HypothesisViolation("minimum of the potential must be positive")
    # roundoff can put V a hair below the computed minimum
    V = np.maximum(V, m)
    g2 = np.sum(np.asarray(potential.grad(grid)) ** 2, axis=-1)
    dist2 = np.sum((grid - minimizer.argmin) ** 2, axis=-1)
    if r < 1:
        grad_low = 2 * c / (1 - r) * (V ** (1 - r) - m ** (1 - r))
    else:
        grad_low = 2 * c * (np.log(V) - math.log(m))
    parts = {
        "gradient_lower": _slack(g2, grad_low, relative),
        "gradient_upper": _slack(2 * L * (V - m), g2, relative),
        "growth_lower": _slack(V ** (1 + r) - m ** (1 + r), (1 + r) * c / 2 * dist2, relative),
        "growth_upper": _slack(L / 2 * dist2, V - m, relative),
        "growth_power_lower": _slack(
            V,
            2 ** (-r / (1 + r)) * (m + ((1 + r) * c / 2) ** (1 / (1 + r)) * dist2 ** (1 / (1 + r))),
            relative,
        ),
    }
    stacked = np.stack(list(parts.values()))
    margins = stacked.min(axis=0)
    details = {k: float(v.min()) for k, v in parts.items()}
    return _report("growth", margins, grid, tol, details)


def compose_posterior_kl(params: KLParams, n: int) -> KLParams:
    """Constants inherited by the posterior potential from per-observation ones.

    ``c -> c n^(1+r)``, same ``r``, gradient Lipschitz constant ``n L + lam_bar``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    return KLParams(params.c * n ** (1 + params.r), params.r, n * params.L + params.lam_bar,
                    params.lam_bar, params.beta)


def check_hmin(model: PotentialModel, beta: float, tol: float = 1e-8, kappa1: float = 10.0,
               kappa2: float = 10.0, M_nd: Optional[float] = None) -> CheckReport:
    """Localisation of the per-observation minimisers.

    Compares ``max_i |argmin U_{X_i}|`` with ``kappa1 sqrt(d) log^beta(n)`` and
    ``max_i min U_{X_i}`` with ``kappa2 M_nd``.  ``log n`` is floored at 1 so
    both thresholds stay constants for tiny samples; ``M_nd`` defaults to
    ``n d log^(2 beta)(n)`` with the same floor.
    """
    n, d = model.n, model.d
    logn = max(math.log(n), 1.0)
    if M_nd is None:
        M_nd = n * d * logn ** (2 * beta)
    argnorms, mins, points = [], [], []
    for i in range(n):
        pot = model.observation_potential(i)
        res = find_minimizer(pot.value, pot.grad, model.X[i][:d] if model.X.shape[1] == d
                             else np.zeros(d), tol=tol)
        argnorms.append(float(np.linalg.norm(res.argmin)))
        mins.append(res.min_value)
        points.append(res.argmin)
    thr_arg = kappa1 * math.sqrt(d) * logn**beta
    thr_min = kappa2 * M_nd
    margins = np.minimum(thr_arg - np.asarray(argnorms), thr_min - np.asarray(mins))
    rep = _report("hmin", margins, np.asarray(points), 0.0,
                  {"max_argmin_norm": max(argnorms), "max_min_value": max(mins),
                   "argmin_threshold": thr_arg, "min_threshold": thr_min})
    return rep


def declared_params(model: PotentialModel) -> KLParams:
    """Curvature constants the built-in models certify for ``-log p_theta(x)``."""
    if "c" not in model.params:
        raise ValueError("model carries no declared curvature constants")
    p = model.params
    return KLParams(p["c"], p["r"], p["L"], model.prior.lipschitz)
