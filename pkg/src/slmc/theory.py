"""Closed-form rates and bounds for subsampled Langevin dynamics.

Every bound holds up to universal constants that the analysis leaves
undetermined; they live in ``TheoryInputs.constants`` and default to 1.
Logarithms are natural throughout.  The recurring scale ``d * ln(n)^2`` is
called ``lnb`` below.

Quantities that overflow a double (the oscillation bound and the exponential
moment bound) are returned on log scale.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "WLSI_THRESHOLD",
    "LOG_C_UNIV",
    "TheoryInputs",
    "TheoryReport",
    "lnb",
    "wlsi_phi",
    "wlsi_phi_readable",
    "poincare_lower_bound",
    "poincare_avg_lower_bound",
    "cnd",
    "osc_bound_log",
    "j0_bound",
    "entropy_envelope",
    "envelope_peak_time",
    "mixing_time",
    "moment_bound",
    "exp_moment_bound_log",
    "theory_report",
]

WLSI_THRESHOLD = 1.0 / math.e + 0.5
LOG_C_UNIV = 3.0 / (14.0 * math.e**2) * WLSI_THRESHOLD + 1.0 + math.log(14.0 / 3.0)

_DEFAULT_CONSTANTS = {"kappa": 1.0, "a": 32.0, "C1": 1.0, "C2": 1.0, "C3": 1.0, "C": 1.0,
                      "c_univ": math.exp(LOG_C_UNIV)}


@dataclass(frozen=True)
class TheoryInputs:
    n: int
    d: int
    r: float = 0.0
    beta: float = 1.0
    c: float = 1.0
    L: float = 1.0
    lam_bar: float = 1.0
    C_P: Optional[float] = None
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be >= 2")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        # r = 1 is the limiting Laplace case; the formulas stay finite there
        if not 0 <= self.r <= 1:
            raise ValueError("r must lie in [0, 1]")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        for name in ("c", "L", "lam_bar"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.C_P is not None and not self.C_P > 0:
            raise ValueError("C_P override must be positive")
        unknown = set(self.constants) - set(_DEFAULT_CONSTANTS)
        if unknown:
            raise ValueError(f"unknown constants: {sorted(unknown)}")
        merged = {**_DEFAULT_CONSTANTS, **self.constants}
        if any(not v > 0 for v in merged.values()):
            raise ValueError("all constants must be positive")
        object.__setattr__(self, "constants", merged)

    def k(self, name: str) -> float:
        return self.constants[name]


@dataclass
class TheoryReport:
    inputs: dict
    alpha_n: float
    C_P_floor: float
    c_nd: float
    O_nd_log: float
    J0_bound: float
    t_eps: float
    eps: float

    def to_dict(self) -> dict:
        return asdict(self)


def lnb(n: int, d: int) -> float:
    return d * math.log(n) ** 2


def wlsi_phi(s: float, C_P: float, log_c: float = LOG_C_UNIV) -> float:
    """Rate function of the weak log-Sobolev inequality implied by a Poincare constant.

    Zero for ``s > 1/e + 1/2``, else ``(32 / C_P) * log(c_univ / s)``.
    """
    if not s > 0 or not C_P > 0:
        raise ValueError("need s > 0 and C_P > 0")
    if s > WLSI_THRESHOLD:
        return 0.0
    return 32.0 / C_P * (log_c - math.log(s))


def wlsi_phi_readable(s: float, C_P: float, a: float = 32.0) -> float:
    """Display form ``a (1 + log(1/s)) / C_P`` of :func:`wlsi_phi`."""
    if not s > 0 or not C_P > 0:
        raise ValueError("need s > 0 and C_P > 0")
    if s > WLSI_THRESHOLD:
        return 0.0
    return a * (1.0 - math.log(s)) / C_P


def poincare_lower_bound(inputs: TheoryInputs) -> float:
    """Sample-free floor ``kappa / lnb^((1+r)^2)`` on the Poincare constant."""
    return inputs.k("kappa") / lnb(inputs.n, inputs.d) ** ((1 + inputs.r) ** 2)


def poincare_avg_lower_bound(n: int, d: int, L: float, alpha_exp: float,
                             kappa: float = 1.0) -> float:
    """Floor ``kappa (n / (L d ln n))^alpha_exp`` on the expected Poincare constant."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if alpha_exp < 0:
        raise ValueError("alpha_exp must be nonnegative")
    return kappa * (n / (L * d * math.log(n))) ** alpha_exp


def cnd(inputs: TheoryInputs) -> float:
    """``n^4 lnb^(1+r)``."""
    return inputs.n**4 * lnb(inputs.n, inputs.d) ** (1 + inputs.r)


def _log_growth(inputs: TheoryInputs) -> float:
    # n d^(1+r) (ln n)^(2 beta (1+r))
    n, d, r, b = inputs.n, inputs.d, inputs.r, inputs.beta
    return n * d ** (1 + r) * math.log(n) ** (2 * b * (1 + r))


def osc_bound_log(inputs: TheoryInputs) -> float:
    """Log of the sup-norm bound on the initial density ratio (also bounds Osc^2)."""
    n, d, r = inputs.n, inputs.d, inputs.r
    first = 0.0 if r == 0 else 0.5 * d * r * math.log(inputs.k("C1") * d / n)
    return first + inputs.k("C2") * _log_growth(inputs)


def j0_bound(inputs: TheoryInputs) -> float:
    """Bound on the initial relative entropy; the ``d ln(d/n)`` term may be negative."""
    n, d = inputs.n, inputs.d
    return inputs.k("C") * (_log_growth(inputs) + d * math.log(d / n))


def _effective_CP(inputs: TheoryInputs) -> float:
    return inputs.C_P if inputs.C_P is not None else poincare_lower_bound(inputs)


def _envelope_log_prefactor(J0, inputs, alpha_n):
    C_P = _effective_CP(inputs)
    sq = math.sqrt(C_P)
    B = C_P / alpha_n + sq
    E = sq / math.sqrt(inputs.k("a")) + C_P / (3 * alpha_n)
    log_bracket = math.log1p(B * math.exp(E)) if E < 700 else math.log(B) + E
    log_cnd_term = math.log(cnd(inputs)) - math.log(alpha_n) + log_bracket
    log_rest = float(np.logaddexp(log_cnd_term, osc_bound_log(inputs)))
    if J0 >= 0:
        log_sum = float(np.logaddexp(log_rest, math.log(J0))) if J0 > 0 else log_rest
    else:
        ratio = J0 * math.exp(-log_rest)
        log_sum = log_rest + math.log1p(ratio) if ratio > -1 else float("-inf")
    return math.log(inputs.k("C")) + log_sum


def entropy_envelope(t: float, J0: float, inputs: TheoryInputs, alpha_n: float,
                     log: bool = False) -> float:
    """Upper envelope of the relative entropy at time ``t``.

    ``C (J0 + (c_nd/alpha)[1 + (C_P/alpha + sqrt C_P) e^{sqrt(C_P/a) + C_P/(3 alpha)}] + O_nd)
    (1+t)^{1/4} exp(-sqrt(C_P/a) (sqrt(1+t) - 1))``, evaluated in log space.
    With ``log=True`` the logarithm is returned.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if not alpha_n > 0:
        raise ValueError("alpha_n must be positive")
    C_P = _effective_CP(inputs)
    rate = math.sqrt(C_P) / math.sqrt(inputs.k("a"))
    logv = (_envelope_log_prefactor(J0, inputs, alpha_n) + 0.25 * math.log1p(t)
            - rate * (math.sqrt(1.0 + t) - 1.0))
    if log:
        return logv
    return math.exp(logv) if logv < 709 else float("inf")


def envelope_peak_time(inputs: TheoryInputs) -> float:
    """Stationary point of ``ln(1+t)/4 - sqrt(C_P/a)(sqrt(1+t) - 1)``; 0 if none is positive."""
    rate = math.sqrt(_effective_CP(inputs) / inputs.k("a"))
    # derivative 1/(4(1+t)) - rate/(2 sqrt(1+t)) = 0  ->  sqrt(1+t) = 1/(2 rate)
    return max(0.0, 1.0 / (4.0 * rate * rate) - 1.0)


def mixing_time(eps: float, inputs: TheoryInputs) -> float:
    """Horizon after which the entropy bound drops below ``eps``."""
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    n, d, r = inputs.n, inputs.d, inputs.r
    L = lnb(n, d)
    bracket = math.log(1.0 / eps) ** 2 + n**2 * L ** (2 * (1 + r)) + d**2 * math.log(d) ** 2
    return inputs.k("C") * L ** ((1 + r) ** 2) * bracket


def moment_bound(inputs: TheoryInputs, alpha_mom: float) -> float:
    """``C n^alpha lnb^(alpha (1+r))`` bound on ``E U_nu(theta_t)^alpha``."""
    if alpha_mom < 1:
        raise ValueError("alpha_mom must be >= 1")
    n, d, r = inputs.n, inputs.d, inputs.r
    return inputs.k("C") * n**alpha_mom * lnb(n, d) ** (alpha_mom * (1 + r))


def exp_moment_bound_log(inputs: TheoryInputs) -> float:
    """Log of ``C1 lnb^(r/(1+r)) e^{C2 n lnb} + C3^d e^{(1+r) n c^(1/(1+r)) / 16}``."""
    n, d, r, c = inputs.n, inputs.d, inputs.r, inputs.c
    L = lnb(n, d)
    t1 = math.log(inputs.k("C1")) + r / (1 + r) * math.log(L) + inputs.k("C2") * n * L
    t2 = d * math.log(inputs.k("C3")) + (1 + r) * n * c ** (1 / (1 + r)) / 16.0
    return float(np.logaddexp(t1, t2))


def theory_report(inputs: TheoryInputs, eps: float = 0.1, alpha_n: Optional[float] = None
                  ) -> TheoryReport:
    from .sampler import default_alpha

    alpha = default_alpha(inputs.n, inputs.d, inputs.r) if alpha_n is None else alpha_n
    echo = asdict(inputs)
    return TheoryReport(
        inputs=echo,
        alpha_n=alpha,
        C_P_floor=poincare_lower_bound(inputs),
        c_nd=cnd(inputs),
        O_nd_log=osc_bound_log(inputs),
        J0_bound=j0_bound(inputs),
        t_eps=mixing_time(eps, inputs),
        eps=eps,
    )
