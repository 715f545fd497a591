"""Experiment orchestration: configs, ensemble runs, benchmarks, verification.

A config is one JSON or TOML file::

    version = 1
    replicas = 1000
    record_times = [0.0, 1.0, 2.0]
    method = "slmc"            # or "lmc"
    output = "runs/demo"

    [model]                    # see slmc.potential.model_from_dict
    kind = "gaussian"
    n = 20
    d = 1

    [sampler]                  # alpha_n and sigma2 accept "default"
    alpha_n = "default"
    h = 0.001
    T = 2.0
    sigma2 = "default"
    seed = 7

    [diagnostics]
    It = true
    Jt = { bandwidth = "silverman" }
    moments = { alpha = 1.0 }

Optional tables ``theory`` (eps, beta, C_P, constants), ``verify`` (declared
constants and grid settings) and ``bench`` (matched_budget, reference_factor).
Unknown keys anywhere are errors.
"""

from __future__ import annotations

import json
import math
import os
import shutil
import sys
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .diagnostics import estimate_It, estimate_Jt, estimate_moments
from .io import config_hash, ensemble_to_csv, rows_to_csv, sha256_file, write_json
from .klcheck import (
    ANALYTIC_TOL,
    KLParams,
    check_growth_bounds,
    check_hkl,
    check_hmin,
    compose_posterior_kl,
    declared_params,
    make_grid,
)
from .potential import (
    Potential,
    PotentialModel,
    conjugate_posterior,
    eval_mean_potential,
    find_minimizer,
    grad_mean_potential,
    model_from_dict,
    normalize,
    normalize_posterior,
)
from .sampler import DivergenceError, SamplerConfig, default_alpha, init_sigma, run_ensemble
from .theory import TheoryInputs, entropy_envelope, j0_bound, theory_report

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "BenchReport",
    "SuiteReport",
    "WORKERS_ENV",
    "load_config",
    "resolve_workers",
    "compute_diagnostics",
    "run_experiment",
    "compare_samplers",
    "run_verification_suite",
]

SCHEMA_VERSION = 1
WORKERS_ENV = "SLMC_WORKERS"
DIAG_HEADER = ["t", "I_hat", "I_se", "I_bound", "J_hat", "J_se", "moment_hat", "moment_se",
               "envelope"]

_TOP_KEYS = {"version", "model", "sampler", "replicas", "record_times", "method", "diagnostics",
             "theory", "verify", "bench", "output", "workers"}
_SAMPLER_KEYS = {"alpha_n", "h", "T", "sigma2", "seed", "init_x_mode", "block_size"}
_DIAG_KEYS = {"It": {"bins", "n_boot", "seed"}, "Jt": {"bandwidth"}, "moments": {"alpha"}}
_THEORY_KEYS = {"eps", "beta", "C_P", "constants"}
_VERIFY_KEYS = {"c", "r", "L", "beta", "grid_points", "tol", "kappa1", "kappa2", "seed",
                "max_observations"}
_BENCH_KEYS = {"matched_budget", "reference_factor"}


class ConfigError(ValueError):
    """Raised with every violated field listed, one per line."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid config:\n  " + "\n  ".join(self.problems))


@dataclass
class ExperimentConfig:
    model_spec: dict
    sampler: SamplerConfig
    replicas: int
    record_times: tuple
    method: str = "slmc"
    diagnostics: dict = field(default_factory=dict)
    theory: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    bench: dict = field(default_factory=dict)
    output: Optional[str] = None
    workers: int = 1
    model: Optional[PotentialModel] = field(default=None, repr=False, compare=False)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        problems = []
        raw = dict(raw)
        for k in sorted(set(raw) - _TOP_KEYS):
            problems.append(f"{k}: unknown key")
        if raw.get("version") != SCHEMA_VERSION:
            problems.append(f"version: must be {SCHEMA_VERSION}, got {raw.get('version')!r}")

        model = None
        mspec = raw.get("model")
        if not isinstance(mspec, dict):
            problems.append("model: missing table")
        else:
            try:
                model = model_from_dict(mspec)
            except (KeyError, ValueError, TypeError) as exc:
                problems.append(f"model: {exc}")

        sraw = raw.get("sampler")
        sampler = None
        if not isinstance(sraw, dict):
            problems.append("sampler: missing table")
        else:
            problems += [f"sampler.{k}: unknown key" for k in sorted(set(sraw) - _SAMPLER_KEYS)]
            sampler = _build_sampler(sraw, model, problems)

        R = raw.get("replicas")
        if not isinstance(R, int) or isinstance(R, bool) or R < 1:
            problems.append(f"replicas: must be a positive integer, got {R!r}")
            R = None

        times = raw.get("record_times")
        try:
            times = tuple(float(t) for t in times)
            if not times:
                raise ValueError
        except (TypeError, ValueError):
            problems.append("record_times: must be a nonempty list of numbers")
            times = None
        if times is not None:
            if any(b <= a for a, b in zip(times, times[1:])):
                problems.append("record_times: must be strictly increasing")
            T = sraw.get("T") if isinstance(sraw, dict) else None
            if isinstance(T, (int, float)) and any(t < 0 or t > T for t in times):
                problems.append(f"record_times: every time must lie in [0, T={T}]")

        method = raw.get("method", "slmc")
        if method not in ("slmc", "lmc"):
            problems.append(f"method: must be 'slmc' or 'lmc', got {method!r}")

        diag = _normalise_diagnostics(raw.get("diagnostics", {}), problems)
        if diag and R is not None and R < 100:
            problems.append("replicas: at least 100 replicas are needed when estimators are selected")
        if model is not None and diag:
            if "It" in diag and model.d > 2:
                problems.append("diagnostics.It: only available for d <= 2")
            if "Jt" in diag and model.d > 3:
                problems.append("diagnostics.Jt: only available for d <= 3")

        theory = _subtable(raw, "theory", _THEORY_KEYS, problems)
        verify = _subtable(raw, "verify", _VERIFY_KEYS, problems)
        bench = _subtable(raw, "bench", _BENCH_KEYS, problems)

        workers = raw.get("workers", 1)
        if not isinstance(workers, int) or workers < 1:
            problems.append(f"workers: must be a positive integer, got {workers!r}")
        output = raw.get("output")
        if output is not None and not isinstance(output, str):
            problems.append("output: must be a path string")

        if problems:
            raise ConfigError(problems)
        return cls(dict(mspec), sampler, R, times, method, diag, theory, verify, bench, output,
                   workers, model)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.from_dict(load_config(path))

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, sampler=replace(self.sampler, seed=int(seed)))

    def to_dict(self) -> dict:
        """Canonical form; output location and worker count are left out on
        purpose since neither changes any result."""
        return {
            "version": SCHEMA_VERSION,
            "model": self.model_spec,
            "sampler": self.sampler.to_dict(),
            "replicas": self.replicas,
            "record_times": list(self.record_times),
            "method": self.method,
            "diagnostics": self.diagnostics,
            "theory": self.theory,
            "verify": self.verify,
            "bench": self.bench,
        }

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())

    def theory_inputs(self) -> Optional[TheoryInputs]:
        m = self.model
        if m.n < 2 or "c" not in m.params:
            return None
        t = self.theory
        return TheoryInputs(m.n, m.d, r=m.params["r"], beta=t.get("beta", 1.0), c=m.params["c"],
                            L=m.params["L"], lam_bar=m.prior.lipschitz, C_P=t.get("C_P"),
                            constants=dict(t.get("constants", {})))


def _subtable(raw, name, keys, problems):
    tab = raw.get(name, {})
    if not isinstance(tab, dict):
        problems.append(f"{name}: must be a table")
        return {}
    problems += [f"{name}.{k}: unknown key" for k in sorted(set(tab) - keys)]
    return dict(tab)


def _normalise_diagnostics(raw, problems):
    if not isinstance(raw, dict):
        problems.append("diagnostics: must be a table")
        return {}
    out = {}
    for k, v in raw.items():
        if k not in _DIAG_KEYS:
            problems.append(f"diagnostics.{k}: unknown estimator")
        elif v is True:
            out[k] = {}
        elif v is False:
            continue
        elif isinstance(v, dict):
            bad = sorted(set(v) - _DIAG_KEYS[k])
            problems += [f"diagnostics.{k}.{b}: unknown key" for b in bad]
            out[k] = dict(v)
        else:
            problems.append(f"diagnostics.{k}: must be true, false or a table")
    return out


def _build_sampler(sraw, model, problems):
    s = {k: v for k, v in sraw.items() if k in _SAMPLER_KEYS}
    missing = [k for k in ("h", "T") if k not in s]
    if missing:
        problems += [f"sampler.{k}: required" for k in missing]
        return None
    if s.get("alpha_n", "default") == "default":
        if model is None:
            return None
        if model.n < 2:
            problems.append("sampler.alpha_n: the default intensity needs n >= 2; give a number")
            return None
        s["alpha_n"] = default_alpha(model.n, model.d, model.params.get("r", 0.0))
    if s.get("sigma2", "default") == "default":
        if model is None:
            return None
        s["sigma2"] = init_sigma(model.n, model.params.get("L", 1.0), model.prior.lipschitz,
                                 0.25, 0.75)
    try:
        return SamplerConfig(**s)
    except (TypeError, ValueError) as exc:
        for part in str(exc).split("; "):
            problems.append(f"sampler: {part}")
        return None


def load_config(path) -> dict:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix not in (".toml", ".json"):
        raise ConfigError([f"config: unsupported file type {path.suffix!r} (use .toml or .json)"])
    text = path.read_text()
    return tomllib.loads(text) if suffix == ".toml" else json.loads(text)


def resolve_workers(flag: Optional[int] = None, default: int = 1):
    """Worker count and where it came from; the environment variable wins."""
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            k = int(env)
        except ValueError:
            raise ConfigError([f"{WORKERS_ENV}: not an integer ({env!r})"]) from None
        if k < 1:
            raise ConfigError([f"{WORKERS_ENV}: must be >= 1"])
        return k, "env"
    if flag is not None:
        if flag < 1:
            raise ConfigError(["workers: must be >= 1"])
        return int(flag), "flag"
    return int(default), "config"


# ---------------------------------------------------------------- diagnostics


def _log_normalizer(model: PotentialModel) -> float:
    if model.d <= 2:
        return normalize_posterior(model).log_Z
    res = find_minimizer(lambda th: eval_mean_potential(model, th),
                         lambda th: grad_mean_potential(model, th), np.zeros(model.d), tol=1e-9)
    H = model.mean_potential().hessian(res.argmin[None, :])[0]
    cov = 2.25 * np.linalg.inv(0.5 * (H + H.T))
    return normalize(lambda th: eval_mean_potential(model, th), model.d,
                     proposal=(res.argmin, cov)).log_Z


def compute_diagnostics(snapshots: dict, model: PotentialModel, config: ExperimentConfig):
    """Rows of the diagnostics CSV, one per recorded time.

    Unselected estimators are written as ``nan``.  ``I_bound`` is
    ``(n - 1) exp(-2 alpha t)``; ``envelope`` is the entropy envelope with the
    configured constants (default 1) and ``J0`` taken from the first row.
    """
    sel = config.diagnostics
    n = model.n
    alpha = config.sampler.alpha_n
    log_Z = _log_normalizer(model) if "Jt" in sel else None
    inputs = config.theory_inputs()
    rows = []
    for t in sorted(snapshots):
        snap = snapshots[t]
        I = Ise = J = Jse = M = Mse = math.nan
        if "It" in sel:
            o = sel["It"]
            est = estimate_It(snap, n, bins=o.get("bins"), n_boot=o.get("n_boot", 200),
                              seed=o.get("seed", 0))
            I, Ise = est.value, est.standard_error
        if "Jt" in sel:
            est = estimate_Jt(snap, model, bandwidth=sel["Jt"].get("bandwidth", "silverman"),
                              log_Z=log_Z)
            J, Jse = est.value, est.standard_error
        if "moments" in sel:
            M, Mse = estimate_moments(snap, model, sel["moments"].get("alpha", 1.0))
        rows.append([float(t), I, Ise, (n - 1) * math.exp(-2 * alpha * t), J, Jse, M, Mse])
    env = [math.nan] * len(rows)
    if inputs is not None and alpha > 0:
        J0 = rows[0][4] if not math.isnan(rows[0][4]) else None
        if J0 is None:
            J0 = j0_bound(inputs)
        env = [entropy_envelope(r[0], J0, inputs, alpha) for r in rows]
    return [r + [e] for r, e in zip(rows, env)]


# ---------------------------------------------------------------- experiments


def run_experiment(config: ExperimentConfig, out_dir=None, workers: Optional[int] = None) -> dict:
    """Simulate the ensemble, run the selected estimators, persist everything.

    Files written into ``out_dir`` (default ``config.output``):
    ``ensemble.csv``, ``diagnostics.csv``, ``theory.json``, ``manifest.json``.
    Everything is staged in a scratch directory next to ``out_dir`` and only
    moved into place once all files exist, so a failed run leaves nothing.
    Returns ``{name: path}``.
    """
    out = Path(out_dir if out_dir is not None else (config.output or "slmc-out"))
    k, source = resolve_workers(workers, config.workers)
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".slmc-stage-", dir=out.parent))
    try:
        model = config.model
        chash = config.hash
        ens = run_ensemble(model, config.sampler, config.replicas, config.record_times,
                           method=config.method, workers=k)
        ensemble_to_csv(ens, stage / "ensemble.csv", chash)
        rows_to_csv(stage / "diagnostics.csv", DIAG_HEADER,
                    compute_diagnostics(ens.snapshots, model, config))
        inputs = config.theory_inputs()
        theory = {"available": inputs is not None}
        if inputs is not None:
            theory.update(theory_report(inputs, eps=config.theory.get("eps", 0.1),
                                        alpha_n=config.sampler.alpha_n).to_dict())
        write_json(stage / "theory.json", theory)
        files = ["ensemble.csv", "diagnostics.csv", "theory.json"]
        manifest = {
            "config_hash": chash,
            "seed": int(config.sampler.seed),
            "code_version": __version__,
            "numpy_version": np.__version__,
            "workers": k,
            "workers_source": source,
            "workers_env": os.environ.get(WORKERS_ENV),
            "gradient_evals": ens.gradient_evals,
            "steps": ens.steps,
            "config": config.to_dict(),
            "files": {f: sha256_file(stage / f) for f in files},
        }
        write_json(stage / "manifest.json", manifest)
        out.mkdir(parents=True, exist_ok=True)
        for f in files + ["manifest.json"]:
            os.replace(stage / f, out / f)
    finally:
        shutil.rmtree(stage, ignore_errors=True)
    return {f.split(".")[0]: out / f
            for f in ("ensemble.csv", "diagnostics.csv", "theory.json", "manifest.json")}


# ---------------------------------------------------------------- benchmark


@dataclass
class BenchReport:
    gradient_evals_slmc: int
    gradient_evals_lmc: int
    wall_times: dict
    ratio: float
    quality: dict
    horizons: dict
    errors: dict = field(default_factory=dict)
    reference: str = ""

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("gradient_evals_slmc", "gradient_evals_lmc",
                                              "wall_times", "ratio", "quality", "horizons",
                                              "errors", "reference")}


def _moment_error(theta, mean, cov):
    m = theta.mean(axis=0)
    C = np.atleast_2d(np.cov(theta, rowvar=False))
    return {"mean_error": float(np.linalg.norm(m - mean)),
            "cov_error": float(np.linalg.norm(C - cov) / max(np.linalg.norm(cov), 1e-300))}


def compare_samplers(config: ExperimentConfig, workers: int = 1,
                     matched_budget: Optional[bool] = None) -> BenchReport:
    """Matched-seed SLMC and full-gradient LMC runs to the configured horizon.

    With ``matched_budget`` the SLMC horizon is stretched to ``n T`` so both
    samplers spend the same number of gradient evaluations.  The quality
    metric is the terminal first/second moment error against the conjugate
    posterior (Gaussian model) or against a long LMC reference run with
    ``reference_factor`` (default 10) times the horizon.  A divergence in one
    sampler is recorded in ``errors`` and does not stop the other.
    """
    model = config.model
    n = model.n
    if matched_budget is None:
        matched_budget = bool(config.bench.get("matched_budget", False))
    T = config.sampler.T
    horizons = {"slmc": n * T if matched_budget else T, "lmc": T}
    if model.kind == "gaussian":
        ref_mean, ref_cov = conjugate_posterior(model)
        reference = "conjugate posterior"
    else:
        fac = float(config.bench.get("reference_factor", 10))
        ref_cfg = replace(config.sampler, T=fac * T, seed=config.sampler.seed + 1)
        ref = run_ensemble(model, ref_cfg, config.replicas, [ref_cfg.T], method="lmc",
                           workers=workers)
        th = ref.snapshots[ref_cfg.T].theta
        ref_mean, ref_cov = th.mean(axis=0), np.atleast_2d(np.cov(th, rowvar=False))
        reference = f"lmc reference ensemble, {fac:g}x horizon"
    evals, walls, quality, errors = {}, {}, {}, {}
    for method in ("slmc", "lmc"):
        cfg = replace(config.sampler, T=horizons[method])
        t0 = time.perf_counter()
        try:
            ens = run_ensemble(model, cfg, config.replicas, [cfg.T], method=method,
                               workers=workers)
        except DivergenceError as exc:
            errors[method] = str(exc)
            evals[method] = 0
            quality[method] = {"mean_error": math.nan, "cov_error": math.nan}
        else:
            evals[method] = ens.gradient_evals
            quality[method] = _moment_error(ens.snapshots[cfg.T].theta, ref_mean, ref_cov)
        walls[method] = time.perf_counter() - t0
    ratio = evals["lmc"] / evals["slmc"] if evals["slmc"] else math.nan
    return BenchReport(evals["slmc"], evals["lmc"], walls, ratio, quality, horizons, errors,
                       reference)


# ---------------------------------------------------------------- verification


@dataclass
class SuiteReport:
    passed: bool
    checks: dict
    failed: list

    def to_dict(self) -> dict:
        return {"passed": self.passed, "failed": self.failed,
                "checks": {k: v.to_dict() for k, v in self.checks.items()}}


def _declared(config: ExperimentConfig) -> KLParams:
    model, v = config.model, config.verify
    try:
        base = declared_params(model)
    except ValueError:
        if not {"c", "r", "L"} <= set(v):
            raise ValueError("verification needs declared c, r and L") from None
        base = KLParams(v["c"], v["r"], v["L"], model.prior.lipschitz)
    return KLParams(v.get("c", base.c), v.get("r", base.r), v.get("L", base.L),
                    model.prior.lipschitz, v.get("beta", 1.0))


def run_verification_suite(config: ExperimentConfig) -> SuiteReport:
    """Grid checks of the curvature hypothesis and its consequences.

    Per observation: the curvature floor and the five growth inequalities of
    ``-log p_theta(X_i)`` with the declared constants.  Posterior: the same
    for ``U_nu`` with the composed constants.  Finally the minimiser
    localisation.  Growth checks use relative slack at tolerance
    ``verify.tol`` (default 1e-8).  An exception inside a check is re-raised
    naming that check.
    """
    model, v = config.model, config.verify
    params = _declared(config)
    tol = float(v.get("tol", ANALYTIC_TOL))
    npts = int(v.get("grid_points", 1000))
    seed = int(v.get("seed", 0))
    checks = {}

    def run(name, fn):
        try:
            rep = fn()
        except Exception as exc:
            raise RuntimeError(f"verification check {name!r} failed to run: {exc}") from exc
        rep.name = name
        checks[name] = rep
        return rep

    n_obs = min(model.n, int(v.get("max_observations", model.n)))
    for i in range(n_obs):
        x = model.X[i]
        V = _likelihood_potential(model, x)
        grid = x[:model.d] + make_grid(model.d, npts, seed=seed)
        run(f"hkl[obs {i}]", lambda: check_hkl(V, params, grid, tol, relative=True))
        res = find_minimizer(V.value, V.grad, x[:model.d].copy(), tol=1e-12)
        run(f"growth[obs {i}]",
            lambda: check_growth_bounds(V, params, res, grid, tol, relative=True))

    post = compose_posterior_kl(params, model.n)
    U = model.mean_potential()
    resU = find_minimizer(U.value, U.grad, np.zeros(model.d), tol=1e-10)
    gridU = resU.argmin + make_grid(model.d, npts, seed=seed)
    run("hkl[posterior]", lambda: check_hkl(U, post, gridU, tol, relative=True))
    run("growth[posterior]",
        lambda: check_growth_bounds(U, post, resU, gridU, tol, relative=True))
    run("hmin", lambda: check_hmin(model, params.beta, kappa1=v.get("kappa1", 10.0),
                                   kappa2=v.get("kappa2", 10.0)))
    failed = [k for k, r in checks.items() if not r.passed]
    return SuiteReport(not failed, checks, failed)


def _likelihood_potential(model: PotentialModel, x) -> Potential:
    """``theta -> -log p_theta(x)`` for one observation, shape-preserving in theta."""
    x = np.asarray(x, dtype=float)

    def lift(fn):
        def call(th):
            th = np.asarray(th, dtype=float)
            out = fn(np.atleast_2d(th), x)
            return out[0] if th.ndim == 1 else out
        return call

    hess = None if model.hess_neg_log_lik is None else lift(model.hess_neg_log_lik)
    return Potential(lift(model.neg_log_lik), lift(model.grad_neg_log_lik), model.d, hess)
