"""Relative entropy to the posterior, from exact draws and from a subsampled ensemble.

Exact posterior draws give an estimate near zero.  The subsampled ensemble with a
slow switching rate stays far from the posterior: its stationary law is a mixture
of single-observation posteriors.
"""
import numpy as np

from slmc.diagnostics import estimate_Jt
from slmc.potential import conjugate_posterior, gaussian_model, normalize_posterior
from slmc.sampler import EnsembleSnapshot, SamplerConfig, run_ensemble

model = gaussian_model(np.random.default_rng(0).normal(size=(5, 1)) * 2, lik_scale=1.0)
mu, cov = conjugate_posterior(model)
Z = normalize_posterior(model)
R = 2000

exact = mu + np.sqrt(cov[0, 0]) * np.random.default_rng(1).standard_normal((R, 1))
est = estimate_Jt(EnsembleSnapshot(0.0, exact, np.zeros(R, dtype=int)), model, Z)
print(f"exact draws:       J = {est.value:+.4f} (se {est.standard_error:.4f})")

for alpha in (0.2, 5.0):
    cfg = SamplerConfig(alpha, 0.005, 6.0, 0.1, seed=2)
    ens = run_ensemble(model, cfg, R, [6.0], workers=4)
    est = estimate_Jt(ens.snapshots[6.0], model, Z)
    print(f"alpha_n = {alpha:5.1f}:   J = {est.value:+.4f} (se {est.standard_error:.4f})")
