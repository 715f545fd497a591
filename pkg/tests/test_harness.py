import csv
import json
import math

import numpy as np
import pytest

from slmc import harness
from slmc.cli import main
from slmc.harness import (
    ConfigError,
    ExperimentConfig,
    compare_samplers,
    resolve_workers,
    run_experiment,
    run_verification_suite,
)
from slmc.io import read_ensemble_csv
from slmc.sampler import DivergenceError


def base_config(**over):
    raw = {
        "version": 1,
        "model": {"kind": "gaussian", "n": 5, "d": 1, "seed": 3},
        "sampler": {"alpha_n": 2.0, "h": 0.01, "T": 1.0, "sigma2": "default", "seed": 11},
        "replicas": 100,
        "record_times": [0.0, 1.0],
        "diagnostics": {"It": {"bins": 2, "n_boot": 20}, "Jt": True, "moments": True},
    }
    for k, v in over.items():
        # sampler overrides merge; every other key replaces
        raw[k] = {**raw[k], **v} if k == "sampler" else v
    if raw["record_times"][-1] > raw["sampler"]["T"]:
        raw["record_times"] = [0.0, raw["sampler"]["T"]]
    return raw


def cfg(**over):
    return ExperimentConfig.from_dict(base_config(**over))


# ------------------------------------------------------------ config validation


def test_config_defaults_resolve():
    c = cfg()
    assert c.sampler.sigma2 == pytest.approx(0.5 / (5 * 1.0 + 1.0))
    c2 = cfg(sampler={"alpha_n": "default", "h": 0.001})
    assert c2.sampler.alpha_n == pytest.approx(1 / (5 * math.log(5) ** 2))


def test_record_time_beyond_horizon_is_named():
    raw = base_config()
    raw["record_times"] = [0.0, 2.0]
    with pytest.raises(ConfigError, match="record_times"):
        ExperimentConfig.from_dict(raw)


def test_every_problem_is_listed():
    with pytest.raises(ConfigError) as info:
        cfg(replicas=10, colour="blue", sampler={"h": -1.0}, record_times=[0.5, 0.25])
    msg = str(info.value)
    for part in ("colour", "replicas", "sampler", "record_times"):
        assert part in msg
    assert len(info.value.problems) >= 4


def test_unknown_nested_keys_rejected():
    with pytest.raises(ConfigError, match="sampler"):
        cfg(sampler={"stepsize": 0.1})
    with pytest.raises(ConfigError, match="diagnostics.Kt"):
        cfg(diagnostics={"Kt": True})


def test_small_ensemble_allowed_without_estimators():
    c = cfg(replicas=10, diagnostics={})
    assert c.replicas == 10


def test_estimator_dimension_limits():
    with pytest.raises(ConfigError, match="It"):
        cfg(model={"kind": "gaussian", "n": 5, "d": 3, "seed": 0})


def test_version_required():
    raw = base_config()
    raw["version"] = 2
    with pytest.raises(ConfigError, match="version"):
        ExperimentConfig.from_dict(raw)


def test_hash_ignores_output_and_workers():
    a = cfg(output="x", workers=1)
    b = cfg(output="y", workers=4)
    assert a.hash == b.hash
    assert cfg(sampler={"seed": 12}).hash != a.hash


def test_toml_and_json_load_identically(tmp_path):
    raw = base_config()
    (tmp_path / "c.json").write_text(json.dumps(raw))
    (tmp_path / "c.toml").write_text("""
version = 1
replicas = 100
record_times = [0.0, 1.0]

[model]
kind = "gaussian"
n = 5
d = 1
seed = 3

[sampler]
alpha_n = 2.0
h = 0.01
T = 1.0
sigma2 = "default"
seed = 11

[diagnostics]
It = { bins = 2, n_boot = 20 }
Jt = true
moments = true
""")
    a = ExperimentConfig.from_file(tmp_path / "c.json")
    b = ExperimentConfig.from_file(tmp_path / "c.toml")
    assert a.hash == b.hash
    with pytest.raises(ConfigError, match="unsupported"):
        harness.load_config(tmp_path / "c.yaml")


def test_worker_resolution(monkeypatch):
    monkeypatch.delenv(harness.WORKERS_ENV, raising=False)
    assert resolve_workers(None, 3) == (3, "config")
    assert resolve_workers(2, 3) == (2, "flag")
    monkeypatch.setenv(harness.WORKERS_ENV, "5")
    assert resolve_workers(2, 3) == (5, "env")
    monkeypatch.setenv(harness.WORKERS_ENV, "many")
    with pytest.raises(ConfigError):
        resolve_workers()


# ------------------------------------------------------------ run_experiment


def test_minimal_run_writes_four_files(tmp_path):
    c = cfg()
    paths = run_experiment(c, tmp_path / "out")
    assert set(paths) == {"ensemble", "diagnostics", "theory", "manifest"}
    assert all(p.exists() for p in paths.values())
    man = json.loads(paths["manifest"].read_text())
    assert man["config_hash"] == c.hash and man["seed"] == 11
    assert man["gradient_evals"] == man["steps"]
    snaps, chash = read_ensemble_csv(paths["ensemble"])
    assert chash == c.hash and sorted(snaps) == [0.0, 1.0]
    assert snaps[1.0].R == 100
    with open(paths["diagnostics"]) as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["t"]) for r in rows] == [0.0, 1.0]
    assert float(rows[0]["I_bound"]) == 4.0
    assert json.loads(paths["theory"].read_text())["available"] is True


def test_rerun_is_byte_identical(tmp_path):
    c = cfg()
    a = run_experiment(c, tmp_path / "a")
    b = run_experiment(c, tmp_path / "b", workers=2)
    for key in ("ensemble", "diagnostics", "theory"):
        assert a[key].read_bytes() == b[key].read_bytes(), key
    ma, mb = (json.loads(p.read_text()) for p in (a["manifest"], b["manifest"]))
    assert ma["files"] == mb["files"] and ma["config_hash"] == mb["config_hash"]


def test_unselected_estimators_are_nan(tmp_path):
    paths = run_experiment(cfg(diagnostics={"moments": True}), tmp_path / "o")
    with open(paths["diagnostics"]) as fh:
        row = next(csv.DictReader(fh))
    assert row["I_hat"] == "nan" and row["J_hat"] == "nan"
    assert float(row["moment_hat"]) > 0


def test_failed_run_leaves_nothing(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("estimator exploded")

    monkeypatch.setattr(harness, "compute_diagnostics", boom)
    with pytest.raises(RuntimeError, match="exploded"):
        run_experiment(cfg(), tmp_path / "out")
    assert not (tmp_path / "out").exists()
    assert list(tmp_path.iterdir()) == []


def test_env_workers_echoed_in_manifest(tmp_path, monkeypatch):
    monkeypatch.setenv(harness.WORKERS_ENV, "3")
    paths = run_experiment(cfg(workers=1), tmp_path / "o", workers=2)
    man = json.loads(paths["manifest"].read_text())
    assert (man["workers"], man["workers_source"], man["workers_env"]) == (3, "env", "3")


# ------------------------------------------------------------ compare_samplers


def test_bench_ratio_is_n():
    c = cfg(model={"kind": "gaussian", "n": 50, "d": 1, "seed": 0}, replicas=20,
            sampler={"T": 0.2}, diagnostics={})
    rep = compare_samplers(c)
    assert rep.ratio == 50.0
    assert rep.gradient_evals_lmc == 50 * rep.gradient_evals_slmc
    assert rep.reference == "conjugate posterior"
    assert set(rep.quality) == {"slmc", "lmc"} and not rep.errors


def test_bench_single_observation():
    c = cfg(model={"kind": "gaussian", "observations": [[0.4]]}, replicas=20, diagnostics={})
    rep = compare_samplers(c)
    assert rep.ratio == 1.0
    assert rep.quality["slmc"] == pytest.approx(rep.quality["lmc"], rel=1e-9)


def test_bench_matched_budget_recorded():
    c = cfg(replicas=400, sampler={"T": 2.0, "h": 0.02, "alpha_n": 5.0}, diagnostics={})
    rep = compare_samplers(c, matched_budget=True)
    assert rep.horizons == {"slmc": 10.0, "lmc": 2.0}
    # same gradient budget up to step rounding at jump and record times
    assert rep.gradient_evals_slmc == pytest.approx(rep.gradient_evals_lmc, rel=0.1)
    for q in rep.quality.values():
        assert math.isfinite(q["mean_error"]) and math.isfinite(q["cov_error"])


def test_bench_weakly_convex_uses_lmc_reference():
    c = cfg(model={"kind": "power", "n": 4, "d": 1, "seed": 0, "p": 0.75}, replicas=50,
            sampler={"T": 0.5}, diagnostics={}, bench={"reference_factor": 4})
    rep = compare_samplers(c)
    assert rep.reference.startswith("lmc reference") and rep.ratio == 4.0


def test_bench_divergence_isolated(monkeypatch):
    real = harness.run_ensemble

    def flaky(model, config, R, times, method="slmc", workers=1):
        if method == "slmc":
            raise DivergenceError(0.5, np.array([1e7]), config.h)
        return real(model, config, R, times, method=method, workers=workers)

    monkeypatch.setattr(harness, "run_ensemble", flaky)
    rep = compare_samplers(cfg(replicas=20, diagnostics={}))
    assert "slmc" in rep.errors and "lmc" not in rep.errors
    assert rep.gradient_evals_lmc > 0 and math.isnan(rep.ratio)


# ------------------------------------------------------------ verification suite


def test_suite_power_three_quarters_passes():
    c = cfg(model={"kind": "power", "n": 4, "d": 2, "seed": 1, "p": 0.75},
            verify={"grid_points": 300})
    rep = run_verification_suite(c)
    assert rep.passed, rep.failed
    assert "hkl[posterior]" in rep.checks and "hmin" in rep.checks


def test_suite_misdeclared_c_fails():
    c = cfg(model={"kind": "power", "n": 4, "d": 2, "seed": 1, "p": 0.75},
            verify={"c": 0.75 * 1.25, "grid_points": 300})
    rep = run_verification_suite(c)
    assert not rep.passed
    assert "hkl[obs 0]" in rep.failed


def test_suite_gaussian_equality_margins():
    rep = run_verification_suite(cfg(verify={"grid_points": 300}))
    assert rep.passed
    for name, r in rep.checks.items():
        if name.startswith("hkl[obs"):
            assert abs(r.worst_margin) <= 1e-12


def test_suite_names_crashing_check(monkeypatch):
    def broken(*a, **k):
        raise FloatingPointError("nan Hessian")

    monkeypatch.setattr(harness, "check_hmin", broken)
    with pytest.raises(RuntimeError, match="'hmin'"):
        run_verification_suite(cfg(verify={"grid_points": 50}))


# ------------------------------------------------------------ CLI


def write_cfg(tmp_path, **over):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(base_config(**over)))
    return str(p)


def test_cli_sample_and_diagnose(tmp_path, capsys):
    c = write_cfg(tmp_path)
    assert main(["sample", "--config", c, "--out", str(tmp_path / "run")]) == 0
    first = (tmp_path / "run" / "diagnostics.csv").read_bytes()
    assert main(["diagnose", "--config", c, "--ensemble", str(tmp_path / "run" / "ensemble.csv"),
                 "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "diagnostics.csv").read_bytes() == first


def test_cli_seed_override_changes_hash(tmp_path):
    c = write_cfg(tmp_path)
    main(["sample", "--config", c, "--seed", "99", "--out", str(tmp_path / "r")])
    man = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert man["seed"] == 99


def test_cli_verify_exit_codes(tmp_path):
    ok = write_cfg(tmp_path, verify={"grid_points": 100})
    assert main(["verify", "--config", ok]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(base_config(verify={"c": 5.0, "grid_points": 100})))
    assert main(["verify", "--config", str(bad), "--out", str(tmp_path / "v")]) == 1
    assert json.loads((tmp_path / "v" / "verify.json").read_text())["passed"] is False


def test_cli_theory_table(capsys, tmp_path):
    assert main(["theory", "--n", "10", "--d", "2", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "c_nd" in out and "t_eps" in out
    data = json.loads((tmp_path / "theory.json").read_text())
    assert data["t_eps"] == pytest.approx(1.1930e5, rel=1e-4)


def test_cli_bench(tmp_path, capsys):
    c = write_cfg(tmp_path, replicas=20, diagnostics={})
    assert main(["bench", "--config", c, "--out", str(tmp_path / "b")]) == 0
    data = json.loads((tmp_path / "b" / "bench.json").read_text())
    assert data["ratio"] == 5.0


def test_cli_config_error_exit_code(tmp_path, capsys):
    p = tmp_path / "c.json"
    raw = base_config()
    raw["record_times"] = [0.0, 3.0]
    p.write_text(json.dumps(raw))
    c = str(p)
    assert main(["sample", "--config", c]) == 2
    assert "record_times" in capsys.readouterr().err
