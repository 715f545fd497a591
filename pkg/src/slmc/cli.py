"""Command line entry point: ``slmc {sample,verify,theory,diagnose,bench}``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness import (
    DIAG_HEADER,
    ConfigError,
    ExperimentConfig,
    compare_samplers,
    compute_diagnostics,
    resolve_workers,
    run_experiment,
    run_verification_suite,
)
from .io import read_ensemble_csv, rows_to_csv, write_json
from .theory import TheoryInputs, entropy_envelope, j0_bound, moment_bound, theory_report


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out(args, cfg, default):
    return Path(args.out or cfg.output or default)


def cmd_sample(args) -> int:
    cfg = _load(args)
    paths = run_experiment(cfg, _out(args, cfg, "slmc-out"), workers=args.workers)
    for name, p in paths.items():
        print(f"{name:12s} {p}")
    return 0


def cmd_verify(args) -> int:
    cfg = _load(args)
    rep = run_verification_suite(cfg)
    for name, r in rep.checks.items():
        print(f"{'PASS' if r.passed else 'FAIL'}  {name:22s} worst margin {r.worst_margin:.3e}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "verify.json", rep.to_dict())
    print("suite passed" if rep.passed else f"suite FAILED: {', '.join(rep.failed)}")
    return 0 if rep.passed else 1


def cmd_theory(args) -> int:
    if args.config:
        inputs = _load(args).theory_inputs()
        if inputs is None:
            print("model declares no curvature constants or has n < 2", file=sys.stderr)
            return 2
    else:
        inputs = TheoryInputs(args.n, args.d, r=args.r, beta=args.beta)
    rep = theory_report(inputs, eps=args.eps)
    rows = [
        ("alpha_n", rep.alpha_n),
        ("C_P floor", rep.C_P_floor),
        ("c_nd", rep.c_nd),
        ("log O_nd", rep.O_nd_log),
        ("J0 bound", rep.J0_bound),
        (f"t_eps (eps={args.eps:g})", rep.t_eps),
        ("moment bound (alpha=1)", moment_bound(inputs, 1.0)),
        ("envelope at t=0", entropy_envelope(0.0, j0_bound(inputs), inputs, rep.alpha_n)),
    ]
    print(f"n={inputs.n} d={inputs.d} r={inputs.r:g} beta={inputs.beta:g}")
    for name, v in rows:
        print(f"  {name:24s} {v:.6e}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "theory.json", rep.to_dict())
    return 0


def cmd_diagnose(args) -> int:
    cfg = _load(args)
    ens_path = Path(args.ensemble)
    snaps, chash = read_ensemble_csv(ens_path)
    if chash is not None and chash != cfg.hash:
        print(f"warning: ensemble was produced by config {chash[:12]}, not {cfg.hash[:12]}",
              file=sys.stderr)
    out = _out(args, cfg, ens_path.parent)
    out.mkdir(parents=True, exist_ok=True)
    rows_to_csv(out / "diagnostics.csv", DIAG_HEADER, compute_diagnostics(snaps, cfg.model, cfg))
    print(out / "diagnostics.csv")
    return 0


def cmd_bench(args) -> int:
    cfg = _load(args)
    k, _ = resolve_workers(args.workers, cfg.workers)
    rep = compare_samplers(cfg, workers=k, matched_budget=args.matched_budget or None)
    d = rep.to_dict()
    print(json.dumps(d, indent=2, sort_keys=True))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "bench.json", d)
    return 1 if rep.errors else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slmc", description="Subsampled Langevin Monte Carlo tools")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="TOML or JSON experiment file")
        sp.add_argument("--seed", type=int, help="override the sampler seed")
        sp.add_argument("--workers", type=int, help="worker threads (SLMC_WORKERS overrides)")
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("sample", help="simulate an ensemble and write all outputs")
    common(sp)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("verify", help="grid checks of the curvature hypotheses")
    common(sp)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("theory", help="print the bound table")
    common(sp, config_required=False)
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--d", type=int, default=1)
    sp.add_argument("--r", type=float, default=0.0)
    sp.add_argument("--beta", type=float, default=1.0)
    sp.add_argument("--eps", type=float, default=0.1)
    sp.set_defaults(func=cmd_theory)

    sp = sub.add_parser("diagnose", help="run estimators on a stored ensemble CSV")
    common(sp)
    sp.add_argument("--ensemble", required=True, help="ensemble.csv written by 'sample'")
    sp.set_defaults(func=cmd_diagnose)

    sp = sub.add_parser("bench", help="SLMC against full-gradient LMC")
    common(sp)
    sp.add_argument("--matched-budget", action="store_true",
                    help="give SLMC n times the horizon so gradient budgets match")
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
