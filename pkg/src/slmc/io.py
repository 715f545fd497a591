"""CSV and JSON persistence for ensembles and diagnostics."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

from .sampler import Ensemble, EnsembleSnapshot

__all__ = [
    "config_hash",
    "fmt",
    "ensemble_to_csv",
    "read_ensemble_csv",
    "rows_to_csv",
    "write_json",
    "sha256_file",
]


def fmt(x) -> str:
    """Shortest round-tripping text for a float (``repr``)."""
    x = float(x)
    if x != x:
        return "nan"
    return repr(x)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(blob.encode()).hexdigest()


def ensemble_to_csv(ens: Ensemble, path, chash: str) -> None:
    """One row per (replica, time); the first line carries the config hash."""
    times = ens.times
    d = ens.snapshots[times[0]].d
    buf = io.StringIO()
    buf.write(f"# config_hash={chash}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replica", "time"] + [f"theta_{j}" for j in range(d)] + ["active_obs"])
    for t in times:
        s = ens.snapshots[t]
        ts = fmt(t)
        for r in range(s.R):
            w.writerow([r, ts] + [fmt(v) for v in s.theta[r]] + [int(s.active_obs[r])])
    Path(path).write_text(buf.getvalue())


def read_ensemble_csv(path):
    """Inverse of :func:`ensemble_to_csv`; returns ``(snapshots, config_hash)``."""
    lines = Path(path).read_text().splitlines()
    chash = None
    if lines and lines[0].startswith("# config_hash="):
        chash = lines[0].split("=", 1)[1].strip()
        lines = lines[1:]
    reader = csv.reader(lines)
    header = next(reader)
    d = sum(1 for h in header if h.startswith("theta_"))
    rows = np.array([[float(v) for v in row] for row in reader])
    snaps = {}
    for t in np.unique(rows[:, 1]):
        sel = rows[rows[:, 1] == t]
        sel = sel[np.argsort(sel[:, 0], kind="stable")]
        snaps[float(t)] = EnsembleSnapshot(float(t), sel[:, 2:2 + d], sel[:, 2 + d].astype(np.int64))
    return snaps, chash


def rows_to_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    Path(path).write_text(buf.getvalue())


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
