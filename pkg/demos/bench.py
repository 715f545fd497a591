"""Gradient cost and accuracy of subsampled against full-gradient dynamics."""
import json
from pathlib import Path

from slmc.harness import ExperimentConfig, compare_samplers, load_config

raw = load_config(Path(__file__).parent / "gaussian.toml")
raw.pop("diagnostics")
rep = compare_samplers(ExperimentConfig.from_dict(raw), workers=4)
print(json.dumps({k: v for k, v in rep.to_dict().items() if k != "wall_times"}, indent=2))
