"""Experiment configuration: defaults per sweep, JSON loading and validation."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import InvalidArgument

SCHEMA_VERSION = 1

EXPERIMENTS = (
    "phase", "vary-latents", "vary-samples", "vary-sparsity", "frozen", "warmstart-decoder",
    "warmstart-encoder", "lambda-sweep", "support", "theory-grid",
)
METHODS = (
    "fista_oracle", "dl_fista", "sae_relu", "sae_jumprelu", "sae_topk", "sae_mp",
    "frozen_fista", "refined", "linear_probe",
)
SAE_METHODS = ("sae_relu", "sae_jumprelu", "sae_topk", "sae_mp")
ALL_BASE = ("fista_oracle", "dl_fista", "sae_relu", "sae_jumprelu", "sae_topk", "sae_mp", "linear_probe")

DEFAULT_OPTIONS = {
    "p_test": 2000,
    "oracle_lam": 0.01,
    "oracle_iters": 100,
    "dl_lam": 0.03,
    "dl_rounds": 200,
    "dl_iters": 100,
    "frozen_lam": 0.1,
    "frozen_iters": 100,
    "sae_epochs": 200,
    "sae_batch": 256,
    "sae_lr": 1e-3,
    "sae_gamma": 1e-4,
    "probe_l2": 1e-4,
    "ridge_alpha": 1e-3,
    "mc_samples": 1_000_000,
}


class ConfigError(InvalidArgument):
    """Malformed or inconsistent experiment configuration."""


@dataclass
class ExperimentConfig:
    experiment: str
    grid: dict
    methods: list
    seeds: list
    output_dir: str = "results"
    options: dict = field(default_factory=dict)
    master_seed: int = 0

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if not self.grid or any(not isinstance(v, list) or not v for v in self.grid.values()):
            raise ConfigError("grid must map parameter names to non-empty lists")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        if not self.methods and self.experiment != "theory-grid":
            raise ConfigError("methods must be non-empty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}")
        unknown = set(self.options) - set(DEFAULT_OPTIONS)
        if unknown:
            raise ConfigError(f"unknown options {sorted(unknown)}")
        if self.master_seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        self.options = {**DEFAULT_OPTIONS, **self.options}

    def opt(self, name):
        return self.options[name]

    def to_json(self) -> str:
        body = {
            "schema": SCHEMA_VERSION,
            "experiment": self.experiment,
            "grid": self.grid,
            "methods": self.methods,
            "seeds": self.seeds,
            "options": {k: v for k, v in self.options.items() if DEFAULT_OPTIONS[k] != v},
            "master_seed": self.master_seed,
        }
        return json.dumps(body, indent=2, sort_keys=True)


# desk-scale grids; ``--large`` adds the d_z = 10^4 / p = 10^5 cells
_DEFAULT_GRIDS = {
    "phase": ({"d_z": [50, 100, 200], "k": [3, 5, 10],
               "delta": [0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0], "p": [2000]}, {}),
    "vary-latents": ({"d_z": [50, 100, 500, 1000], "k": [10], "p": [5000]}, {"d_z": [10000]}),
    "vary-samples": ({"d_z": [100], "k": [10], "p": [100, 300, 1000, 3000, 10000]}, {"p": [100000]}),
    "vary-sparsity": ({"d_z": [1000], "k": [3, 5, 10, 20], "p": [5000]}, {}),
    "frozen": ({"d_z": [100, 500], "k": [10], "p": [5000]}, {"d_z": [5000]}),
    "warmstart-decoder": ({"d_z": [100], "k": [10], "p": [5000], "round": [0, 1, 2, 5, 10, 20, 50]}, {"d_z": [5000]}),
    "warmstart-encoder": ({"d_z": [100], "k": [10], "p": [5000], "iters": [1, 2, 5, 10, 25, 50, 100]}, {}),
    "lambda-sweep": ({"d_z": [100], "k": [10], "p": [5000],
                      "lam": [0.001, 0.003, 0.01, 0.03, 0.1, 0.2, 0.5, 1.0, 2.0]}, {"d_z": [5000]}),
    "support": ({"d_z": [100, 1000], "k": [10], "p": [5000]}, {"d_z": [5000]}),
    "theory-grid": ({"phi": [round(0.5 + 0.05 * i, 2) for i in range(10)],
                     "theta": [round(0.5 + 0.05 * i, 2) for i in range(10)]}, {}),
}

_DEFAULT_METHODS = {
    "phase": ["fista_oracle", "dl_fista", "sae_relu", "sae_jumprelu", "sae_topk", "sae_mp"],
    "vary-latents": list(ALL_BASE),
    "vary-samples": list(ALL_BASE),
    "vary-sparsity": list(ALL_BASE),
    "frozen": ["sae_relu", "sae_jumprelu", "sae_topk", "sae_mp", "frozen_fista", "refined",
               "dl_fista", "fista_oracle"],
    "warmstart-decoder": ["sae_relu", "sae_jumprelu", "sae_topk", "dl_fista"],
    "warmstart-encoder": ["sae_relu", "sae_jumprelu", "sae_topk", "sae_mp", "refined", "frozen_fista"],
    "lambda-sweep": ["sae_relu", "sae_jumprelu", "sae_topk", "sae_mp", "frozen_fista", "fista_oracle"],
    "support": ["sae_relu", "sae_jumprelu", "sae_topk", "sae_mp", "frozen_fista", "fista_oracle"],
    "theory-grid": [],
}


def default_config(experiment: str, large: bool = False) -> ExperimentConfig:
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    base, extra = _DEFAULT_GRIDS[experiment]
    grid = copy.deepcopy(base)
    if large:
        for key, vals in extra.items():
            grid[key] = grid[key] + vals
    return ExperimentConfig(experiment=experiment, grid=grid, methods=list(_DEFAULT_METHODS[experiment]),
                            seeds=[0, 1, 2, 3, 4])


def load_config(path, experiment: str | None = None, large: bool = False) -> ExperimentConfig:
    """Read a JSON config; missing keys fall back to the experiment defaults."""
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if raw.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config schema {raw.get('schema')!r}, expected {SCHEMA_VERSION}")
    name = raw.get("experiment", experiment)
    if experiment is not None and name != experiment:
        raise ConfigError(f"config is for {name!r}, subcommand is {experiment!r}")
    base = default_config(name, large)
    unknown = set(raw) - {"schema", "experiment", "grid", "methods", "seeds", "options", "output_dir", "master_seed"}
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    grid = dict(base.grid)
    grid.update(raw.get("grid", {}))
    seeds = raw.get("seeds", base.seeds)
    if not isinstance(seeds, list) or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("seeds must be a list of non-negative integers")
    return ExperimentConfig(
        experiment=name,
        grid=grid,
        methods=list(raw.get("methods", base.methods)),
        seeds=seeds,
        output_dir=raw.get("output_dir", base.output_dir),
        options=dict(raw.get("options", {})),
        master_seed=int(raw.get("master_seed", 0)),
    )
