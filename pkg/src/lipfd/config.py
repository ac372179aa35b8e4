"""Run configuration: versioned schema, validation, CLI overrides.

Configs are JSON documents validated against the schema below before
anything executes; unknown keys are rejected by name.  Command-line
flags override file keys.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending key."""


# key -> (type, validator or None); nested blocks are dicts of the same shape
_SCHEMA = {
    "version": (int, lambda v: v == CONFIG_VERSION or f"must be {CONFIG_VERSION}"),
    "plant": {
        "preset": (str, lambda v: v in ("symbolic", "paper-literal")
                   or "must be 'symbolic' or 'paper-literal'"),
        "model_file": (str, None),
    },
    "synthesis": {
        "beta": ((int, float), lambda v: v > 0 or "must be > 0"),
        "lambda": ((int, float), lambda v: v > 0 or "must be > 0"),
        "delta": ((int, float, type(None)), lambda v: v is None or v > 0 or "must be > 0"),
        "objective_weight": ((int, float), lambda v: v >= 0 or "must be >= 0"),
        "form": (str, lambda v: v in ("auto", "printed", "repaired", "classical")
                 or "must be one of 'auto', 'printed', 'repaired', 'classical'"),
    },
    "grid": {
        "dt": ((int, float), lambda v: v > 0 or "must be > 0"),
        "duration": ((int, float), lambda v: v > 0 or "must be > 0"),
    },
    "window": {
        "t0": (int, lambda v: v >= 0 or "must be >= 0"),
        "L_w": (int, lambda v: v >= 1 or "must be >= 1"),
    },
    "noise": {
        "fraction": ((int, float), lambda v: v >= 0 or "must be >= 0"),
        "seed": (int, None),
    },
    "scenario": {
        "id": (int, lambda v: 1 <= v <= 5 or "must be 1..5"),
    },
    "seed": (int, None),
    "safety_factor": ((int, float), lambda v: v >= 1 or "must be >= 1"),
    "output_dir": (str, None),
}


@dataclass
class RunConfig:
    version: int = CONFIG_VERSION
    plant_preset: str = "symbolic"
    plant_model_file: Optional[str] = None
    beta: float = 1.0
    lam: float = 0.2
    delta: Optional[float] = None
    objective_weight: float = 0.2
    form: str = "auto"
    dt: float = 1e-4
    duration: float = 10.0
    window_t0: int = 80
    window_len: int = 1000
    noise_fraction: float = 0.02
    noise_seed: int = 0
    scenario_id: Optional[int] = None
    seed: int = 0
    safety_factor: float = 1.0
    output_dir: str = "out"

    def as_dict(self) -> dict:
        """Nested schema-shaped dict (for manifests and round-trips)."""
        data = {
            "version": self.version,
            "plant": {"preset": self.plant_preset},
            "synthesis": {"beta": self.beta, "lambda": self.lam, "delta": self.delta,
                          "objective_weight": self.objective_weight, "form": self.form},
            "grid": {"dt": self.dt, "duration": self.duration},
            "window": {"t0": self.window_t0, "L_w": self.window_len},
            "noise": {"fraction": self.noise_fraction, "seed": self.noise_seed},
            "seed": self.seed,
            "safety_factor": self.safety_factor,
            "output_dir": self.output_dir,
        }
        if self.plant_model_file is not None:
            data["plant"]["model_file"] = self.plant_model_file
        if self.scenario_id is not None:
            data["scenario"] = {"id": self.scenario_id}
        return data


def _check_block(data: dict, schema: dict, prefix: str = "") -> None:
    for key, value in data.items():
        path = f"{prefix}{key}"
        if key not in schema:
            raise ConfigError(f"unknown config key: {path!r}")
        rule = schema[key]
        if isinstance(rule, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be an object")
            _check_block(value, rule, prefix=path + ".")
            continue
        expected, validator = rule
        if isinstance(value, bool) or not isinstance(value, expected):
            raise ConfigError(f"config key {path!r} has wrong type "
                              f"(got {type(value).__name__})")
        if validator is not None:
            verdict = validator(value)
            if verdict is not True:
                raise ConfigError(f"config key {path!r} invalid: {verdict}")


def validate_config(data: dict) -> RunConfig:
    """Validate a schema-shaped dict and flatten it into a RunConfig."""
    if not isinstance(data, dict):
        raise ConfigError("config document must be a JSON object")
    _check_block(data, _SCHEMA)
    cfg = RunConfig()
    cfg.version = data.get("version", CONFIG_VERSION)
    plant = data.get("plant", {})
    cfg.plant_preset = plant.get("preset", cfg.plant_preset)
    cfg.plant_model_file = plant.get("model_file")
    syn = data.get("synthesis", {})
    cfg.beta = float(syn.get("beta", cfg.beta))
    cfg.lam = float(syn.get("lambda", cfg.lam))
    cfg.delta = syn.get("delta", cfg.delta)
    cfg.objective_weight = float(syn.get("objective_weight", cfg.objective_weight))
    cfg.form = syn.get("form", cfg.form)
    grid = data.get("grid", {})
    cfg.dt = float(grid.get("dt", cfg.dt))
    cfg.duration = float(grid.get("duration", cfg.duration))
    window = data.get("window", {})
    cfg.window_t0 = int(window.get("t0", cfg.window_t0))
    cfg.window_len = int(window.get("L_w", cfg.window_len))
    noise = data.get("noise", {})
    cfg.noise_fraction = float(noise.get("fraction", cfg.noise_fraction))
    cfg.noise_seed = int(noise.get("seed", cfg.noise_seed))
    scenario = data.get("scenario", {})
    cfg.scenario_id = scenario.get("id")
    cfg.seed = int(data.get("seed", cfg.seed))
    cfg.safety_factor = float(data.get("safety_factor", cfg.safety_factor))
    cfg.output_dir = data.get("output_dir", cfg.output_dir)
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    return validate_config(data)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.as_dict(), indent=1, sort_keys=True)
