"""Flat ``key = value`` configuration files.

Values are parsed as JSON where possible (numbers, booleans, lists) and kept
as strings otherwise.  Keys are case-sensitive (``run.T``).
"""

from __future__ import annotations

import configparser
import json
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "problem.kind": "quadratic",
    "problem.d": 1,
    "problem.sigma": 0.0,
    "problem.data_path": "",
    "problem.ridge": 0.0,
    "problem.radius": 10.0,
    "problem.x0_dist_sq": 1.0,
    "run.threads": 1,
    "run.T": 1000,
    "run.alpha": "tuned",
    "run.epsilon": 1.0,
    "run.theta": 1.0,
    "run.seed": 0,
    "run.trace": "off",
    "run.backend": "sim",
    "sim.strategy": "Sequential",
    "sim.tau": 2,
    "sim.tau_max": 8,
    "sim.seed": 0,
    "sim.stall_prob": 0.5,
    "sim.stall_at": "apply",
    "experiment.trials": 1000,
    "experiment.target_bound": 0.2,
    "experiment.variant": "async",
    "experiment.seed": 0,
}

KNOWN_KEYS = frozenset(DEFAULTS)


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw.strip()


def parse_config(text: str) -> dict[str, Any]:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[asgd]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    values = {k: _parse_value(v) for k, v in parser["asgd"].items()}
    unknown = sorted(set(values) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    merged = dict(DEFAULTS)
    merged.update(values)
    _validate(merged)
    return merged


def load_config(path: str | Path | None) -> dict[str, Any]:
    if path is None:
        return dict(DEFAULTS)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def trace_enabled(cfg: dict[str, Any]) -> bool:
    val = cfg["run.trace"]
    return val is True or str(val).lower() in ("on", "true", "1", "yes")


def _validate(cfg: dict[str, Any]) -> None:
    ints = ("problem.d", "run.threads", "run.T", "run.seed", "sim.tau", "sim.tau_max", "sim.seed",
            "experiment.trials", "experiment.seed")
    for key in ints:
        if not isinstance(cfg[key], int) or isinstance(cfg[key], bool):
            raise ConfigError(f"{key} must be an integer, got {cfg[key]!r}")
    reals = ("problem.sigma", "problem.ridge", "problem.radius", "problem.x0_dist_sq", "run.epsilon",
             "run.theta", "sim.stall_prob", "experiment.target_bound")
    for key in reals:
        if not isinstance(cfg[key], (int, float)) or isinstance(cfg[key], bool):
            raise ConfigError(f"{key} must be a number, got {cfg[key]!r}")
    alpha = cfg["run.alpha"]
    if alpha != "tuned" and (not isinstance(alpha, (int, float)) or alpha <= 0):
        raise ConfigError(f"run.alpha must be a positive number or 'tuned', got {alpha!r}")
    if cfg["run.backend"] not in ("sim", "threads"):
        raise ConfigError("run.backend must be 'sim' or 'threads'")
    if str(cfg["run.trace"]).lower() not in ("on", "off", "true", "false", "1", "0", "yes", "no"):
        raise ConfigError("run.trace must be on or off")
    if cfg["problem.kind"] not in ("quadratic", "regression"):
        raise ConfigError("problem.kind must be quadratic or regression")
    if cfg["run.threads"] < 1 or cfg["problem.d"] < 1 or cfg["run.T"] < 0:
        raise ConfigError("need run.threads >= 1, problem.d >= 1, run.T >= 0")
    if not cfg["run.epsilon"] > 0 or not 0 < cfg["run.theta"] <= 1:
        raise ConfigError("need run.epsilon > 0 and run.theta in (0, 1]")
