"""Plain-text ``key = value`` run configuration.

Sections map onto the scenario dataclasses; unknown sections or keys are
errors. ``#`` starts a comment. Tuples are comma separated and failure
schedules are written ``time:target, time:target``.
"""
from __future__ import annotations

import configparser
import typing
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Tuple

from .simulate import EmbeddingParams, FailureParams, ScenarioConfig, SubstrateParams, WorkloadParams


class ConfigError(ValueError):
    pass


@dataclass
class RunParams:
    seed: int = 0
    verbosity: str = "warning"


@dataclass
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    run: RunParams = field(default_factory=RunParams)


# section name -> (attribute on RunConfig / ScenarioConfig, excluded keys)
SECTIONS: Dict[str, Tuple[str, Tuple[str, ...]]] = {
    "substrate": ("substrate", ()),
    "workload": ("workload", ()),
    "embedding": ("embedding", ()),
    "solver": ("solver", ("record_trace",)),
    "swarm": ("swarm", ("seed",)),
    "failures": ("failures", ()),
    "run": ("run", ()),
}

VERBOSITY = ("debug", "info", "warning", "error")


def _section_obj(cfg: RunConfig, section: str):
    attr = SECTIONS[section][0]
    return cfg.run if attr == "run" else getattr(cfg.scenario, attr)


def _keys(obj, section: str) -> List[str]:
    skip = SECTIONS[section][1]
    return [f.name for f in fields(obj) if f.name not in skip]


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ", ".join(f"{_format(float(t))}:{int(x)}" for t, x in value)
        return ", ".join(_format(v) for v in value)
    return str(value)


def _parse(raw: str, current, hint, where: str):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, str):
            return raw
        if isinstance(current, tuple):
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            args = typing.get_args(hint)
            if args and typing.get_origin(args[0]) is tuple:
                out = []
                for p in parts:
                    t, x = p.split(":")
                    out.append((float(t), int(x)))
                return tuple(out)
            return tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r}") from None
    raise ConfigError(f"{where}: unsupported value type")


def render(cfg: RunConfig) -> str:
    """Serialize every setting, defaults included."""
    lines = []
    for section in SECTIONS:
        obj = _section_obj(cfg, section)
        lines.append(f"[{section}]")
        for key in _keys(obj, section):
            lines.append(f"{key} = {_format(getattr(obj, key))}")
        lines.append("")
    return "\n".join(lines)


def parse_config(text: str, base: RunConfig = None) -> RunConfig:
    cp = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#",), comment_prefixes=("#",),
        delimiters=("=",), strict=True,
    )
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).replace("\n", " ")) from None
    cfg = base or RunConfig()
    updates: Dict[str, Dict] = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        obj = _section_obj(cfg, section)
        hints = typing.get_type_hints(type(obj))
        allowed = _keys(obj, section)
        for key, raw in cp.items(section):
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            updates.setdefault(section, {})[key] = _parse(raw, getattr(obj, key), hints.get(key), f"[{section}] {key}")
    return apply_updates(cfg, updates)


def apply_updates(cfg: RunConfig, updates: Dict[str, Dict]) -> RunConfig:
    """New config with ``{section: {key: value}}`` applied and validated."""
    parts = {}
    for section in SECTIONS:
        obj = _section_obj(cfg, section)
        try:
            parts[section] = replace(obj, **updates.get(section, {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}] {exc}") from None
    if parts["run"].verbosity not in VERBOSITY:
        raise ConfigError(f"[run] verbosity must be one of {VERBOSITY}")
    try:
        scenario = ScenarioConfig(
            substrate=parts["substrate"], workload=parts["workload"], embedding=parts["embedding"],
            solver=parts["solver"], swarm=parts["swarm"], failures=parts["failures"], seed=parts["run"].seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(scenario, parts["run"])


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


__all__ = [
    "ConfigError", "RunConfig", "RunParams", "SubstrateParams", "WorkloadParams",
    "EmbeddingParams", "FailureParams", "parse_config", "load_config", "render", "apply_updates",
]
