"""Sectioned ``key = value`` experiment configuration."""

from __future__ import annotations

import configparser
import dataclasses
import typing
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .metrics import PowerModel
from .tracegen import SyntheticWorkloadSpec
from .workload import SimConfig

# section -> attributes of SimConfig (or of the experiment) filled from it
SECTIONS = {
    "core": ("core",),
    "memsys": ("cache", "dram", "pcie"),
    "nic": ("nic",),
    "critical": ("critical",),
    "regpred": ("regpred",),
    "workload": ("workload",),
    "power": ("power",),
    "tracegen": ("tracegen",),
    "run": ("run",),
}


@dataclass
class RunInfo:
    name: str = "run"
    seed: int = 0
    output: str = "out"

    def validate(self) -> None:
        if not self.name:
            raise ConfigError("name", "must be non-empty")


@dataclass
class ExperimentConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    power: PowerModel = field(default_factory=PowerModel)
    tracegen: SyntheticWorkloadSpec = field(default_factory=SyntheticWorkloadSpec)
    run: RunInfo = field(default_factory=RunInfo)

    def part(self, attr: str):
        if attr in ("power", "tracegen", "run"):
            return getattr(self, attr)
        return getattr(self.sim, attr)

    def validate(self) -> None:
        self.sim.validate()
        self.power.validate()
        self.tracegen.validate()
        self.run.validate()


_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


def _coerce(key: str, raw: str, hint):
    raw = raw.strip()
    origin = typing.get_origin(hint)
    if origin is typing.Union:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        if raw.lower() in ("", "none"):
            return None
        hint = args[0]
    try:
        if hint is bool:
            if raw.lower() not in _BOOL:
                raise ValueError(raw)
            return _BOOL[raw.lower()]
        if hint is int:
            return int(raw, 0)
        if hint is float:
            return float(raw)
        if isinstance(hint, type) and issubclass(hint, Enum):
            return hint(raw)
        if hint is str:
            return raw
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {getattr(hint, '__name__', hint)}") \
            from None
    raise ConfigError(key, f"unsupported field type {hint!r}")


def apply_section(cfg: ExperimentConfig, section: str, items: dict) -> None:
    if section not in SECTIONS:
        raise ConfigError(section, "unknown config section")
    targets = [cfg.part(a) for a in SECTIONS[section]]
    for key, raw in items.items():
        for obj in targets:
            names = {f.name for f in dataclasses.fields(obj)}
            if key in names:
                hint = typing.get_type_hints(type(obj))[key]
                setattr(obj, key, _coerce(f"{section}.{key}", raw, hint))
                break
        else:
            raise ConfigError(f"{section}.{key}", "unknown key")


def loads_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("syntax", str(exc).splitlines()[0]) from None
    cfg = ExperimentConfig()
    for section in cp.sections():
        apply_section(cfg, section, dict(cp[section]))
    try:
        cfg.validate()
    except ConfigError:
        raise
    return cfg


def load_config(path: Optional[str]) -> ExperimentConfig:
    if path is None:
        cfg = ExperimentConfig()
        cfg.validate()
        return cfg
    p = Path(path)
    if not p.is_file():
        raise ConfigError("config", f"no such file: {path}")
    return loads_config(p.read_text())


def dumps_config(cfg: ExperimentConfig) -> str:
    lines = []
    for section, attrs in SECTIONS.items():
        lines.append(f"[{section}]")
        for a in attrs:
            for k, v in dataclasses.asdict(cfg.part(a)).items():
                if isinstance(v, Enum):
                    v = v.value
                lines.append(f"{k} = {'none' if v is None else v}")
        lines.append("")
    return "\n".join(lines)
