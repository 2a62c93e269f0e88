"""Run configuration: ``key = value`` lines under ``[run]``, ``[qmix]``, ``[matd3]``, ``[masking]``.

Unknown sections or keys are errors, absent keys take defaults, and the
fully resolved configuration is what gets written next to the results.
"""
from __future__ import annotations

import configparser
import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

from ..envs import ENVS
from ..masking import MaskingConfig
from ..trainers.config import MATD3Config, QMIXConfig
from ..trainers.schemes import SCHEMES, STUB_SCHEMES

TRAINERS = ("qmix", "matd3")
PRECISIONS = ("float64", "float32")
DEFAULT_STEPS = {"hetero_spread": 200_000, "hetero_reach": 100_000}
DEFAULT_BETA = {"qmix": 0.5, "matd3": 0.1}
DEFAULT_RHO = {"qmix": 0.1, "matd3": 0.5}
SEED_ENV_VAR = "KALEIDO_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    env: str = "hetero_spread"
    trainer: str = "qmix"
    scheme: str = "kaleidoscope"
    seeds: list = field(default_factory=lambda: [0])
    out_dir: str = "runs/default"
    precision: str = "float64"
    total_steps: int | None = None
    eval_interval: int = 5000
    eval_episodes: int = 32
    workers: int = 1


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    qmix: QMIXConfig = field(default_factory=QMIXConfig)
    matd3: MATD3Config = field(default_factory=MATD3Config)
    masking: MaskingConfig = field(default_factory=MaskingConfig)

    @property
    def trainer_cfg(self):
        return self.qmix if self.run.trainer == "qmix" else self.matd3

    def resolve(self) -> "RunConfig":
        """Fill trainer- and env-dependent defaults in place, then validate."""
        r, m = self.run, self.masking
        if r.total_steps is None:
            r.total_steps = DEFAULT_STEPS.get(r.env, 100_000)
        if m.beta is None:
            m.beta = DEFAULT_BETA.get(r.trainer, 0.5)
        if m.rho is None:
            m.rho = DEFAULT_RHO.get(r.trainer, 0.1)
        self.validate()
        return self

    def validate(self) -> None:
        r = self.run
        if r.env not in ENVS:
            raise ConfigError(f"unknown env {r.env!r}; choose from {sorted(ENVS)}")
        if r.trainer not in TRAINERS:
            raise ConfigError(f"unknown trainer {r.trainer!r}; choose from {TRAINERS}")
        if r.scheme not in SCHEMES and r.scheme not in STUB_SCHEMES:
            raise ConfigError(f"unknown scheme {r.scheme!r}; choose from {sorted(SCHEMES)}")
        if r.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {PRECISIONS}")
        if not r.seeds:
            raise ConfigError("at least one seed is required")
        if r.total_steps is not None and r.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if min(r.eval_interval, r.eval_episodes, r.workers) < 1:
            raise ConfigError("eval_interval, eval_episodes and workers must be positive")
        if ENVS[r.env]().spec.discrete != (r.trainer == "qmix"):
            raise ConfigError(f"trainer {r.trainer} does not fit env {r.env}")
        for section in (self.qmix, self.matd3, self.masking):
            try:
                section.validate()
            except ValueError as e:
                raise ConfigError(str(e)) from None


SECTIONS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(raw: str, typ, key: str):
    text = raw.strip()
    origin = typing.get_origin(typ)
    args = typing.get_args(typ)
    if origin is typing.Union or type(typ).__name__ == "UnionType":
        if text.lower() in ("none", ""):
            return None
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(text, inner, key)
    try:
        if typ is bool:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        if typ is list:
            return [int(s) for s in text.replace(" ", "").split(",") if s]
        return text
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {getattr(typ, '__name__', typ)}") from None


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    return str(value)


def parse_config_text(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                       comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    cfg = RunConfig()
    for name in parser.sections():
        if name not in SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        target = getattr(cfg, name)
        hints = typing.get_type_hints(type(target))
        for key, raw in parser.items(name):
            if key not in hints:
                raise ConfigError(f"unknown key {key!r} in [{name}]")
            setattr(target, key, _coerce(raw, hints[key], f"{name}.{key}"))
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed:
        cfg.run.seeds = _coerce(env_seed, list, SEED_ENV_VAR)
    return cfg.resolve()


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def render_config(cfg: RunConfig) -> str:
    lines = []
    for name in SECTIONS:
        section = getattr(cfg, name)
        lines.append(f"[{name}]")
        for f in dataclasses.fields(section):
            lines.append(f"{f.name} = {_format(getattr(section, f.name))}")
        lines.append("")
    return "\n".join(lines)


def write_resolved(cfg: RunConfig, out_dir) -> Path:
    path = Path(out_dir) / "resolved.cfg"
    path.write_text(render_config(cfg), encoding="utf-8")
    return path
