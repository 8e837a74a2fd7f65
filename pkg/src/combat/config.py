"""Run configuration and its key-value file format.

The config file is INI-style (``configparser``)::

    [run]          RunConfig fields
    [game]         GameConfig fields
    [learner]      Hyperparams fields plus ``hidden`` and ``conv_channels``
    [population]   PopulationConfig fields
    [stage.N]      StageConfig fields for stage N (1..4)

Every key is optional; unknown keys are rejected.  See docs/config.md.
"""

from __future__ import annotations

import configparser
import dataclasses
import enum
import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, get_type_hints

from .env import GameConfig, Mode
from .learner import Hyperparams, NetworkSpec
from .population import PopulationConfig
from .scheduler import TeammatePolicy


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StageConfig:
    stage: int
    teammate: TeammatePolicy = TeammatePolicy.SCRIPTED
    kick_enabled: bool = False
    w_terminal: float = 1.0
    w_pickup: float = 0.0

    def __post_init__(self):
        if self.stage not in (1, 2, 3, 4):
            raise ConfigError(f"unknown stage id {self.stage}")


def default_stages(w_pickup: float = 0.1) -> dict[int, StageConfig]:
    return {
        1: StageConfig(1, TeammatePolicy.SCRIPTED, False, 1.0, 0.0),
        2: StageConfig(2, TeammatePolicy.SCRIPTED, False, 1.0, w_pickup),
        3: StageConfig(3, TeammatePolicy.TRAINABLE, False, 1.0, w_pickup),
        4: StageConfig(4, TeammatePolicy.TRAINABLE, True, 1.0, w_pickup),
    }


def default_data_dir() -> Path:
    return Path(os.environ.get("COMBAT_DATA_DIR", Path.home() / ".combat"))


@dataclass(frozen=True)
class RunConfig:
    trainable: int = 8
    scripted: int = 1
    scripted_kind: str = "scripted:simple"
    workers: int = 1
    pickups: int = 1000
    seed: int = 0
    k_factor: float = 32.0
    p_anchor: float = 0.5
    stage: int = 1
    auto_advance: bool = True
    checkpoint_interval: int = 100
    deterministic: bool = True
    max_staleness: int = 1
    data_dir: str = ""
    run_name: str = "run"
    game: GameConfig = field(default_factory=GameConfig)
    hyper: Hyperparams = field(default_factory=Hyperparams)
    network: NetworkSpec = field(default_factory=NetworkSpec)
    population: PopulationConfig = field(default_factory=PopulationConfig)
    stages: dict[int, StageConfig] = field(default_factory=default_stages)

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.pickups < 1:
            raise ConfigError("pickups must be at least 1")
        if self.stage not in self.stages:
            raise ConfigError(f"unknown stage id {self.stage}")
        if self.network.board_size != self.game.board_size:
            raise ConfigError("network board_size must match the game board")
        self.game.validate()

    @property
    def run_dir(self) -> Path:
        base = Path(self.data_dir) if self.data_dir else default_data_dir()
        return base / self.run_name

    def to_dict(self) -> dict:
        d = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "stages":
                d[f.name] = {str(k): _plain(dataclasses.asdict(s)) for k, s in v.items()}
            elif dataclasses.is_dataclass(v):
                d[f.name] = _plain(dataclasses.asdict(v))
            else:
                d[f.name] = v
        return d


def _plain(d: dict) -> dict:
    return {k: (v.value if isinstance(v, enum.Enum) else list(v) if isinstance(v, tuple) else v) for k, v in d.items()}


def _coerce(raw: str, typ: Any, key: str):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if isinstance(typ, type) and issubclass(typ, enum.Enum):
            return typ(raw.lower())
        if key == "conv_channels":
            return tuple(int(x) for x in raw.replace(",", " ").split())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _section(parser: configparser.ConfigParser, name: str, cls, extra: dict | None = None, skip=()) -> dict:
    if not parser.has_section(name):
        return {}
    hints = get_type_hints(cls)
    hints.update(extra or {})
    out = {}
    for key, raw in parser.items(name):
        if key in skip:
            continue
        if key not in hints:
            raise ConfigError(f"unknown key [{name}] {key}")
        out[key] = _coerce(raw, hints[key], key)
    return out


def load_config(path: str | Path, **overrides) -> RunConfig:
    parser = configparser.ConfigParser()
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    known = {"run", "game", "learner", "population"} | {f"stage.{k}" for k in range(1, 5)}
    for section in parser.sections():
        if section not in known:
            raise ConfigError(f"unknown section [{section}]")

    run = _section(parser, "run", RunConfig, skip=())
    for nested in ("game", "hyper", "network", "population", "stages"):
        if nested in run:
            raise ConfigError(f"[run] {nested} must be configured in its own section")
    game = GameConfig(**_section(parser, "game", GameConfig))
    learner = _section(parser, "learner", Hyperparams, extra={"hidden": int, "conv_channels": tuple})
    net_keys = {k: learner.pop(k) for k in ("hidden", "conv_channels") if k in learner}
    hyper = Hyperparams(**learner)
    network = NetworkSpec(board_size=game.board_size, **net_keys)
    pop = PopulationConfig(**_section(parser, "population", PopulationConfig))
    stages = default_stages()
    for k in range(1, 5):
        values = _section(parser, f"stage.{k}", StageConfig)
        values.pop("stage", None)
        if values:
            stages[k] = dataclasses.replace(stages[k], **values)
    run.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(game=game, hyper=hyper, network=network, population=pop, stages=stages, **run)


def dump_config(cfg: RunConfig) -> str:
    parser = configparser.ConfigParser()
    d = cfg.to_dict()
    parser["run"] = {k: _fmt(v) for k, v in d.items() if k not in ("game", "hyper", "network", "population", "stages")}
    parser["game"] = {k: _fmt(v) for k, v in d["game"].items()}
    learner = {k: _fmt(v) for k, v in d["hyper"].items()}
    learner["hidden"] = _fmt(cfg.network.hidden)
    learner["conv_channels"] = _fmt(cfg.network.conv_channels)
    parser["learner"] = learner
    parser["population"] = {k: _fmt(v) for k, v in d["population"].items()}
    for k, s in d["stages"].items():
        parser[f"stage.{k}"] = {kk: _fmt(vv) for kk, vv in s.items() if kk != "stage"}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return ", ".join(str(x) for x in v)
    if isinstance(v, enum.Enum):
        return str(v.value)
    if isinstance(v, Mode):
        return v.value
    return str(v)
