"""Nested run configuration with strict YAML loading."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Union

import yaml

from .controller import CurveConfig
from .optimizer import ObjectiveWeights, Region
from .oscillator import AoConfig
from .plant import HumanConfig, WalkerConfig


class ConfigError(ValueError):
    pass


class Session(str, Enum):
    NORMAL = "NORMAL"
    IMPAIRED = "IMPAIRED"
    ASSIST_PREDEFINED = "ASSIST_PREDEFINED"
    ASSIST_OPTIMIZE = "ASSIST_OPTIMIZE"
    ASSIST_STABLE = "ASSIST_STABLE"


DEFAULT_SESSIONS = tuple(Session)


@dataclass(frozen=True)
class ProtocolConfig:
    sessions: tuple[Session, ...] = DEFAULT_SESSIONS
    episode_cycles: int = 20
    eval_cycles: int = 10
    normal_episodes: int = 5
    impaired_episodes: int = 5
    stable_episodes: int = 5
    max_bo_episodes: int = 40
    optimal_tail: int = 3  # optimize-session episodes summarized as the optimal condition
    warmup_cycles: int = 10
    discard_strides: int = 5
    lock_timeout: float = 3.0  # s without a landmark event before aborting
    control_rate: float = 250.0  # Hz
    seed: int = 1

    def __post_init__(self) -> None:
        sessions = tuple(Session(s) for s in self.sessions)
        object.__setattr__(self, "sessions", sessions)
        if not sessions:
            raise ConfigError("protocol.sessions must not be empty")
        if len(set(sessions)) != len(sessions):
            raise ConfigError("protocol.sessions must not repeat a session")
        if Session.ASSIST_STABLE in sessions and Session.ASSIST_OPTIMIZE not in sessions:
            raise ConfigError("ASSIST_STABLE needs a preceding ASSIST_OPTIMIZE session")
        for name in (
            "episode_cycles",
            "eval_cycles",
            "normal_episodes",
            "impaired_episodes",
            "stable_episodes",
            "max_bo_episodes",
            "optimal_tail",
        ):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"protocol.{name} must be >= 1")
        if self.eval_cycles > self.episode_cycles:
            raise ConfigError("protocol.eval_cycles must not exceed episode_cycles")
        if self.warmup_cycles < 0 or self.discard_strides < 0:
            raise ConfigError("warm-up counts must be >= 0")
        if not self.lock_timeout > 0:
            raise ConfigError("protocol.lock_timeout must be > 0")
        if not self.control_rate > 0:
            raise ConfigError("protocol.control_rate must be > 0")


@dataclass(frozen=True)
class DetectorConfig:
    noise_floor: float = 0.5  # deg
    refractory_frac: float = 0.3
    smooth: int = 7  # samples in the centred moving average fed to the detectors

    def __post_init__(self) -> None:
        if int(self.smooth) < 1:
            raise ConfigError("detector.smooth must be >= 1")
        if not self.noise_floor > 0:
            raise ConfigError("detector.noise_floor must be > 0")
        if not 0.0 < self.refractory_frac < 1.0:
            raise ConfigError("detector.refractory_frac must lie in (0, 1)")


@dataclass(frozen=True)
class ControllerConfig:
    lambda_theta: float = 0.95
    lambda_phi: float = 0.5
    n_s: int = 3
    tau_lag: float = 0.02  # s
    k_theta: float = 1.1  # default gains, used outside the optimizer
    k_phi: float = 1.0
    curve: CurveConfig = field(default_factory=CurveConfig)

    def __post_init__(self) -> None:
        for name in ("lambda_theta", "lambda_phi"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigError(f"controller.{name} must lie in [0, 1)")
        if int(self.n_s) < 1:
            raise ConfigError("controller.n_s must be >= 1")
        if self.tau_lag < 0:
            raise ConfigError("controller.tau_lag must be >= 0")


@dataclass(frozen=True)
class OptimizerConfig:
    weights: ObjectiveWeights = field(default_factory=ObjectiveWeights)
    region: Region = field(default_factory=Region)
    zeta: float = 0.01
    stop_tol: float = 0.03
    stop_window: int = 3

    def __post_init__(self) -> None:
        if self.zeta < 0:
            raise ConfigError("optimizer.zeta must be >= 0")
        if not self.stop_tol > 0 or int(self.stop_window) < 1:
            raise ConfigError("optimizer stopping rule needs stop_tol > 0 and stop_window >= 1")


@dataclass(frozen=True)
class SimConfig:
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    oscillator: AoConfig = field(default_factory=AoConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    plant: WalkerConfig = field(default_factory=WalkerConfig)
    human: HumanConfig = field(default_factory=HumanConfig)


def _build(cls: type, data: Any, path: str):
    hints = typing.get_type_hints(cls)
    if data is None:
        data = {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {', '.join(map(str, unknown))}")
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = _coerce(hints[key], value, f"{path}.{key}" if path else key)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def _coerce(tp: Any, value: Any, path: str):
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    origin = typing.get_origin(tp)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list")
        args = typing.get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(args[0], v, path) for v in value)
        if len(args) != len(value):
            raise ConfigError(f"{path}: expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(a, v, path) for a, v in zip(args, value))
    if isinstance(tp, type) and issubclass(tp, Enum):
        try:
            return tp(value)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    return value


def config_from_dict(data: Mapping[str, Any]) -> SimConfig:
    return _build(SimConfig, data, "")


def load_config(path: Union[str, Path, None]) -> SimConfig:
    """Read a YAML config; missing sections fall back to defaults, unknown keys are errors."""
    if path is None:
        return SimConfig()
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: invalid YAML: {exc}") from exc
    return config_from_dict(data or {})


def config_to_dict(cfg: Any) -> Any:
    if dataclasses.is_dataclass(cfg):
        return {f.name: config_to_dict(getattr(cfg, f.name)) for f in dataclasses.fields(cfg)}
    if isinstance(cfg, Enum):
        return cfg.value
    if isinstance(cfg, tuple):
        return [config_to_dict(v) for v in cfg]
    return cfg


def with_seed(cfg: SimConfig, seed: int) -> SimConfig:
    return dataclasses.replace(cfg, protocol=dataclasses.replace(cfg.protocol, seed=int(seed)))
