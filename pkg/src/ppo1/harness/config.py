"""Run configuration: TOML file -> :class:`RunConfig` -> environments."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
import json
import os
from pathlib import Path
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..envs import ActionSpec
from ..exceptions import ConfigError
from ..surrogates import BUILTIN_SURROGATES, make_surrogate
from ..trainer import TrainerConfig
from .dispatch import DISPATCH_MODES
from .external import DEFAULT_TIMEOUT_S, ExternalEnvironment

SEED_ENV_VAR = "PPO1_SEED"

_SECTIONS = {"trainer", "environment", "action_spec", "run"}
_ENV_KEYS = {"builtin", "command", "name", "fallback_reward", "kwargs"}
_RUN_KEYS = {"output_dir", "dispatch_mode", "worker_timeout_s"}


@dataclass(frozen=True)
class EnvironmentConfig:
    """Either a builtin surrogate name or an external worker command."""

    builtin: str | None = None
    command: tuple[str, ...] | None = None
    name: str | None = None
    fallback_reward: float | None = None
    kwargs: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.builtin is None) == (self.command is None):
            raise ConfigError("[environment] needs exactly one of 'builtin' or 'command'")
        if self.builtin is not None and self.builtin not in BUILTIN_SURROGATES:
            raise ConfigError(f"unknown builtin environment {self.builtin!r}; "
                              f"choose from {sorted(BUILTIN_SURROGATES)}")
        if self.command is not None:
            if isinstance(self.command, str) or not self.command:
                raise ConfigError("[environment] command must be a non-empty list of strings")
            object.__setattr__(self, "command", tuple(str(c) for c in self.command))
            if self.fallback_reward is None:
                raise ConfigError("an external environment needs a fallback_reward")
        if self.fallback_reward is not None:
            try:
                object.__setattr__(self, "fallback_reward", float(self.fallback_reward))
            except (TypeError, ValueError):
                raise ConfigError(f"fallback_reward must be a number, got {self.fallback_reward!r}") from None

    @property
    def display_name(self) -> str:
        return self.name or self.builtin or Path(self.command[0]).name

    def to_dict(self) -> dict:
        d = {"builtin": self.builtin, "command": None if self.command is None else list(self.command),
             "name": self.name, "fallback_reward": self.fallback_reward, "kwargs": dict(self.kwargs)}
        return {k: v for k, v in d.items() if v is not None}


@dataclass(frozen=True)
class RunConfig:
    trainer: TrainerConfig
    environment: EnvironmentConfig
    action_spec: ActionSpec | None = None
    output_dir: Path = Path("runs/latest")
    dispatch_mode: str = "sequential"
    worker_timeout_s: float = DEFAULT_TIMEOUT_S

    def __post_init__(self):
        if self.dispatch_mode not in DISPATCH_MODES:
            raise ConfigError(f"dispatch_mode must be one of {DISPATCH_MODES}, got {self.dispatch_mode!r}")
        if not self.worker_timeout_s > 0:
            raise ConfigError("worker_timeout_s must be positive")
        if self.environment.command is not None and self.action_spec is None:
            raise ConfigError("an external environment needs an [action_spec] section")
        object.__setattr__(self, "output_dir", Path(self.output_dir))

    def to_dict(self) -> dict:
        d = {"trainer": self.trainer.to_dict(), "environment": self.environment.to_dict(),
             "run": {"output_dir": str(self.output_dir), "dispatch_mode": self.dispatch_mode,
                     "worker_timeout_s": self.worker_timeout_s}}
        if self.action_spec is not None:
            d["action_spec"] = self.action_spec.to_dict()
        return d

    def with_output_dir(self, path) -> "RunConfig":
        return replace(self, output_dir=Path(path))

    def env_factory(self):
        """Callable ``slot -> Environment``; each call builds a fresh instance."""
        env_cfg = self.environment

        def build(slot: int):
            if env_cfg.builtin is not None:
                env = make_surrogate(env_cfg.builtin, **env_cfg.kwargs)
                if env_cfg.fallback_reward is not None:
                    env.fallback_reward = env_cfg.fallback_reward
                if env_cfg.name:
                    env.name = env_cfg.name
                if self.action_spec is not None:
                    env.action_spec = self.action_spec
                return env
            return ExternalEnvironment(env_cfg.command, self.action_spec, name=env_cfg.display_name,
                                       fallback_reward=env_cfg.fallback_reward,
                                       timeout=self.worker_timeout_s)

        return build

    def check_environment(self):
        """Build one builtin environment to surface bad kwargs or specs early."""
        if self.environment.builtin is None:
            return
        try:
            env = self.env_factory()(0)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[environment]: {exc}") from None
        if self.action_spec is not None and self.action_spec.dim != len(env.optima[0]):
            raise ConfigError(f"[action_spec] has {self.action_spec.dim} dimensions, "
                              f"{self.environment.builtin} expects {len(env.optima[0])}")


def _table(doc, key, allowed=None) -> dict:
    section = doc.get(key, {})
    if not isinstance(section, dict):
        raise ConfigError(f"[{key}] must be a table")
    if allowed is not None:
        unknown = set(section) - allowed
        if unknown:
            raise ConfigError(f"[{key}] has unknown keys {sorted(unknown)}")
    return section


def seed_override(environ=None) -> int | None:
    raw = (os.environ if environ is None else environ).get(SEED_ENV_VAR)
    if raw is None or raw.strip() == "":
        return None
    try:
        seed = int(raw)
    except ValueError:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from None
    if seed < 0:
        raise ConfigError(f"{SEED_ENV_VAR} must be non-negative, got {seed}")
    return seed


def config_from_dict(doc: dict, environ=None) -> RunConfig:
    unknown = set(doc) - _SECTIONS
    if unknown:
        raise ConfigError(f"unknown sections {sorted(unknown)}")
    trainer = dict(_table(doc, "trainer"))
    seed = seed_override(environ)
    if seed is not None:
        trainer["seed"] = seed
    try:
        trainer_cfg = TrainerConfig.from_dict(trainer)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[trainer]: {exc}") from None

    env_doc = dict(_table(doc, "environment", _ENV_KEYS))
    if not isinstance(env_doc.get("kwargs", {}), dict):
        raise ConfigError("[environment] kwargs must be a table")
    env_cfg = EnvironmentConfig(**env_doc)

    spec = None
    if "action_spec" in doc:
        try:
            spec = ActionSpec.from_dict(_table(doc, "action_spec", {"dims"}))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"[action_spec]: {exc!r}") from None

    run = _table(doc, "run", _RUN_KEYS)
    try:
        timeout = float(run.get("worker_timeout_s", DEFAULT_TIMEOUT_S))
    except (TypeError, ValueError):
        raise ConfigError("worker_timeout_s must be a number") from None
    cfg = RunConfig(trainer_cfg, env_cfg, spec, Path(run.get("output_dir", "runs/latest")),
                    run.get("dispatch_mode", "sequential"), timeout)
    cfg.check_environment()
    return cfg


def load_config(path, environ=None) -> RunConfig:
    """Parse a TOML run file. ``PPO1_SEED`` in ``environ`` overrides the seed."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(doc, environ)


def write_config_echo(cfg: RunConfig, output_dir=None) -> Path:
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.json"
    path.write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    return path
