"""Environment interface, action mappings and the fallback policy."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, InfeasibleActionError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DimensionMap:
    """Affine map from a raw coordinate in [-1, 1] to a physical value.

    ``symmetric`` maps xi to ``xi * max``; ``range`` maps xi to
    ``lo + (1 + xi) / 2 * (hi - lo)``.
    """

    kind: str
    max: float | None = None
    lo: float | None = None
    hi: float | None = None
    label: str = ""
    unit: str = ""

    def __post_init__(self):
        if self.kind == "symmetric":
            if self.max is None or not self.max > 0:
                raise ValueError("symmetric dimension needs max > 0")
        elif self.kind == "range":
            if self.lo is None or self.hi is None or not self.lo < self.hi:
                raise ValueError("range dimension needs lo < hi")
        else:
            raise ValueError(f"unknown dimension kind {self.kind!r}")

    @classmethod
    def symmetric(cls, max, label="", unit=""):
        return cls("symmetric", max=float(max), label=label, unit=unit)

    @classmethod
    def range(cls, lo, hi, label="", unit=""):
        return cls("range", lo=float(lo), hi=float(hi), label=label, unit=unit)

    @property
    def bounds(self) -> tuple[float, float]:
        if self.kind == "symmetric":
            return -self.max, self.max
        return self.lo, self.hi

    def forward(self, xi):
        if self.kind == "symmetric":
            return xi * self.max
        return self.lo + 0.5 * (1.0 + xi) * (self.hi - self.lo)

    def inverse(self, x):
        if self.kind == "symmetric":
            return x / self.max
        return 2.0 * (x - self.lo) / (self.hi - self.lo) - 1.0

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "label": self.label, "unit": self.unit}
        if self.kind == "symmetric":
            d["max"] = self.max
        else:
            d["lo"], d["hi"] = self.lo, self.hi
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DimensionMap":
        return cls(**d)


@dataclass(frozen=True)
class ActionSpec:
    dims: tuple[DimensionMap, ...]

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        if not self.dims:
            raise ValueError("an action spec needs at least one dimension")

    @property
    def dim(self) -> int:
        return len(self.dims)

    @property
    def bounds(self) -> np.ndarray:
        """(d, 2) array of physical [lo, hi] per dimension."""
        return np.array([d.bounds for d in self.dims], dtype=float)

    @property
    def labels(self) -> list[str]:
        return [d.label or f"x{i}" for i, d in enumerate(self.dims)]

    def to_dict(self) -> dict:
        return {"dims": [d.to_dict() for d in self.dims]}

    @classmethod
    def from_dict(cls, d: dict) -> "ActionSpec":
        return cls(tuple(DimensionMap.from_dict(x) for x in d["dims"]))


def _check_len(spec: ActionSpec, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (spec.dim,):
        raise DimensionError(f"expected a vector of length {spec.dim}, got shape {v.shape}")
    return v


def clip_raw(raw_action) -> np.ndarray:
    return np.clip(np.asarray(raw_action, dtype=float), -1.0, 1.0)


def map_action(spec: ActionSpec, clipped) -> np.ndarray:
    xi = _check_len(spec, clipped)
    return np.array([d.forward(x) for d, x in zip(spec.dims, xi)])


def unmap_action(spec: ActionSpec, physical) -> np.ndarray:
    x = _check_len(spec, physical)
    return np.array([d.inverse(v) for d, v in zip(spec.dims, x)])


class Environment:
    """Something that turns a physical action into a scalar reward.

    Subclasses implement :meth:`evaluate`. Raising
    :class:`~ppo1.exceptions.InfeasibleActionError` (or any other exception)
    makes :func:`evaluate_with_fallback` substitute ``fallback_reward``.
    """

    def __init__(self, name: str, action_spec: ActionSpec, fallback_reward: float = 0.0):
        self.name = name
        self.action_spec = action_spec
        self.fallback_reward = float(fallback_reward)

    def evaluate(self, physical: np.ndarray) -> float:
        raise NotImplementedError

    def evaluate_at(self, physical: np.ndarray, episode: int = 0, env_index: int = 0) -> float:
        """Evaluate with the episode and slot the request belongs to.

        In-process environments ignore the tags; remote ones forward them.
        """
        return self.evaluate(physical)

    def close(self):
        pass

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r}, dim={self.action_spec.dim})"


class FunctionEnvironment(Environment):
    """Environment backed by a plain Python callable.

    ``feasible`` optionally declares which physical actions are admissible.
    """

    def __init__(self, name, action_spec, reward_fn, fallback_reward=0.0, feasible=None):
        super().__init__(name, action_spec, fallback_reward)
        self.reward_fn = reward_fn
        self.feasible = feasible

    def evaluate(self, physical):
        physical = np.asarray(physical, dtype=float)
        if self.feasible is not None and not self.feasible(physical):
            raise InfeasibleActionError(f"{self.name}: infeasible action {physical.tolist()}")
        return float(self.reward_fn(physical))


@dataclass
class EvaluationOutcome:
    reward: float
    fell_back: bool = False
    cause: str = field(default="")


def evaluate_outcome(env: Environment, physical, episode: int = 0, env_index: int = 0) -> EvaluationOutcome:
    try:
        reward = float(env.evaluate_at(np.asarray(physical, dtype=float), episode, env_index))
    except InfeasibleActionError as exc:
        logger.info("%s: infeasible action, using fallback reward (%s)", env.name, exc)
        return EvaluationOutcome(env.fallback_reward, True, f"infeasible: {exc}")
    except Exception as exc:  # any failure is absorbed by the fallback
        logger.warning("%s: evaluation failed, using fallback reward (%r)", env.name, exc)
        return EvaluationOutcome(env.fallback_reward, True, f"error: {exc!r}")
    if not np.isfinite(reward):
        logger.warning("%s: non-finite reward %r, using fallback reward", env.name, reward)
        return EvaluationOutcome(env.fallback_reward, True, "non-finite reward")
    return EvaluationOutcome(reward)


def evaluate_with_fallback(env: Environment, physical) -> float:
    """Reward for ``physical``, or ``env.fallback_reward`` on any failure."""
    return evaluate_outcome(env, physical).reward
