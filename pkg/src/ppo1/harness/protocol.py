"""Newline-delimited JSON messages between the trainer and environment workers.

Every line is one JSON object whose ``type`` is ``handshake``, ``evaluate``,
``result`` or ``error``. Both sides open with a handshake. Floats are written
with ``repr`` precision, so rewards and actions round-trip bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass
import json
import math

from ..exceptions import ProtocolError

PROTOCOL_VERSION = 1


def _check_index(name, value):
    if type(value) is not int or value < 0:
        raise ValueError(f"{name} must be a non-negative integer, got {value!r}")
    return value


def _check_real(name, value):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValueError(f"{name} must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return value


def _check_str(name, value):
    if not isinstance(value, str):
        raise ValueError(f"{name} must be a string, got {value!r}")
    return value


@dataclass(frozen=True)
class Handshake:
    protocol_version: int
    action_dim: int
    env_name: str

    def __post_init__(self):
        _check_index("protocol_version", self.protocol_version)
        if _check_index("action_dim", self.action_dim) < 1:
            raise ValueError("action_dim must be >= 1")
        _check_str("env_name", self.env_name)


@dataclass(frozen=True)
class Evaluate:
    episode: int
    env_index: int
    action: tuple[float, ...]

    def __post_init__(self):
        _check_index("episode", self.episode)
        _check_index("env_index", self.env_index)
        if isinstance(self.action, (str, bytes, dict)) or not hasattr(self.action, "__iter__"):
            raise ValueError(f"action must be a list of numbers, got {self.action!r}")
        # numpy scalars are fine on the way in; store plain floats
        values = tuple(self.action)
        if any(type(v).__module__ == "numpy" for v in values):
            values = tuple(float(v) for v in values)
        object.__setattr__(self, "action", tuple(_check_real("action", v) for v in values))


@dataclass(frozen=True)
class Result:
    episode: int
    env_index: int
    reward: float

    def __post_init__(self):
        _check_index("episode", self.episode)
        _check_index("env_index", self.env_index)
        reward = self.reward
        if type(reward).__module__ == "numpy":
            reward = float(reward)
        object.__setattr__(self, "reward", _check_real("reward", reward))


@dataclass(frozen=True)
class Error:
    episode: int
    env_index: int
    message: str

    def __post_init__(self):
        _check_index("episode", self.episode)
        _check_index("env_index", self.env_index)
        _check_str("message", self.message)


WireMessage = Handshake | Evaluate | Result | Error

_TYPES = {"handshake": Handshake, "evaluate": Evaluate, "result": Result, "error": Error}
_TAGS = {cls: tag for tag, cls in _TYPES.items()}
_FIELDS = {
    Handshake: ("protocol_version", "action_dim", "env_name"),
    Evaluate: ("episode", "env_index", "action"),
    Result: ("episode", "env_index", "reward"),
    Error: ("episode", "env_index", "message"),
}


def encode(msg: WireMessage) -> str:
    """One JSON line (no trailing newline), ``type`` first."""
    try:
        tag = _TAGS[type(msg)]
    except KeyError:
        raise TypeError(f"not a wire message: {msg!r}") from None
    doc = {"type": tag}
    for name in _FIELDS[type(msg)]:
        value = getattr(msg, name)
        doc[name] = list(value) if name == "action" else value
    return json.dumps(doc, separators=(",", ":"), allow_nan=False)


def _reject_constant(name):
    raise ValueError(f"non-finite number {name}")


def decode(line: str | bytes, line_number: int | None = None) -> WireMessage:
    """Parse one line; anything malformed raises :class:`ProtocolError`."""
    try:
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        doc = json.loads(line, parse_constant=_reject_constant)
    except (UnicodeDecodeError, ValueError) as exc:
        raise ProtocolError(f"not a JSON line ({exc})", line_number) from None
    if not isinstance(doc, dict):
        raise ProtocolError("message must be a JSON object", line_number)
    tag = doc.pop("type", None)
    cls = _TYPES.get(tag) if isinstance(tag, str) else None
    if cls is None:
        raise ProtocolError(f"unknown message type {tag!r}", line_number)
    fields = _FIELDS[cls]
    missing = [f for f in fields if f not in doc]
    extra = sorted(set(doc) - set(fields))
    if missing or extra:
        raise ProtocolError(f"{tag}: missing fields {missing}, unexpected fields {extra}", line_number)
    if cls is Evaluate and not isinstance(doc["action"], list):
        raise ProtocolError("evaluate: action must be a list", line_number)
    try:
        return cls(**doc)
    except ValueError as exc:
        raise ProtocolError(f"{tag}: {exc}", line_number) from None
