"""Dispatch, worker processes, run configuration."""

from .dispatch import DISPATCH_MODES, dispatch, dispatch_outcomes
from .external import ExternalEnvironment, WorkerCrashedError, WorkerTimeoutError
from .protocol import PROTOCOL_VERSION, Error, Evaluate, Handshake, Result, decode, encode

__all__ = [
    "DISPATCH_MODES", "Error", "Evaluate", "ExternalEnvironment", "Handshake", "PROTOCOL_VERSION",
    "Result", "WorkerCrashedError", "WorkerTimeoutError", "decode", "dispatch", "dispatch_outcomes",
    "encode",
]
