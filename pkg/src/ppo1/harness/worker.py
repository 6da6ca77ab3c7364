"""Reference worker: serves one environment over stdin/stdout."""

from __future__ import annotations

import logging
import sys
import time

import numpy as np

from ..exceptions import ProtocolError
from .protocol import PROTOCOL_VERSION, Error, Evaluate, Handshake, Result, decode, encode

logger = logging.getLogger(__name__)


def _send(stream, msg):
    stream.write(encode(msg) + "\n")
    stream.flush()


def serve(env, stdin=None, stdout=None, delay: float = 0.0, delay_episode: int | None = None,
          delay_slot: int | None = None) -> int:
    """Answer requests until stdin closes. Returns a process exit code.

    ``delay`` seconds of sleep are added before answering, optionally only
    for one episode and/or slot; tests use this to provoke timeouts.
    Evaluation failures are reported as ``error`` messages, not raised.
    """
    stdin = sys.stdin if stdin is None else stdin
    stdout = sys.stdout if stdout is None else stdout
    lines = enumerate(stdin, start=1)

    try:
        number, line = next(lines)
    except StopIteration:
        return 0
    try:
        hello = decode(line, number)
    except ProtocolError as exc:
        logger.error("%s", exc)
        return 2
    if not isinstance(hello, Handshake):
        logger.error("line %d: expected a handshake, got %s", number, type(hello).__name__)
        return 2
    _send(stdout, Handshake(PROTOCOL_VERSION, env.action_spec.dim, env.name))
    if hello.protocol_version != PROTOCOL_VERSION:
        logger.error("protocol version %d not supported", hello.protocol_version)
        return 2

    for number, line in lines:
        if not line.strip():
            continue
        try:
            msg = decode(line, number)
        except ProtocolError as exc:
            logger.error("%s", exc)
            return 2
        if not isinstance(msg, Evaluate):
            logger.error("line %d: expected evaluate, got %s", number, type(msg).__name__)
            return 2
        if delay > 0 and delay_episode in (None, msg.episode) and delay_slot in (None, msg.env_index):
            time.sleep(delay)
        try:
            reward = float(env.evaluate(np.array(msg.action, dtype=float)))
            reply = Result(msg.episode, msg.env_index, reward)
        except Exception as exc:
            reply = Error(msg.episode, msg.env_index, f"{type(exc).__name__}: {exc}")
        _send(stdout, reply)
    return 0
