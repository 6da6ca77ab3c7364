"""Environments that live in a separate worker process."""

from __future__ import annotations

import logging
import queue
import shlex
import subprocess
import threading

import numpy as np

from ..envs import ActionSpec, Environment
from ..exceptions import EvaluationError, ProtocolError
from .protocol import PROTOCOL_VERSION, Error, Evaluate, Handshake, Result, decode, encode

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 600.0
_EOF = object()


class WorkerTimeoutError(EvaluationError):
    """A worker did not answer within the timeout."""


class WorkerCrashedError(EvaluationError):
    """A worker exited or broke the protocol."""


class ExternalEnvironment(Environment):
    """Forwards evaluations to a persistent worker subprocess.

    The worker is started on first use and handshakes once. A request that
    times out kills the worker; the next request starts a fresh one, so a
    stuck evaluation costs exactly one slot of one episode.
    """

    def __init__(self, command, action_spec: ActionSpec, name: str = "external",
                 fallback_reward: float = 0.0, timeout: float = DEFAULT_TIMEOUT_S,
                 handshake_timeout: float | None = None, env=None, cwd=None):
        super().__init__(name, action_spec, fallback_reward)
        if timeout <= 0:
            raise ValueError("timeout must be positive")
        self.command = shlex.split(command) if isinstance(command, str) else [str(c) for c in command]
        if not self.command:
            raise ValueError("empty worker command")
        self.timeout = float(timeout)
        self.handshake_timeout = self.timeout if handshake_timeout is None else float(handshake_timeout)
        self.process_env = env
        self.cwd = cwd
        self.worker_name: str | None = None
        self._proc: subprocess.Popen | None = None
        self._inbox: queue.Queue | None = None
        self._lock = threading.Lock()

    # -- process management ----------------------------------------------

    @property
    def running(self) -> bool:
        return self._proc is not None and self._proc.poll() is None

    def start(self):
        if self.running:
            return
        self._shutdown()
        logger.debug("%s: starting %s", self.name, self.command)
        proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                text=True, encoding="utf-8", bufsize=1,
                                env=self.process_env, cwd=self.cwd)
        inbox = queue.Queue()
        threading.Thread(target=_pump, args=(proc.stdout, inbox), daemon=True,
                         name=f"ppo1-{self.name}-reader").start()
        self._proc, self._inbox = proc, inbox
        try:
            self._write(Handshake(PROTOCOL_VERSION, self.action_spec.dim, self.name))
            reply = self._receive(self.handshake_timeout, "handshake")
            if not isinstance(reply, Handshake):
                raise WorkerCrashedError(f"expected a handshake, got {type(reply).__name__}")
            if reply.protocol_version != PROTOCOL_VERSION:
                raise WorkerCrashedError(f"worker speaks protocol {reply.protocol_version}, "
                                         f"expected {PROTOCOL_VERSION}")
            if reply.action_dim != self.action_spec.dim:
                raise WorkerCrashedError(f"worker action_dim {reply.action_dim} does not match "
                                         f"{self.action_spec.dim}")
        except BaseException:
            self._shutdown()
            raise
        self.worker_name = reply.env_name

    def _write(self, msg):
        try:
            self._proc.stdin.write(encode(msg) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise WorkerCrashedError(f"cannot write to worker: {exc}") from None

    def _receive(self, timeout, what):
        try:
            item = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise WorkerTimeoutError(f"no {what} from worker after {timeout:g}s") from None
        if item is _EOF:
            raise WorkerCrashedError(f"worker closed its output (exit code {self._proc.poll()})")
        if isinstance(item, ProtocolError):
            raise WorkerCrashedError(str(item))
        return item

    def _shutdown(self, grace: float = 5.0):
        proc, self._proc, self._inbox = self._proc, None, None
        if proc is None:
            return
        try:
            proc.stdin.close()
        except OSError:
            pass
        try:
            proc.wait(timeout=grace)
        except subprocess.TimeoutExpired:
            proc.kill()
            proc.wait()

    def close(self):
        with self._lock:
            self._shutdown()

    def __del__(self):
        proc = getattr(self, "_proc", None)
        if proc is not None and proc.poll() is None:
            proc.kill()

    # -- evaluation ------------------------------------------------------

    def evaluate(self, physical):
        return self.evaluate_at(physical)

    def evaluate_at(self, physical, episode: int = 0, env_index: int = 0) -> float:
        with self._lock:
            self.start()
            action = np.asarray(physical, dtype=float).tolist()
            self._write(Evaluate(int(episode), int(env_index), action))
            try:
                while True:
                    reply = self._receive(self.timeout, "reply")
                    if isinstance(reply, (Result, Error)) and (reply.episode, reply.env_index) == (episode, env_index):
                        break
                    # stale answer to a request that already timed out
                    logger.debug("%s: discarding %r", self.name, reply)
            except WorkerTimeoutError:
                logger.warning("%s: episode %d slot %d timed out after %gs, restarting worker",
                               self.name, episode, env_index, self.timeout)
                self._shutdown(grace=0.0)
                raise
            except WorkerCrashedError:
                self._shutdown(grace=0.0)
                raise
            if isinstance(reply, Error):
                raise EvaluationError(f"worker error: {reply.message}")
            return reply.reward


def _pump(stream, inbox):
    for number, line in enumerate(stream, start=1):
        if not line.strip():
            continue
        try:
            inbox.put(decode(line, number))
        except ProtocolError as exc:
            inbox.put(exc)
    inbox.put(_EOF)
