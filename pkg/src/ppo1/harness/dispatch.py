"""Barrier-synchronized evaluation of one action per environment slot."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor, TimeoutError as FutureTimeout, wait
import time

import numpy as np

from ..envs import Environment, EvaluationOutcome, evaluate_outcome

logger = logging.getLogger(__name__)

DISPATCH_MODES = ("sequential", "concurrent")


def _timed_out(env: Environment, index: int, timeout: float) -> EvaluationOutcome:
    logger.warning("%s (slot %d): no reward after %.3gs, using fallback reward", env.name, index, timeout)
    return EvaluationOutcome(env.fallback_reward, True, f"timeout after {timeout}s")


def dispatch_outcomes(actions, envs, mode: str = "sequential", timeout: float | None = None,
                      episode: int = 0) -> list[EvaluationOutcome]:
    """Evaluate ``actions[i]`` on ``envs[i]`` for every slot and wait for all of them.

    Results are ordered by slot index whatever the completion order. A slot
    that fails, is infeasible or exceeds ``timeout`` seconds gets its
    environment's fallback reward; the other slots are unaffected.
    """
    if mode not in DISPATCH_MODES:
        raise ValueError(f"dispatch mode must be one of {DISPATCH_MODES}, got {mode!r}")
    if len(actions) != len(envs):
        raise ValueError(f"{len(actions)} actions for {len(envs)} environments")
    if timeout is not None and timeout <= 0:
        raise ValueError("timeout must be positive")
    n = len(envs)
    if n == 0:
        return []

    def job(i):
        return evaluate_outcome(envs[i], actions[i], episode=episode, env_index=i)

    if mode == "sequential" and timeout is None:
        return [job(i) for i in range(n)]

    # hung evaluations keep their thread; never wait on them at shutdown
    pool = ThreadPoolExecutor(max_workers=n, thread_name_prefix="ppo1-slot")
    try:
        out: list[EvaluationOutcome | None] = [None] * n
        if mode == "sequential":
            for i in range(n):
                fut = pool.submit(job, i)
                try:
                    out[i] = fut.result(timeout=timeout)
                except FutureTimeout:
                    out[i] = _timed_out(envs[i], i, timeout)
        else:
            futures = [pool.submit(job, i) for i in range(n)]
            deadline = None if timeout is None else time.monotonic() + timeout
            wait(futures, timeout=timeout)
            for i, fut in enumerate(futures):
                if fut.done():
                    out[i] = fut.result()
                else:
                    remaining = 0.0 if deadline is None else max(0.0, deadline - time.monotonic())
                    try:
                        out[i] = fut.result(timeout=remaining)
                    except FutureTimeout:
                        out[i] = _timed_out(envs[i], i, timeout)
        return out
    finally:
        pool.shutdown(wait=False, cancel_futures=True)


def dispatch(actions, envs, mode: str = "sequential", timeout: float | None = None,
             episode: int = 0) -> np.ndarray:
    """Rewards for every slot, as a float array ordered by environment index."""
    outcomes = dispatch_outcomes(actions, envs, mode, timeout, episode)
    return np.array([o.reward for o in outcomes], dtype=float)
