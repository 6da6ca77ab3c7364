"""Single-step PPO: one constant state, n parallel actions per episode.

Each episode evaluates the current policy once on the constant input state,
draws ``n_envs`` actions, collects one reward per action, whitens the rewards
into advantages and runs ``n_epochs`` passes of mini-batch Adam ascent on the
clipped surrogate. There is no critic and no discounting.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .envs import ActionSpec, Environment, clip_raw, map_action
from .exceptions import DivergedUpdateError, InsufficientHistoryError
from .harness.dispatch import dispatch_outcomes
from .mlp import (AdamState, NetworkLayout, NetworkParams, adam_step, checkpoint_from_dict,
                  checkpoint_to_dict, init_network)
from .policy import ClipConfig, DiagGaussianPolicy, log_prob_batch, sample, surrogate_loss_and_grad

logger = logging.getLogger(__name__)

WHITEN_EPS = 1e-12
# spreads below this many ulps of the largest reward are rounding noise
_ROUNDING_SPREAD = 64 * np.finfo(float).eps
MOVING_AVERAGE_WINDOW = 50
REPORT_EPISODES = 5

# fixed offsets of the independent random streams derived from the seed
_SAMPLE_STREAM = 1
_SHUFFLE_STREAM = 2


@dataclass(frozen=True)
class TrainerConfig:
    n_episodes: int = 20
    n_envs: int = 8
    n_epochs: int = 32
    minibatch_size: int = 4
    learning_rate: float = 5e-3
    clip: ClipConfig = field(default_factory=ClipConfig)
    seed: int = 0
    input_state: tuple[float, ...] | None = None
    discount: float = 1.0
    hidden_sizes: tuple[int, ...] = (4, 4)
    init_log_std: float = 0.0
    init_scheme: str = "xavier_uniform"
    checkpoint_every: int = 10
    max_grad_norm: float | None = 0.5

    def __post_init__(self):
        if self.n_episodes < 0:
            raise ValueError("n_episodes must be >= 0")
        if self.n_envs < 1:
            raise ValueError("n_envs must be >= 1")
        if self.n_epochs < 0:
            raise ValueError("n_epochs must be >= 0")
        if not 1 <= self.minibatch_size <= self.n_envs:
            raise ValueError(f"minibatch_size must lie in [1, n_envs={self.n_envs}], got {self.minibatch_size}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be >= 1")
        if self.max_grad_norm is not None and not self.max_grad_norm > 0:
            raise ValueError("max_grad_norm must be positive or None")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.input_state is not None:
            object.__setattr__(self, "input_state", tuple(float(v) for v in self.input_state))

    @property
    def steps_per_episode(self) -> int:
        return self.n_epochs * math.ceil(self.n_envs / self.minibatch_size)

    def state_vector(self, action_dim: int) -> np.ndarray:
        if self.input_state is None:
            return np.zeros(action_dim)
        return np.array(self.input_state, dtype=float)

    def to_dict(self) -> dict:
        return {
            "n_episodes": self.n_episodes, "n_envs": self.n_envs, "n_epochs": self.n_epochs,
            "minibatch_size": self.minibatch_size, "learning_rate": self.learning_rate,
            "clip_range": self.clip.epsilon, "objective_mode": self.clip.objective_mode,
            "entropy_coef": self.clip.entropy_coef, "seed": self.seed,
            "input_state": None if self.input_state is None else list(self.input_state),
            "discount": self.discount, "hidden_sizes": list(self.hidden_sizes),
            "init_log_std": self.init_log_std, "init_scheme": self.init_scheme,
            "checkpoint_every": self.checkpoint_every, "max_grad_norm": self.max_grad_norm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainerConfig":
        d = dict(d)
        clip = ClipConfig(
            epsilon=float(d.pop("clip_range", 0.3)),
            objective_mode=d.pop("objective_mode", "standard_clip"),
            entropy_coef=float(d.pop("entropy_coef", 0.0)),
        )
        unknown = set(d) - {f for f in cls.__dataclass_fields__ if f != "clip"}
        if unknown:
            raise ValueError(f"unknown trainer settings: {sorted(unknown)}")
        if "hidden_sizes" in d:
            d["hidden_sizes"] = tuple(d["hidden_sizes"])
        return cls(clip=clip, **d)


@dataclass
class Agent:
    layout: NetworkLayout
    params: NetworkParams
    adam: AdamState
    input_state: np.ndarray

    @classmethod
    def create(cls, action_dim: int, cfg: TrainerConfig) -> "Agent":
        state = cfg.state_vector(action_dim)
        layout = NetworkLayout(state.shape[0], cfg.hidden_sizes, action_dim)
        params = init_network(layout, cfg.seed, cfg.init_scheme, cfg.init_log_std)
        return cls(layout, params, AdamState.fresh(params), state)

    def policy(self) -> DiagGaussianPolicy:
        return DiagGaussianPolicy.from_network(self.params, self.input_state)


@dataclass
class EpisodeBatch:
    episode_index: int
    raw_actions: np.ndarray
    physical_actions: np.ndarray
    logp_old: np.ndarray
    rewards: np.ndarray
    advantages: np.ndarray
    fell_back: np.ndarray

    def __len__(self):
        return len(self.rewards)


@dataclass
class StepInfo:
    """Passed to the ``on_step`` hook after every optimizer step."""

    episode: int
    epoch: int
    step: int
    indices: np.ndarray
    ratios: np.ndarray
    objective: float


@dataclass
class RunHistory:
    """Per-episode samples plus wall-clock time.

    ``raw_actions[k]`` and ``physical_actions[k]`` are ``(n_envs, d)``;
    ``rewards[k]`` and ``advantages[k]`` are ``(n_envs,)``.
    """

    raw_actions: list[np.ndarray] = field(default_factory=list)
    physical_actions: list[np.ndarray] = field(default_factory=list)
    rewards: list[np.ndarray] = field(default_factory=list)
    advantages: list[np.ndarray] = field(default_factory=list)
    elapsed_s: list[float] = field(default_factory=list)
    start_episode: int = 0

    def __len__(self):
        return len(self.rewards)

    def append(self, batch: EpisodeBatch, elapsed: float):
        self.raw_actions.append(batch.raw_actions)
        self.physical_actions.append(batch.physical_actions)
        self.rewards.append(batch.rewards)
        self.advantages.append(batch.advantages)
        self.elapsed_s.append(float(elapsed))

    @property
    def mean_rewards(self) -> np.ndarray:
        return np.array([r.mean() for r in self.rewards])

    @property
    def mean_actions(self) -> np.ndarray:
        return np.array([a.mean(axis=0) for a in self.physical_actions])

    @property
    def moving_avg(self) -> np.ndarray:
        return moving_average(self.mean_rewards)

    def same_samples(self, other: "RunHistory") -> bool:
        """Equality of everything except wall-clock time."""
        if len(self) != len(other) or self.start_episode != other.start_episode:
            return False
        pairs = zip(
            self.raw_actions + self.physical_actions + self.rewards + self.advantages,
            other.raw_actions + other.physical_actions + other.rewards + other.advantages,
        )
        return all(np.array_equal(a, b) for a, b in pairs)

    def __eq__(self, other):
        if not isinstance(other, RunHistory):
            return NotImplemented
        return self.same_samples(other) and self.elapsed_s == other.elapsed_s

    # -- CSV ---------------------------------------------------------------

    def write_csv(self, history_path, summary_path=None):
        """Per-sample log plus an optional per-episode summary.

        Floats are written with ``repr`` so reading back is exact.
        """
        d = self.raw_actions[0].shape[1] if self.raw_actions else 0
        header = (["episode", "env"] + [f"raw_action_{i}" for i in range(d)]
                  + [f"phys_action_{i}" for i in range(d)] + ["reward", "advantage"])
        with open(history_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k in range(len(self)):
                ep = self.start_episode + k
                for j in range(len(self.rewards[k])):
                    w.writerow([ep, j, *map(repr, self.raw_actions[k][j].tolist()),
                                *map(repr, self.physical_actions[k][j].tolist()),
                                repr(float(self.rewards[k][j])), repr(float(self.advantages[k][j]))])
        if summary_path is not None:
            mr, ma = self.mean_rewards, self.moving_avg
            with open(summary_path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["episode", "mean_reward", "moving_avg", "elapsed_s"])
                for k in range(len(self)):
                    w.writerow([self.start_episode + k, repr(float(mr[k])), repr(float(ma[k])),
                                repr(self.elapsed_s[k])])

    @classmethod
    def read_csv(cls, history_path, summary_path=None) -> "RunHistory":
        with open(history_path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, rows = rows[0], rows[1:]
        d = sum(1 for h in header if h.startswith("raw_action_"))
        episodes: dict[int, list] = {}
        for row in rows:
            episodes.setdefault(int(row[0]), []).append([float(v) for v in row[2:]])
        hist = cls(start_episode=min(episodes) if episodes else 0)
        for ep in sorted(episodes):
            arr = np.array(episodes[ep], dtype=float)
            hist.raw_actions.append(arr[:, :d])
            hist.physical_actions.append(arr[:, d:2 * d])
            hist.rewards.append(arr[:, 2 * d])
            hist.advantages.append(arr[:, 2 * d + 1])
        if summary_path is not None:
            with open(summary_path, newline="") as fh:
                srows = list(csv.reader(fh))[1:]
            hist.elapsed_s = [float(r[3]) for r in srows]
        else:
            hist.elapsed_s = [0.0] * len(hist)
        return hist


@dataclass
class OptimumReport:
    value: float
    spread: float
    actions: np.ndarray
    action_spread: np.ndarray

    def to_dict(self) -> dict:
        return {"value": self.value, "spread": self.spread,
                "actions": self.actions.tolist(), "action_spread": self.action_spread.tolist()}


# -- building blocks --------------------------------------------------------

def whiten(rewards) -> np.ndarray:
    """Zero-mean, unit population-variance copy of ``rewards``.

    A batch with no spread maps to all zeros. So does a spread at the
    rounding level of the rewards themselves (e.g. identical large values
    whose computed mean is off by one ulp).
    """
    r = np.asarray(rewards, dtype=float)
    if r.size == 0:
        raise ValueError("cannot whiten an empty reward vector")
    centered = r - r.mean()
    std = np.sqrt(np.mean(centered ** 2))
    if std < WHITEN_EPS or std <= _ROUNDING_SPREAD * np.max(np.abs(r)):
        return np.zeros_like(r)
    adv = centered / std
    # one correction pass pins mean and std to rounding level
    adv -= adv.mean()
    return adv / np.sqrt(np.mean(adv ** 2))


def moving_average(history, window: int = MOVING_AVERAGE_WINDOW) -> np.ndarray:
    """Trailing mean over the last ``window`` entries (fewer at the start)."""
    h = np.asarray(history, dtype=float)
    return np.array([h[max(0, k - window + 1):k + 1].mean() for k in range(h.size)])


def _rms_about_mean(x, axis=0):
    x = np.asarray(x, dtype=float)
    return np.sqrt(np.mean((x - x.mean(axis=axis)) ** 2, axis=axis))


def report_optimum(history: RunHistory, last: int = REPORT_EPISODES) -> OptimumReport:
    """Converged optimum: averages over the last ``last`` episodes.

    Spreads are the rms deviation of the moving-average series over the same
    episodes.
    """
    if len(history) < last:
        raise InsufficientHistoryError(f"need at least {last} episodes, have {len(history)}")
    value = float(history.mean_rewards[-last:].mean())
    spread = float(_rms_about_mean(history.moving_avg[-last:]))
    acts = history.mean_actions
    actions = acts[-last:].mean(axis=0)
    ma_acts = np.column_stack([moving_average(acts[:, i]) for i in range(acts.shape[1])])
    action_spread = _rms_about_mean(ma_acts[-last:], axis=0)
    return OptimumReport(value, spread, actions, action_spread)


def run_episode(agent: Agent, envs, cfg: TrainerConfig, rng: np.random.Generator,
                episode_index: int = 0, dispatch_mode: str = "sequential",
                timeout: float | None = None) -> EpisodeBatch:
    """Sample one action per environment, collect the rewards and whiten them."""
    if len(envs) != cfg.n_envs:
        raise ValueError(f"expected {cfg.n_envs} environments, got {len(envs)}")
    spec: ActionSpec = envs[0].action_spec
    policy = agent.policy()
    raw = np.array([sample(policy, rng) for _ in range(cfg.n_envs)])
    logp = log_prob_batch(policy, raw)
    physical = np.array([map_action(env.action_spec, clip_raw(a)) for env, a in zip(envs, raw)])
    if physical.shape[1] != spec.dim:
        raise ValueError("environment action dimension does not match the policy")
    outcomes = dispatch_outcomes(list(physical), envs, dispatch_mode, timeout, episode_index)
    rewards = np.array([o.reward for o in outcomes], dtype=float)
    fell_back = np.array([o.fell_back for o in outcomes], dtype=bool)
    return EpisodeBatch(episode_index, raw, physical, logp, rewards, whiten(rewards), fell_back)


def clip_grad_norm(grads: NetworkParams, max_norm: float) -> NetworkParams:
    """Rescale ``grads`` so their global L2 norm is at most ``max_norm``."""
    norm = float(np.linalg.norm(grads.flatten()))
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return grads.map(lambda a: a * scale)


def update(agent: Agent, batch: EpisodeBatch, cfg: TrainerConfig, rng: np.random.Generator,
           on_step: Callable[[StepInfo], None] | None = None) -> Agent:
    """Mini-batch Adam ascent on the clipped surrogate for ``n_epochs`` passes.

    ``logp_old`` stays fixed at its sampling-time value for every pass.
    """
    n = len(batch)
    if n == 0:
        raise ValueError("batch must be non-empty")
    params, adam = agent.params, agent.adam
    samples = list(zip(batch.raw_actions, batch.logp_old, batch.advantages))
    step = 0
    try:
        for epoch in range(cfg.n_epochs):
            order = rng.permutation(n)
            for start in range(0, n, cfg.minibatch_size):
                idx = order[start:start + cfg.minibatch_size]
                mb = [samples[i] for i in idx]
                if on_step is not None:
                    pol = DiagGaussianPolicy.from_network(params, agent.input_state)
                    ratios = np.exp(log_prob_batch(pol, batch.raw_actions[idx]) - batch.logp_old[idx])
                objective, grads = surrogate_loss_and_grad(params, agent.input_state, mb, cfg.clip)
                if cfg.max_grad_norm is not None:
                    grads = clip_grad_norm(grads, cfg.max_grad_norm)
                params, adam = adam_step(params, grads, adam, cfg.learning_rate, maximize=True)
                if on_step is not None:
                    on_step(StepInfo(batch.episode_index, epoch, step, idx, ratios, objective))
                step += 1
    except DivergedUpdateError as exc:
        raise DivergedUpdateError(str(exc), episode=batch.episode_index) from exc
    return replace(agent, params=params, adam=adam)


# -- the training loop ------------------------------------------------------

class Trainer:
    """Stateful driver around :func:`run_episode` and :func:`update`.

    Owns the agent, both random streams and the history, and can be
    checkpointed between episodes and resumed bit-for-bit.
    """

    def __init__(self, cfg: TrainerConfig, envs, dispatch_mode: str = "sequential",
                 timeout: float | None = None, output_dir=None, on_step=None):
        self.cfg = cfg
        self.envs = list(envs)
        if len(self.envs) != cfg.n_envs:
            raise ValueError(f"expected {cfg.n_envs} environments, got {len(self.envs)}")
        self.dispatch_mode = dispatch_mode
        self.timeout = timeout
        self.output_dir = None if output_dir is None else Path(output_dir)
        self.on_step = on_step
        self.agent = Agent.create(self.envs[0].action_spec.dim, cfg)
        self.sample_rng = np.random.default_rng([cfg.seed, _SAMPLE_STREAM])
        self.shuffle_rng = np.random.default_rng([cfg.seed, _SHUFFLE_STREAM])
        self.history = RunHistory()
        self.episode = 0
        self.optimizer_steps = 0

    def step(self) -> EpisodeBatch:
        t0 = time.perf_counter()
        batch = run_episode(self.agent, self.envs, self.cfg, self.sample_rng, self.episode,
                            self.dispatch_mode, self.timeout)
        self.agent = update(self.agent, batch, self.cfg, self.shuffle_rng, self._count_step)
        self.history.append(batch, time.perf_counter() - t0)
        logger.debug("episode %d: mean reward %.6g", self.episode, batch.rewards.mean())
        self.episode += 1
        return batch

    def _count_step(self, info: StepInfo):
        self.optimizer_steps += 1
        if self.on_step is not None:
            self.on_step(info)

    def run(self, n_episodes: int | None = None) -> RunHistory:
        n = self.cfg.n_episodes if n_episodes is None else n_episodes
        try:
            for _ in range(n):
                self.step()
                if self.output_dir is not None and self.episode % self.cfg.checkpoint_every == 0:
                    self.save_checkpoint()
        finally:
            if self.output_dir is not None:
                self.flush()
        if self.output_dir is not None and n > 0 and self.episode % self.cfg.checkpoint_every != 0:
            self.save_checkpoint()
        return self.history

    # -- persistence -------------------------------------------------------

    def checkpoint_dict(self) -> dict:
        extra = {
            "episode": self.episode,
            "optimizer_steps": self.optimizer_steps,
            "input_state": self.agent.input_state.tolist(),
            "sample_rng": self.sample_rng.bit_generator.state,
            "shuffle_rng": self.shuffle_rng.bit_generator.state,
            "trainer": self.cfg.to_dict(),
        }
        return checkpoint_to_dict(self.agent.layout, self.agent.params, self.agent.adam, extra)

    def save_checkpoint(self, path=None) -> Path:
        if path is None:
            self.output_dir.mkdir(parents=True, exist_ok=True)
            path = self.output_dir / f"ckpt_ep{self.episode}.json"
        path = Path(path)
        path.write_text(json.dumps(self.checkpoint_dict()))
        return path

    def load_checkpoint(self, path):
        """Restore agent, random streams and episode counter from ``path``.

        History recorded before the checkpoint is not restored; new episodes
        are appended with their absolute episode numbers.
        """
        layout, params, adam, extra = checkpoint_from_dict(json.loads(Path(path).read_text()))
        state = np.array(extra["input_state"], dtype=float)
        self.agent = Agent(layout, params, adam, state)
        self.sample_rng.bit_generator.state = extra["sample_rng"]
        self.shuffle_rng.bit_generator.state = extra["shuffle_rng"]
        self.episode = int(extra["episode"])
        self.optimizer_steps = int(extra.get("optimizer_steps", 0))
        self.history = RunHistory(start_episode=self.episode)

    def flush(self):
        if self.output_dir is None:
            return
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.history.write_csv(self.output_dir / "history.csv", self.output_dir / "summary.csv")


def train(cfg: TrainerConfig, env_factory: Callable[[int], Environment], *,
          dispatch_mode: str = "sequential", timeout: float | None = None, output_dir=None,
          on_step=None, close_envs: bool = True) -> tuple[Agent, RunHistory]:
    """Run ``cfg.n_episodes`` episodes; ``env_factory(i)`` builds the env for slot ``i``."""
    envs = [env_factory(i) for i in range(cfg.n_envs)]
    try:
        trainer = Trainer(cfg, envs, dispatch_mode, timeout, output_dir, on_step)
        history = trainer.run()
        return trainer.agent, history
    finally:
        if close_envs:
            for env in envs:
                env.close()
