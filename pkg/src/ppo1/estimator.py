"""scikit-learn style wrapper around the trainer."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .envs import Environment, clip_raw, map_action
from .policy import ClipConfig
from .surrogates import make_surrogate
from .trainer import TrainerConfig, report_optimum, train


def _env_factory(env):
    """Accept a builtin name, a slot -> Environment callable, or one Environment.

    A single instance is shared by every slot, so it must be safe to call
    from several threads under concurrent dispatch.
    """
    if isinstance(env, str):
        make_surrogate(env)  # unknown names fail here, not inside train()
        return lambda i: make_surrogate(env)
    if isinstance(env, Environment):
        return lambda i: env
    if callable(env):
        return env
    raise TypeError(f"expected an Environment, a builtin name or a factory, got {type(env).__name__}")


class SingleStepPPO(BaseEstimator):
    """Find the reward-maximising open-loop action of an environment.

    ``fit`` trains against the environment (``X``); there is no target.
    After fitting, ``predict`` gives the policy's deterministic physical
    action and ``optimum_`` the converged optimum averaged over the last
    episodes.

    Examples
    --------
    >>> est = SingleStepPPO(n_episodes=20, seed=0).fit("naca")
    >>> round(float(est.predict()[0]))
    50
    """

    def __init__(self, n_episodes=20, n_envs=8, n_epochs=32, minibatch_size=4, learning_rate=5e-3,
                 clip_range=0.3, objective_mode="standard_clip", entropy_coef=0.0, hidden_sizes=(4, 4),
                 max_grad_norm=0.5, seed=0, dispatch_mode="sequential", timeout=None):
        self.n_episodes = n_episodes
        self.n_envs = n_envs
        self.n_epochs = n_epochs
        self.minibatch_size = minibatch_size
        self.learning_rate = learning_rate
        self.clip_range = clip_range
        self.objective_mode = objective_mode
        self.entropy_coef = entropy_coef
        self.hidden_sizes = hidden_sizes
        self.max_grad_norm = max_grad_norm
        self.seed = seed
        self.dispatch_mode = dispatch_mode
        self.timeout = timeout

    def _trainer_config(self) -> TrainerConfig:
        return TrainerConfig(
            n_episodes=self.n_episodes, n_envs=self.n_envs, n_epochs=self.n_epochs,
            minibatch_size=self.minibatch_size, learning_rate=self.learning_rate,
            clip=ClipConfig(self.clip_range, self.objective_mode, self.entropy_coef),
            seed=self.seed, hidden_sizes=tuple(self.hidden_sizes), max_grad_norm=self.max_grad_norm,
        )

    def fit(self, X, y=None):
        cfg = self._trainer_config()
        factory = _env_factory(X)
        n_steps = []
        agent, history = train(cfg, factory, dispatch_mode=self.dispatch_mode, timeout=self.timeout,
                               on_step=n_steps.append, close_envs=not isinstance(X, Environment))
        self.agent_ = agent
        self.history_ = history
        self.n_optimizer_steps_ = len(n_steps)
        probe = factory(0)
        self.action_spec_ = probe.action_spec
        if not isinstance(X, Environment):
            probe.close()
        self.env_ = X
        self.optimum_ = report_optimum(history) if len(history) >= 5 else None
        return self

    def predict(self, X=None) -> np.ndarray:
        """Physical action at the policy mean (``X`` is ignored)."""
        check_is_fitted(self, "agent_")
        return map_action(self.action_spec_, clip_raw(self.agent_.policy().mean))

    def score(self, X=None, y=None) -> float:
        """Reward of :meth:`predict` on ``X`` (default: the fitted environment)."""
        check_is_fitted(self, "agent_")
        env_factory = _env_factory(self.env_ if X is None else X)
        env = env_factory(0)
        try:
            return float(env.evaluate(self.predict()))
        finally:
            if not isinstance(self.env_ if X is None else X, Environment):
                env.close()
