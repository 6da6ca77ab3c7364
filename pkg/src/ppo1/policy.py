"""Diagonal Gaussian policy and the clipped surrogate objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, DivergedUpdateError
from .mlp import NetworkParams, ParamGradients, backward, forward

LOG_2PI = np.log(2.0 * np.pi)
MAX_LOG_RATIO = 20.0

OBJECTIVE_MODES = ("standard_clip", "paper_literal")


@dataclass(frozen=True)
class DiagGaussianPolicy:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        std = np.asarray(self.std, dtype=float)
        if mean.shape != std.shape or mean.ndim != 1:
            raise DimensionError(f"mean and std must be equal-length vectors, got {mean.shape} and {std.shape}")
        if not np.all(std > 0):
            raise ValueError("std must be strictly positive")
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean must be finite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def from_network(cls, params: NetworkParams, state) -> "DiagGaussianPolicy":
        return cls(forward(params, state), np.exp(params.log_std))

    def entropy(self) -> float:
        return float(np.sum(np.log(self.std)) + 0.5 * self.dim * (1.0 + LOG_2PI))


@dataclass(frozen=True)
class ClipConfig:
    epsilon: float = 0.3
    objective_mode: str = "standard_clip"
    entropy_coef: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"clip epsilon must lie in (0, 1), got {self.epsilon}")
        if self.objective_mode not in OBJECTIVE_MODES:
            raise ValueError(f"objective_mode must be one of {OBJECTIVE_MODES}, got {self.objective_mode!r}")


def sample(policy: DiagGaussianPolicy, rng: np.random.Generator) -> np.ndarray:
    """Draw one unclipped raw action."""
    return policy.mean + policy.std * rng.standard_normal(policy.dim)


def log_prob(policy: DiagGaussianPolicy, raw_action) -> float:
    a = np.asarray(raw_action, dtype=float)
    if a.shape != policy.mean.shape:
        raise DimensionError(f"action shape {a.shape} does not match policy dimension {policy.dim}")
    z = (a - policy.mean) / policy.std
    return float(-np.sum(0.5 * z * z + np.log(policy.std)) - 0.5 * policy.dim * LOG_2PI)


def ratio(logp_new: float, logp_old: float) -> float:
    """Importance ratio exp(logp_new - logp_old), clamped at e^20."""
    return float(np.exp(min(logp_new - logp_old, MAX_LOG_RATIO)))


def clipped_objective(r: float, advantage: float, cfg: ClipConfig = ClipConfig()) -> float:
    eps = cfg.epsilon
    if cfg.objective_mode == "paper_literal":
        return min(r, 1.0 + eps * np.sign(advantage)) * advantage
    return min(r * advantage, float(np.clip(r, 1.0 - eps, 1.0 + eps)) * advantage)


def log_prob_batch(policy: DiagGaussianPolicy, raw_actions) -> np.ndarray:
    """:func:`log_prob` of every row of ``raw_actions``."""
    a = np.asarray(raw_actions, dtype=float)
    if a.ndim != 2 or a.shape[1] != policy.dim:
        raise DimensionError(f"actions must have shape (n, {policy.dim}), got {a.shape}")
    z = (a - policy.mean) / policy.std
    return -np.sum(0.5 * z * z + np.log(policy.std), axis=1) - 0.5 * policy.dim * LOG_2PI


def _objective_terms(r: np.ndarray, adv: np.ndarray, cfg: ClipConfig) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample clipped objective and its derivative in r (zero on clipped branches)."""
    eps = cfg.epsilon
    if cfg.objective_mode == "paper_literal":
        cap = 1.0 + eps * np.sign(adv)
        obj = np.minimum(r, cap) * adv
        slope = np.where(r < cap, adv, 0.0)
    else:
        obj = np.minimum(r * adv, np.clip(r, 1.0 - eps, 1.0 + eps) * adv)
        live = np.where(adv > 0, r < 1.0 + eps, r > 1.0 - eps)
        slope = np.where(live, adv, 0.0)
    return obj, slope


def surrogate_loss_and_grad(params: NetworkParams, state, batch, cfg: ClipConfig = ClipConfig()
                            ) -> tuple[float, ParamGradients]:
    """Mean clipped objective over ``batch`` and its exact parameter gradient.

    ``batch`` is a sequence of ``(raw_action, logp_old, advantage)``. All
    samples share the single input ``state``, so the network is evaluated once.
    The returned value is to be maximized.
    """
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    policy = DiagGaussianPolicy.from_network(params, state)
    mu, sigma = policy.mean, policy.std
    actions = np.array([np.asarray(a, dtype=float) for a, _, _ in batch])
    logp_old = np.array([lp for _, lp, _ in batch], dtype=float)
    adv = np.array([x for _, _, x in batch], dtype=float)

    log_r = log_prob_batch(policy, actions) - logp_old
    r = np.exp(np.minimum(log_r, MAX_LOG_RATIO))
    obj, slope = _objective_terms(r, adv, cfg)
    # d obj / d logp = slope * r; nothing flows through the ratio clamp
    w = np.where(log_r >= MAX_LOG_RATIO, 0.0, slope * r)
    z = (actions - mu) / sigma
    g_mean = (w[:, None] * z).mean(axis=0) / sigma
    g_log_std = (w[:, None] * (z * z - 1.0)).mean(axis=0)
    loss = float(obj.mean())
    if cfg.entropy_coef:
        loss += cfg.entropy_coef * policy.entropy()
        g_log_std = g_log_std + cfg.entropy_coef

    if not (np.isfinite(loss) and np.all(np.isfinite(g_mean)) and np.all(np.isfinite(g_log_std))):
        raise DivergedUpdateError("non-finite surrogate objective or gradient")

    grads = backward(params, state, g_mean)
    grads.log_std = g_log_std
    return loss, grads
