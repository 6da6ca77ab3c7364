import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppo1.envs import ActionSpec, DimensionMap, FunctionEnvironment
from ppo1.exceptions import DivergedUpdateError, InsufficientHistoryError
from ppo1.policy import ClipConfig
from ppo1.surrogates import make_surrogate, naca_lift_env, sphere
from ppo1.trainer import (
    Agent, EpisodeBatch, RunHistory, Trainer, TrainerConfig, moving_average, report_optimum,
    run_episode, train, update, whiten,
)


def _envs(env, n):
    return [env] * n


# -- whiten -------------------------------------------------------------------

def test_whiten_examples():
    np.testing.assert_allclose(whiten([1, 2, 3]), [-1.224745, 0, 1.224745], atol=1e-6)
    np.testing.assert_array_equal(whiten([5, 5, 5, 5]), np.zeros(4))
    np.testing.assert_array_equal(whiten([2.5]), [0.0])
    with pytest.raises(ValueError):
        whiten([])


def test_whiten_identical_large_values():
    # the computed mean of these is off by an ulp
    np.testing.assert_array_equal(whiten([699050.8770152472] * 3), np.zeros(3))


@settings(max_examples=1000, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=64))
def test_whiten_invariant(r):
    adv = whiten(r)
    assert abs(adv.mean()) < 1e-10
    std = adv.std()
    assert std == 0.0 or abs(std - 1.0) < 1e-10


# -- moving average / report ---------------------------------------------------

def test_moving_average_examples():
    np.testing.assert_allclose(moving_average([1, 2, 3]), [1, 1.5, 2])
    np.testing.assert_allclose(moving_average([0.7] * 10), [0.7] * 10)
    x = np.arange(60, dtype=float) ** 1.5
    assert moving_average(x)[59] == pytest.approx(x[10:60].mean())
    assert moving_average(x)[49] == pytest.approx(x[:50].mean())


def _history_from_means(means, actions=None):
    h = RunHistory()
    for k, m in enumerate(means):
        a = np.full((2, 1), 0.0 if actions is None else actions[k])
        h.raw_actions.append(a)
        h.physical_actions.append(a)
        h.rewards.append(np.full(2, float(m)))
        h.advantages.append(np.zeros(2))
        h.elapsed_s.append(0.0)
    return h


def test_report_optimum_constant_tail():
    rep = report_optimum(_history_from_means([0.2, 0.9, 1.53, 1.53, 1.53, 1.53, 1.53]))
    assert rep.value == pytest.approx(1.53)
    rep = report_optimum(_history_from_means([1.53] * 5))
    assert rep.value == pytest.approx(1.53)
    assert rep.spread == 0.0


def test_report_optimum_spread_is_rms_of_moving_average():
    # moving averages of [1, 1, 1, 1, 6] are [1, 1, 1, 1, 2]
    rep = report_optimum(_history_from_means([1, 1, 1, 1, 6]))
    assert rep.spread == pytest.approx(0.4)
    assert rep.value == pytest.approx(2.0)


def test_report_optimum_actions():
    rep = report_optimum(_history_from_means([0] * 6, actions=[9, 1, 2, 3, 4, 5]))
    np.testing.assert_allclose(rep.actions, [3.0])
    assert rep.action_spread.shape == (1,)


def test_report_optimum_needs_five_episodes():
    with pytest.raises(InsufficientHistoryError):
        report_optimum(_history_from_means([1, 2, 3, 4]))


# -- config -------------------------------------------------------------------

def test_config_validation_and_steps():
    assert TrainerConfig(n_envs=8, minibatch_size=2, n_epochs=32).steps_per_episode == 128
    assert TrainerConfig(n_envs=8, minibatch_size=3, n_epochs=2).steps_per_episode == 6
    for bad in ({"n_envs": 0}, {"minibatch_size": 9}, {"learning_rate": 0.0},
                {"n_epochs": -1}, {"max_grad_norm": 0.0}):
        with pytest.raises(ValueError):
            TrainerConfig(**bad)


def test_config_dict_roundtrip():
    cfg = TrainerConfig(n_episodes=3, clip=ClipConfig(0.2, "paper_literal", 0.01), input_state=(1.0, 0.0))
    assert TrainerConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        TrainerConfig.from_dict({"n_epocs": 3})


def test_default_input_state_is_zeros():
    agent = Agent.create(3, TrainerConfig())
    np.testing.assert_array_equal(agent.input_state, np.zeros(3))


# -- episodes and updates -------------------------------------------------------

def test_singleton_episode_has_zero_advantage():
    cfg = TrainerConfig(n_envs=1, minibatch_size=1)
    env = naca_lift_env()
    batch = run_episode(Agent.create(1, cfg), [env], cfg, np.random.default_rng(0))
    np.testing.assert_array_equal(batch.advantages, [0.0])


def test_run_episode_deterministic():
    cfg = TrainerConfig()
    env = sphere(2)
    a = run_episode(Agent.create(2, cfg), _envs(env, 8), cfg, np.random.default_rng(4))
    b = run_episode(Agent.create(2, cfg), _envs(env, 8), cfg, np.random.default_rng(4))
    for f in ("raw_actions", "physical_actions", "logp_old", "rewards", "advantages"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    assert len(a) == 8
    assert np.all(np.abs(a.physical_actions) <= 1)


def test_run_episode_checks_env_count():
    cfg = TrainerConfig()
    with pytest.raises(ValueError):
        run_episode(Agent.create(2, cfg), _envs(sphere(2), 3), cfg, np.random.default_rng(0))


def test_run_episode_uses_fallback_for_failures():
    spec = ActionSpec((DimensionMap.symmetric(1.0),))

    def reward(x):
        if x[0] > 0:
            raise RuntimeError("diverged")
        return float(x[0])

    env = FunctionEnvironment("half", spec, reward, fallback_reward=-7.0)
    cfg = TrainerConfig(n_envs=8)
    batch = run_episode(Agent.create(1, cfg), _envs(env, 8), cfg, np.random.default_rng(1))
    pos = batch.physical_actions[:, 0] > 0
    assert pos.any() and (~pos).any()
    np.testing.assert_array_equal(batch.rewards[pos], -7.0)
    np.testing.assert_array_equal(batch.fell_back, pos)


def _batch(cfg, env, seed=0):
    agent = Agent.create(env.action_spec.dim, cfg)
    return agent, run_episode(agent, _envs(env, cfg.n_envs), cfg, np.random.default_rng(seed))


def test_update_step_count_and_first_ratios():
    cfg = TrainerConfig(n_envs=8, minibatch_size=2, n_epochs=32)
    agent, batch = _batch(cfg, sphere(2))
    seen = []
    update(agent, batch, cfg, np.random.default_rng(0), seen.append)
    assert len(seen) == 128 == cfg.n_epochs * math.ceil(cfg.n_envs / cfg.minibatch_size)
    np.testing.assert_allclose(seen[0].ratios, 1.0, rtol=0, atol=1e-12)
    # every sample used once per epoch
    for e in range(32):
        idx = np.concatenate([s.indices for s in seen if s.epoch == e])
        assert sorted(idx.tolist()) == list(range(8))


def test_update_short_final_minibatch():
    cfg = TrainerConfig(n_envs=8, minibatch_size=3, n_epochs=2)
    agent, batch = _batch(cfg, sphere(2))
    seen = []
    update(agent, batch, cfg, np.random.default_rng(0), seen.append)
    assert [len(s.indices) for s in seen] == [3, 3, 2, 3, 3, 2]


def test_update_zero_epochs_is_identity():
    cfg = TrainerConfig(n_epochs=0)
    agent, batch = _batch(cfg, sphere(2))
    out = update(agent, batch, cfg, np.random.default_rng(0))
    assert out.params.equal(agent.params)
    assert out.adam.step_count == 0


def test_zero_advantages_leave_params_unchanged():
    spec = ActionSpec((DimensionMap.symmetric(1.0), DimensionMap.symmetric(1.0)))
    env = FunctionEnvironment("flat", spec, lambda x: 0.25)
    cfg = TrainerConfig()
    agent, batch = _batch(cfg, env)
    np.testing.assert_array_equal(batch.advantages, 0.0)
    out = update(agent, batch, cfg, np.random.default_rng(0))
    assert out.params.equal(agent.params)
    assert out.adam.step_count == cfg.steps_per_episode


def test_update_rejects_empty_batch():
    cfg = TrainerConfig()
    agent = Agent.create(1, cfg)
    empty = EpisodeBatch(0, np.zeros((0, 1)), np.zeros((0, 1)), np.zeros(0), np.zeros(0),
                         np.zeros(0), np.zeros(0, dtype=bool))
    with pytest.raises(ValueError):
        update(agent, empty, cfg, np.random.default_rng(0))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_diverged_update_carries_episode_index():
    cfg = TrainerConfig()
    agent, batch = _batch(cfg, sphere(2))
    batch.advantages = np.full(8, np.inf)
    batch.episode_index = 17
    with pytest.raises(DivergedUpdateError) as info:
        update(agent, batch, cfg, np.random.default_rng(0))
    assert info.value.episode == 17
    assert "17" in str(info.value)


# -- full runs ----------------------------------------------------------------

def test_zero_episodes_returns_fresh_agent():
    cfg = TrainerConfig(n_episodes=0)
    agent, hist = train(cfg, lambda i: sphere(2))
    assert len(hist) == 0
    assert agent.params.equal(Agent.create(2, cfg).params)


def test_training_is_deterministic():
    cfg = TrainerConfig(n_episodes=6, seed=3)
    _, a = train(cfg, lambda i: naca_lift_env())
    _, b = train(cfg, lambda i: naca_lift_env())
    assert a.same_samples(b)
    assert len(a) == 6 and len(a.elapsed_s) == 6


def test_concurrent_dispatch_matches_sequential():
    cfg = TrainerConfig(n_episodes=3, seed=1)
    _, a = train(cfg, lambda i: sphere(2))
    _, b = train(cfg, lambda i: sphere(2), dispatch_mode="concurrent")
    assert a.same_samples(b)


def test_sphere_converges_to_oracle_argmax():
    env = make_surrogate("sphere")
    _, hist = train(TrainerConfig(seed=0, n_envs=8, n_episodes=100), lambda i: env)
    rep = report_optimum(hist)
    assert np.linalg.norm(rep.actions - env.optima[0]) < 0.05


def test_moving_average_improves_on_1d_sphere():
    env = make_surrogate("sphere1")
    improved = 0
    for seed in range(100):
        _, hist = train(TrainerConfig(seed=seed, n_episodes=100), lambda i: env)
        ma = hist.moving_avg
        improved += ma[99] > ma[4]
    assert improved >= 95


def test_checkpoint_resume_is_exact(tmp_path):
    env = naca_lift_env()
    cfg = TrainerConfig(n_episodes=6, seed=11, checkpoint_every=3)
    full = Trainer(cfg, _envs(env, 8))
    full.run()

    first = Trainer(cfg, _envs(env, 8), output_dir=tmp_path)
    first.run(3)
    assert (tmp_path / "ckpt_ep3.json").exists()
    resumed = Trainer(cfg, _envs(env, 8))
    resumed.load_checkpoint(tmp_path / "ckpt_ep3.json")
    resumed.run(3)

    assert resumed.agent.params.equal(full.agent.params)
    assert resumed.agent.adam.m.equal(full.agent.adam.m)
    assert resumed.optimizer_steps == full.optimizer_steps
    assert resumed.history.start_episode == 3
    for k in range(3):
        np.testing.assert_array_equal(resumed.history.rewards[k], full.history.rewards[3 + k])
        np.testing.assert_array_equal(resumed.history.raw_actions[k], full.history.raw_actions[3 + k])


def test_run_writes_checkpoints_and_csv(tmp_path):
    cfg = TrainerConfig(n_episodes=5, checkpoint_every=2)
    _, hist = train(cfg, lambda i: naca_lift_env(), output_dir=tmp_path)
    names = sorted(p.name for p in tmp_path.glob("ckpt_ep*.json"))
    assert names == ["ckpt_ep2.json", "ckpt_ep4.json", "ckpt_ep5.json"]
    doc = json.loads((tmp_path / "ckpt_ep5.json").read_text())
    assert doc["extra"]["episode"] == 5
    assert doc["extra"]["optimizer_steps"] == 5 * cfg.steps_per_episode
    header = (tmp_path / "history.csv").read_text().splitlines()[0]
    assert header == "episode,env,raw_action_0,phys_action_0,reward,advantage"
    summary = (tmp_path / "summary.csv").read_text().splitlines()
    assert summary[0] == "episode,mean_reward,moving_avg,elapsed_s"
    assert len(summary) == 6


def test_csv_roundtrip_is_exact(tmp_path):
    _, hist = train(TrainerConfig(n_episodes=4, seed=2), lambda i: make_surrogate("pinball_steady"))
    hist.write_csv(tmp_path / "h.csv", tmp_path / "s.csv")
    back = RunHistory.read_csv(tmp_path / "h.csv", tmp_path / "s.csv")
    assert back == hist


def test_partial_history_flushed_on_error(tmp_path):
    spec = ActionSpec((DimensionMap.symmetric(1.0),))
    calls = {"n": 0}

    def reward(x):
        calls["n"] += 1
        return float(-x[0] ** 2)

    env = FunctionEnvironment("q", spec, reward)
    cfg = TrainerConfig(n_episodes=5)
    trainer = Trainer(cfg, _envs(env, 8), output_dir=tmp_path)

    original = trainer.step
    def failing_step():
        if trainer.episode == 2:
            raise RuntimeError("cluster went down")
        return original()
    trainer.step = failing_step

    with pytest.raises(RuntimeError):
        trainer.run()
    hist = RunHistory.read_csv(tmp_path / "history.csv")
    assert len(hist) == 2
