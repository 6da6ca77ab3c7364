import io
import json
import logging
import sys
import time

import numpy as np
import pytest

from ppo1.envs import ActionSpec, DimensionMap, Environment, evaluate_outcome
from ppo1.exceptions import ConfigError, EvaluationError
from ppo1.harness.config import (
    SEED_ENV_VAR, config_from_dict, load_config, seed_override, write_config_echo,
)
from ppo1.harness.dispatch import dispatch, dispatch_outcomes
from ppo1.harness.external import ExternalEnvironment, WorkerCrashedError, WorkerTimeoutError
from ppo1.harness.protocol import Evaluate, Handshake, Result, decode, encode
from ppo1.harness.worker import serve
from ppo1.surrogates import make_surrogate, sphere
from ppo1.trainer import TrainerConfig, train

SPHERE_SPEC = sphere(2).action_spec
WORKER = [sys.executable, "-m", "ppo1", "worker-echo", "--env", "sphere"]


class Sleepy(Environment):
    def __init__(self, seconds, reward):
        super().__init__("sleepy", ActionSpec((DimensionMap.symmetric(1.0),)), fallback_reward=-99.0)
        self.seconds, self.reward = seconds, reward

    def evaluate(self, physical):
        time.sleep(self.seconds)
        return self.reward


# -- dispatch ---------------------------------------------------------------

def test_dispatch_empty():
    assert dispatch([], []).shape == (0,)
    assert dispatch([], [], mode="concurrent").shape == (0,)


def test_dispatch_orders_by_slot_regardless_of_completion():
    envs = [Sleepy(0.2, 1.0), Sleepy(0.0, 2.0), Sleepy(0.1, 3.0)]
    acts = [np.zeros(1)] * 3
    np.testing.assert_array_equal(dispatch(acts, envs, "concurrent"), [1.0, 2.0, 3.0])


@pytest.mark.parametrize("mode", ["sequential", "concurrent"])
def test_dispatch_timeout_fills_only_that_slot(mode, caplog):
    envs = [Sleepy(0.0, 1.0), Sleepy(2.0, 2.0), Sleepy(0.0, 3.0)]
    with caplog.at_level(logging.WARNING):
        out = dispatch_outcomes([np.zeros(1)] * 3, envs, mode, timeout=0.3)
    assert [o.reward for o in out] == [1.0, -99.0, 3.0]
    assert [o.fell_back for o in out] == [False, True, False]
    assert "slot 1" in caplog.text


def test_dispatch_validates_arguments():
    env = Sleepy(0.0, 1.0)
    with pytest.raises(ValueError):
        dispatch([np.zeros(1)], [env, env])
    with pytest.raises(ValueError):
        dispatch([np.zeros(1)], [env], mode="mpi")
    with pytest.raises(ValueError):
        dispatch([np.zeros(1)], [env], timeout=0)


# -- worker (in-process) ----------------------------------------------------

def _talk(env, *msgs, **kw):
    stdin = io.StringIO("".join(encode(m) + "\n" for m in msgs))
    stdout = io.StringIO()
    code = serve(env, stdin, stdout, **kw)
    return code, [decode(line) for line in stdout.getvalue().splitlines()]


def test_worker_handshake_and_results():
    env = sphere(2)
    code, replies = _talk(env, Handshake(1, 2, "master"), Evaluate(0, 0, (0.3, -0.5)), Evaluate(0, 1, (0.3, 0.5)))
    assert code == 0
    assert replies[0] == Handshake(1, 2, "sphere")
    assert replies[1] == Result(0, 0, 0.0)
    assert replies[2] == Result(0, 1, env.evaluate(np.array([0.3, 0.5])))


def test_worker_reports_evaluation_errors():
    env = make_surrogate("control_cylinder_re40")
    _, replies = _talk(env, Handshake(1, 2, "m"), Evaluate(4, 2, (-0.5, 30.0)))
    assert replies[1].episode == 4 and replies[1].env_index == 2
    assert "Infeasible" in replies[1].message


def test_worker_rejects_bad_first_line():
    assert _talk(sphere(2), Evaluate(0, 0, (0.0, 0.0)))[0] == 2
    code, replies = _talk(sphere(2), Handshake(99, 2, "m"))
    assert code == 2 and replies[0].protocol_version == 1


def test_worker_exits_on_protocol_error():
    stdin = io.StringIO(encode(Handshake(1, 2, "m")) + "\n" + '{"type":"bogus"}\n')
    assert serve(sphere(2), stdin, io.StringIO()) == 2


# -- external environment ---------------------------------------------------

def test_external_environment_matches_in_process():
    env = ExternalEnvironment(WORKER, SPHERE_SPEC, name="sphere", fallback_reward=-8.0, timeout=30)
    try:
        local = sphere(2)
        for x in ([0.1, 0.2], [-0.7, 0.9], [0.3, -0.5]):
            assert env.evaluate_at(np.array(x), 0, 0) == local.evaluate(np.array(x))
        assert env.worker_name == "sphere"
    finally:
        env.close()
    assert not env.running


def test_external_timeout_restarts_worker(caplog):
    cmd = WORKER + ["--delay", "5", "--delay-episode", "1"]
    env = ExternalEnvironment(cmd, SPHERE_SPEC, fallback_reward=-8.0, timeout=0.5, handshake_timeout=30)
    try:
        assert env.evaluate_at(np.zeros(2), 0, 0) == pytest.approx(-0.34)
        with caplog.at_level(logging.WARNING):
            out = evaluate_outcome(env, np.zeros(2), episode=1, env_index=0)
        assert out.reward == -8.0 and out.fell_back
        assert "timed out" in caplog.text
        # a fresh worker answers the next episode at once
        t0 = time.monotonic()
        assert env.evaluate_at(np.zeros(2), 2, 0) == pytest.approx(-0.34)
        assert time.monotonic() - t0 < 5
    finally:
        env.close()


def test_external_rejects_dimension_mismatch():
    spec = ActionSpec((DimensionMap.symmetric(1.0),))
    env = ExternalEnvironment(WORKER, spec, fallback_reward=0.0, timeout=30)
    with pytest.raises(WorkerCrashedError, match="action_dim"):
        env.start()
    assert not env.running


def test_external_worker_that_dies():
    env = ExternalEnvironment([sys.executable, "-c", "pass"], SPHERE_SPEC, fallback_reward=-1.0, timeout=30)
    with pytest.raises(WorkerCrashedError):
        env.evaluate_at(np.zeros(2))
    assert evaluate_outcome(env, np.zeros(2)).reward == -1.0


def test_external_worker_that_stays_silent():
    cmd = [sys.executable, "-c", "import time; time.sleep(30)"]
    env = ExternalEnvironment(cmd, SPHERE_SPEC, fallback_reward=-1.0, timeout=0.3)
    with pytest.raises(WorkerTimeoutError):
        env.start()
    assert issubclass(WorkerTimeoutError, EvaluationError)


def test_training_through_workers_reproduces_in_process_history():
    cfg = TrainerConfig(n_episodes=6, n_envs=4, n_epochs=4, minibatch_size=2, seed=11)
    _, local = train(cfg, lambda i: sphere(2))
    _, remote = train(cfg, lambda i: ExternalEnvironment(WORKER, SPHERE_SPEC, "sphere", -8.0, timeout=30))
    assert remote.same_samples(local)


# -- configuration ----------------------------------------------------------

BASE = {
    "trainer": {"n_episodes": 5, "n_envs": 4, "n_epochs": 2, "minibatch_size": 2, "seed": 1},
    "environment": {"builtin": "naca"},
    "run": {"output_dir": "out"},
}


def test_config_defaults(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text('[environment]\nbuiltin = "naca"\n')
    cfg = load_config(path, environ={})
    assert cfg.trainer == TrainerConfig()
    assert cfg.dispatch_mode == "sequential"
    assert cfg.worker_timeout_s == 600


def test_config_echo_roundtrips(tmp_path):
    cfg = config_from_dict(BASE, environ={})
    echo = json.loads(write_config_echo(cfg, tmp_path).read_text())
    assert config_from_dict(echo, environ={}) == cfg


def test_seed_environment_variable():
    assert config_from_dict(BASE, environ={SEED_ENV_VAR: "42"}).trainer.seed == 42
    assert config_from_dict(BASE, environ={SEED_ENV_VAR: ""}).trainer.seed == 1
    assert seed_override({}) is None
    for bad in ("abc", "-3", "1.5"):
        with pytest.raises(ConfigError):
            seed_override({SEED_ENV_VAR: bad})


@pytest.mark.parametrize("patch", [
    {"environment": {}},
    {"environment": {"builtin": "naca", "command": ["x"]}},
    {"environment": {"builtin": "airfoil"}},
    {"environment": {"builtin": "naca", "kwargs": {"beta": 1.0}}},
    {"environment": {"command": ["worker"], "fallback_reward": 0.0}},
    {"environment": {"command": ["worker"]}, "action_spec": {"dims": [{"kind": "symmetric", "max": 1.0}]}},
    {"environment": {"builtin": "naca"}, "action_spec": {"dims": [{"kind": "wide"}]}},
    {"environment": {"builtin": "naca"}, "action_spec": {"dims": [{"kind": "symmetric", "max": 1.0}] * 2}},
    {"trainer": {"minibatch_size": 99}},
    {"trainer": {"learning_rate": -1.0}},
    {"trainer": {"batch": 3}},
    {"run": {"dispatch_mode": "mpi"}},
    {"run": {"worker_timeout_s": 0}},
    {"run": {"outdir": "x"}},
    {"extras": {}},
])
def test_bad_configs_raise_config_error(patch):
    with pytest.raises(ConfigError):
        config_from_dict({**BASE, **patch}, environ={})


def test_bad_toml(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[trainer\nseed = 1\n")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.toml")


def test_action_spec_override_and_fallback():
    doc = {**BASE, "environment": {"builtin": "naca", "fallback_reward": -0.5, "name": "wing"},
           "action_spec": {"dims": [{"kind": "symmetric", "max": 60.0, "label": "alpha"}]}}
    env = config_from_dict(doc, environ={}).env_factory()(0)
    assert env.name == "wing" and env.fallback_reward == -0.5
    np.testing.assert_array_equal(env.action_spec.bounds, [[-60.0, 60.0]])


def test_external_config_builds_worker_environments():
    doc = {**BASE, "environment": {"command": WORKER, "fallback_reward": -8.0},
           "action_spec": SPHERE_SPEC.to_dict(), "run": {"worker_timeout_s": 5}}
    env = config_from_dict(doc, environ={}).env_factory()(0)
    assert isinstance(env, ExternalEnvironment)
    assert env.timeout == 5 and env.fallback_reward == -8.0
    assert not env.running
