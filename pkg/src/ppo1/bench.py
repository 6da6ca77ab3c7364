"""Multi-seed convergence benchmarks on the builtin surrogates."""

from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math
import time
from typing import Callable

import numpy as np

from .surrogates import PINBALL_OMEGA_OPT, make_surrogate, pinball_mirror
from .trainer import OptimumReport, TrainerConfig, report_optimum, train

logger = logging.getLogger(__name__)


@dataclass
class SeedOutcome:
    seed: int
    value: float
    actions: list[float]
    runtime_s: float
    passed: bool
    label: str = ""

    def to_dict(self) -> dict:
        return {"seed": self.seed, "value": self.value, "actions": self.actions,
                "runtime_s": self.runtime_s, "passed": self.passed, "label": self.label}


@dataclass
class ScenarioResult:
    name: str
    outcomes: list[SeedOutcome]
    required: int
    passed: bool
    note: str = ""

    @property
    def n_passed(self) -> int:
        return sum(o.passed for o in self.outcomes)

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        line = f"{status} {self.name}: {self.n_passed}/{len(self.outcomes)} seeds (need {self.required})"
        return f"{line}; {self.note}" if self.note else line

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "n_passed": self.n_passed,
                "required": self.required, "note": self.note,
                "seeds": [o.to_dict() for o in self.outcomes]}


@dataclass(frozen=True)
class Scenario:
    """One surrogate, one hyperparameter set and a per-seed pass rule.

    ``judge(report, runtime)`` returns ``(passed, label)``. ``quorum`` is the
    fraction of seeds that must pass; ``finish`` may override the verdict
    for scenarios judged on the whole population.
    """

    name: str
    env: str
    trainer: dict
    judge: Callable[[OptimumReport, float], tuple[bool, str]]
    default_seeds: int = 10
    quorum: float = 0.8
    finish: Callable[[list[SeedOutcome]], tuple[bool, str]] | None = None
    env_kwargs: dict = field(default_factory=dict)

    def config(self, seed: int) -> TrainerConfig:
        return TrainerConfig(seed=seed, **self.trainer)

    def run_seed(self, seed: int) -> SeedOutcome:
        cfg = self.config(seed)
        t0 = time.perf_counter()
        _, history = train(cfg, lambda i: make_surrogate(self.env, **self.env_kwargs))
        runtime = time.perf_counter() - t0
        rep = report_optimum(history)
        ok, label = self.judge(rep, runtime)
        return SeedOutcome(seed, rep.value, rep.actions.tolist(), runtime, bool(ok), label)

    def run(self, seeds=None) -> ScenarioResult:
        seeds = range(self.default_seeds) if seeds is None else seeds
        outcomes = []
        for s in seeds:
            out = self.run_seed(s)
            logger.info("%s seed %d: value %.4f actions %s %s", self.name, s, out.value,
                        np.round(out.actions, 3).tolist(), "ok" if out.passed else "miss")
            outcomes.append(out)
        required = math.ceil(self.quorum * len(outcomes) - 1e-9)
        passed = sum(o.passed for o in outcomes) >= required
        note = ""
        if self.finish is not None:
            passed, note = self.finish(outcomes)
        return ScenarioResult(self.name, outcomes, required, passed, note)


# -- pass rules ----------------------------------------------------------

NACA_ALPHA, NACA_LIFT = 50.6, 0.94
TANDEM_PEAKS = {"global": 2.35, "local": 6.25}
PINBALL_VALUE = -1.93
MAX_SEED_RUNTIME_S = 10.0


def _naca(rep, runtime):
    ok = abs(rep.actions[0] - NACA_ALPHA) <= 2.0 and abs(rep.value - NACA_LIFT) <= 0.02
    return ok and runtime < MAX_SEED_RUNTIME_S, f"alpha={rep.actions[0]:.2f}"


def _tandem(rep, runtime):
    gap = rep.actions[0]
    basin, peak = min(TANDEM_PEAKS.items(), key=lambda kv: abs(gap - kv[1]))
    return abs(gap - peak) <= 0.5, basin


def _tandem_finish(outcomes):
    near = all(o.passed for o in outcomes)
    basins = {o.label for o in outcomes if o.passed}
    frac = sum(o.label == "global" for o in outcomes) / max(len(outcomes), 1)
    note = f"fraction at the global peak {frac:.2f}; basins reached {sorted(basins)}"
    return near and basins == set(TANDEM_PEAKS), note


def pinball_distance(actions) -> float:
    w = np.asarray(actions, dtype=float)
    opt = np.array(PINBALL_OMEGA_OPT)
    return float(min(np.linalg.norm(w - opt), np.linalg.norm(w - pinball_mirror(opt))))


def _pinball_steady(rep, runtime):
    d = pinball_distance(rep.actions)
    return abs(rep.value - PINBALL_VALUE) <= 0.05 and d <= 0.3, f"distance={d:.3f}"


def _pinball_periodic(rep, runtime):
    return rep.actions[0] < 0.3, f"omega={rep.actions[0]:.3f}"


NACA = Scenario("naca", "naca", dict(n_envs=8, n_epochs=32, minibatch_size=4, n_episodes=20), _naca)
TANDEM = Scenario("tandem", "tandem", dict(n_envs=16, n_epochs=32, minibatch_size=4, n_episodes=20),
                  _tandem, default_seeds=20, quorum=1.0, finish=_tandem_finish)
PINBALL_STEADY = Scenario("pinball_steady", "pinball_steady",
                          dict(n_envs=8, n_epochs=32, minibatch_size=2, n_episodes=120), _pinball_steady)
PINBALL_PERIODIC = Scenario("pinball_periodic", "pinball_periodic",
                            dict(n_envs=8, n_epochs=32, minibatch_size=2, n_episodes=40), _pinball_periodic)

SUITES = {"default": (NACA, TANDEM, PINBALL_STEADY, PINBALL_PERIODIC)}


def run_suite(name: str = "default", seeds: int | None = None, only=None) -> list[ScenarioResult]:
    try:
        scenarios = SUITES[name]
    except KeyError:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}") from None
    if only:
        unknown = set(only) - {s.name for s in scenarios}
        if unknown:
            raise ValueError(f"unknown scenarios {sorted(unknown)}")
        scenarios = [s for s in scenarios if s.name in only]
    return [s.run(None if seeds is None else range(seeds)) for s in scenarios]
