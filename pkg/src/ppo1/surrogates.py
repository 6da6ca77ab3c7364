"""Analytic reward landscapes standing in for the flow-control simulations.

Each constructor picks a closed-form shape and solves for its free constants
so that a handful of reference points (optima, uncontrolled values) are hit
exactly. Rewards are vectorized: ``reward_fn`` accepts an array whose last
axis is the physical action and returns an array of rewards.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .envs import ActionSpec, DimensionMap, Environment
from .exceptions import InfeasibleActionError, OracleBudgetError

ANCHOR_TOL = 1e-9
ORACLE_BUDGET = 10 ** 8
_CHUNK = 2 ** 20


@dataclass(frozen=True)
class Anchor:
    point: tuple[float, ...]
    value: float
    provenance: str = ""


@dataclass
class OracleResult:
    argmax: np.ndarray
    value: float
    grid_resolution: int

    def to_dict(self) -> dict:
        return {"argmax": self.argmax.tolist(), "value": self.value,
                "grid_resolution": self.grid_resolution}


class SurrogateEnv(Environment):
    """Closed-form environment with declared optima.

    ``optima`` lists the known maximizers (several when the landscape is
    symmetric); ``optimum_mask`` flags the coordinates that are pinned down,
    the others being free (flat directions). The constructor checks every
    calibration anchor against ``reward_fn``.
    """

    def __init__(self, name, action_spec, reward_fn, calibration=(), optima=(),
                 optimum_value=None, optimum_mask=None, fallback_reward=0.0, feasible=None,
                 params=None):
        super().__init__(name, action_spec, fallback_reward)
        self.reward_fn = reward_fn
        self.calibration = list(calibration)
        self.optima = [np.asarray(p, dtype=float) for p in optima]
        self.optimum_value = optimum_value
        self.optimum_mask = (np.ones(action_spec.dim, dtype=bool) if optimum_mask is None
                             else np.asarray(optimum_mask, dtype=bool))
        self.feasible = feasible
        self.params = dict(params or {})
        self.oracle_argmax = None
        self.check_calibration()

    def check_calibration(self):
        for a in self.calibration:
            got = float(self.reward_fn(np.asarray(a.point, dtype=float)))
            if abs(got - a.value) > ANCHOR_TOL:
                raise AssertionError(f"{self.name}: anchor {a.point} gives {got!r}, expected {a.value!r}")

    def evaluate(self, physical):
        physical = np.asarray(physical, dtype=float)
        if self.feasible is not None and not self.feasible(physical):
            raise InfeasibleActionError(f"{self.name}: infeasible action {physical.tolist()}")
        return float(self.reward_fn(physical))

    def distance_to_optimum(self, point) -> float:
        """Euclidean distance from ``point`` to the closest declared optimum, pinned coordinates only."""
        p = np.asarray(point, dtype=float)[self.optimum_mask]
        return min(float(np.linalg.norm(p - o[self.optimum_mask])) for o in self.optima)


def _gauss(u):
    return np.exp(-u * u)


# -- generic benchmark ----------------------------------------------------------

def sphere(d: int = 2, center=None) -> SurrogateEnv:
    """Negative squared distance to ``center`` on [-1, 1]^d."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if center is None:
        center = [0.3 if i % 2 == 0 else -0.5 for i in range(d)]
    c = np.asarray(center, dtype=float)
    if c.shape != (d,) or np.any(np.abs(c) >= 1):
        raise ValueError("center must be an interior point of [-1, 1]^d")

    def reward(x):
        x = np.asarray(x, dtype=float)
        return -np.sum((x - c) ** 2, axis=-1)

    spec = ActionSpec(tuple(DimensionMap.symmetric(1.0, label=f"x{i}") for i in range(d)))
    return SurrogateEnv(
        f"sphere{d}" if d != 2 else "sphere", spec, reward,
        calibration=[Anchor(tuple(c), 0.0, "maximum by construction")],
        optima=[c], optimum_value=0.0, fallback_reward=-4.0 * d,
        params={"d": d, "center": c.tolist()},
    )


# -- single-parameter optimization cases ----------------------------------------

NACA_ALPHA_OPT = 50.6
NACA_LIFT_OPT = 0.94


def naca_lift_env() -> SurrogateEnv:
    """Mean lift against angle of attack, an odd sine with its peak at 50.6 deg."""
    period = 4.0 * NACA_ALPHA_OPT

    def reward(x):
        alpha = np.asarray(x, dtype=float)[..., 0]
        return NACA_LIFT_OPT * np.sin(2.0 * np.pi * alpha / period)

    spec = ActionSpec((DimensionMap.symmetric(90.0, label="alpha", unit="deg"),))
    return SurrogateEnv(
        "naca", spec, reward,
        calibration=[Anchor((NACA_ALPHA_OPT,), NACA_LIFT_OPT, "DNS optimum, Re=100"),
                     Anchor((0.0,), 0.0, "symmetric profile")],
        optima=[(NACA_ALPHA_OPT,)], optimum_value=NACA_LIFT_OPT, fallback_reward=0.0,
    )


TANDEM_GLOBAL = (2.35, 1.99)
TANDEM_LOCAL = (6.25, 1.36)
TANDEM_GLOBAL_WIDTH = 0.15
TANDEM_LOCAL_WIDTH = 1.0


def tandem_lift_env() -> SurrogateEnv:
    """Rms lift against gap: a sharp global peak and a broad local one."""
    (g1, v1), (g2, v2) = TANDEM_GLOBAL, TANDEM_LOCAL
    w1, w2 = TANDEM_GLOBAL_WIDTH, TANDEM_LOCAL_WIDTH
    # total(G) = b + v1 * k1(G) + h * k2(G); solve for (b, h) at both peaks
    k1 = lambda g: _gauss((g - g1) / w1)
    k2 = lambda g: _gauss((g - g2) / w2)
    a = np.array([[1.0, k2(g1)], [1.0, k2(g2)]])
    rhs = np.array([v1 - v1 * k1(g1), v2 - v1 * k1(g2)])
    b, h = np.linalg.solve(a, rhs)

    def reward(x):
        g = np.asarray(x, dtype=float)[..., 0]
        return b + v1 * k1(g) + h * k2(g)

    spec = ActionSpec((DimensionMap.range(0.0, 10.0, label="G"),))
    return SurrogateEnv(
        "tandem", spec, reward,
        calibration=[Anchor((g1,), v1, "global maximum, DNS Re=300"),
                     Anchor((g2,), v2, "local maximum, DNS Re=300")],
        optima=[(g1,)], optimum_value=v1, fallback_reward=float(reward(np.array([0.0]))),
        params={"baseline": float(b), "local_height": float(h), "local_optimum": g2},
    )


# -- control cylinder -----------------------------------------------------------

CONTROL_DIAMETER = 0.1
CONTROL_G_MAX = 3.0
CONTROL_THETA_MAX = 180.0

# regime -> (uncontrolled drag, [(x_center, drag at well center), ...], (x width, y width))
CONTROL_REGIMES = {
    "re40": (1.56, [(-1.29, 1.51), (1.50, 1.54)], (0.8, 0.6)),
    "re100": (1.37, [(-1.72, 1.30), (1.72, 1.35)], (0.8, 0.6)),
}


def control_position(physical):
    """(G, theta in degrees) -> Cartesian center (x_c, y_c) of the control cylinder."""
    physical = np.asarray(physical, dtype=float)
    rho = physical[..., 0] + 0.5 * (1.0 + CONTROL_DIAMETER)
    theta = np.deg2rad(physical[..., 1])
    return rho * np.cos(theta), rho * np.sin(theta)


def control_cylinder_env(regime: str = "re40", fallback_reward: float | None = None) -> SurrogateEnv:
    """Negative drag of a cylinder with a small control cylinder nearby.

    Drag is the uncontrolled value minus Gaussian wells centred on the
    horizontal centerline. The well profile is ``exp(-2 (dx/wx)^2 - 2 (y/wy)^2)``,
    so beyond one width in y a well has lost all but e^-2 of its depth.
    Gaps G < 0 put the two bodies inside each other and are infeasible.
    """
    if regime not in CONTROL_REGIMES:
        raise ValueError(f"unknown regime {regime!r}, expected one of {sorted(CONTROL_REGIMES)}")
    uncontrolled, wells, (wx, wy) = CONTROL_REGIMES[regime]
    centers = np.array([w[0] for w in wells])
    targets = np.array([w[1] for w in wells])

    def kernel(x, y, xc):
        return np.exp(-2.0 * ((x - xc) / wx) ** 2 - 2.0 * (y / wy) ** 2)

    # depths such that drag at every well center equals its target
    k = np.array([[kernel(xi, 0.0, xj) for xj in centers] for xi in centers])
    depths = np.linalg.solve(k, uncontrolled - targets)

    def drag(x, y):
        out = uncontrolled
        for xc, dep in zip(centers, depths):
            out = out - dep * kernel(x, y, xc)
        return out

    def reward(p):
        x, y = control_position(p)
        return -drag(x, y)

    rho_min = 0.5 * (1.0 + CONTROL_DIAMETER)

    def to_physical(xc):
        return (abs(xc) - rho_min, 180.0 if xc < 0 else 0.0)

    spec = ActionSpec((DimensionMap.range(0.0, CONTROL_G_MAX, label="G"),
                       DimensionMap.range(0.0, CONTROL_THETA_MAX, label="theta", unit="deg")))
    best = int(np.argmin(targets))
    return SurrogateEnv(
        f"control_cylinder_{regime}", spec, reward,
        calibration=[Anchor(to_physical(c), -t, f"centerline well at x_c={c}") for c, t in zip(centers, targets)],
        optima=[to_physical(centers[best])], optimum_value=float(-targets[best]),
        fallback_reward=-uncontrolled if fallback_reward is None else fallback_reward,
        feasible=lambda p: bool(p[0] >= 0.0),
        params={"regime": regime, "uncontrolled": uncontrolled, "depths": depths.tolist(),
                "widths": [wx, wy]},
    )


# -- fluidic pinball ------------------------------------------------------------

PINBALL_OMEGA_MAX = 5.0
PINBALL_UNCONTROLLED = 2.91
PINBALL_STEADY_DRAG = 1.17
PINBALL_OMEGA_OPT = (0.34, -2.49, 2.44)
PINBALL_DRAG_FLOOR = 1.0


def pinball_mirror(omega):
    """Top/bottom reflection (w1, w2, w3) -> (-w1, -w3, -w2)."""
    omega = np.asarray(omega, dtype=float)
    return np.stack([-omega[..., 0], -omega[..., 2], -omega[..., 1]], axis=-1)


def actuation_cost(omega):
    return np.sum(np.abs(np.asarray(omega, dtype=float)) ** 3, axis=-1)


def pinball_steady_env(beta: float = 0.025) -> SurrogateEnv:
    """Compound drag/cost reward under constant rotation of the three cylinders.

    The drag surrogate is a bowl around the reported optimum and its mirror
    image, tilted by the cost term so that the reward (not just the drag)
    peaks at the reported rotation rates:

        D_raw(w) = D* + beta (C(w*) - C(w)) + k min(|w - w*|^2, |w - w*_m|^2)

    clamped to [floor, uncontrolled]; k is set by D(0) = uncontrolled.
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    opt = np.asarray(PINBALL_OMEGA_OPT)
    opt_m = pinball_mirror(opt)
    cost_opt = float(actuation_cost(opt))
    k = (PINBALL_UNCONTROLLED - PINBALL_STEADY_DRAG - beta * cost_opt) / float(opt @ opt)
    if k <= 0:
        raise ValueError(f"beta={beta} is too large to calibrate the pinball surrogate")

    def drag(w):
        w = np.asarray(w, dtype=float)
        d2 = np.minimum(np.sum((w - opt) ** 2, axis=-1), np.sum((w - opt_m) ** 2, axis=-1))
        raw = PINBALL_STEADY_DRAG + beta * (cost_opt - actuation_cost(w)) + k * d2
        return np.clip(raw, PINBALL_DRAG_FLOOR, PINBALL_UNCONTROLLED)

    def reward(w):
        return -drag(w) - beta * actuation_cost(w)

    r_opt = -PINBALL_STEADY_DRAG - beta * cost_opt
    spec = ActionSpec(tuple(DimensionMap.symmetric(PINBALL_OMEGA_MAX, label=f"omega{i + 1}") for i in range(3)))
    env = SurrogateEnv(
        "pinball_steady", spec, reward,
        calibration=[Anchor(tuple(opt), r_opt, "optimal rotation, drag 1.17"),
                     Anchor(tuple(opt_m), r_opt, "mirror of the optimum"),
                     Anchor((0.0, 0.0, 0.0), -PINBALL_UNCONTROLLED, "uncontrolled drag 2.91")],
        optima=[opt, opt_m], optimum_value=r_opt, fallback_reward=-PINBALL_UNCONTROLLED,
        params={"beta": beta, "curvature": k},
    )
    env.drag = drag
    return env


PINBALL_PERIODIC_OMEGA = 2.47
PINBALL_PERIODIC_REDUCTION = 0.20
PINBALL_LAMBDA = (0.5, 4.0)


def pinball_periodic_env(beta: float = 0.025) -> SurrogateEnv:
    """Reward under periodic counter-rotation (amplitude w, frequency ratio lam).

    Drag falls as ``0.20 (w / 2.47)^3 g(lam)`` with ``g`` rising linearly
    from 0 at lam=0.5 to 1 at lam=4, floored at 1.0. The reduction grows like
    the cost, which keeps w = 0 optimal for beta = 0.025.
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    lam_lo, lam_hi = PINBALL_LAMBDA

    def drag(p):
        p = np.asarray(p, dtype=float)
        w, lam = p[..., 0], p[..., 1]
        g = np.clip((lam - lam_lo) / (lam_hi - lam_lo), 0.0, 1.0)
        reduction = PINBALL_PERIODIC_REDUCTION * (w / PINBALL_PERIODIC_OMEGA) ** 3 * g
        return np.maximum(PINBALL_UNCONTROLLED * (1.0 - reduction), PINBALL_DRAG_FLOOR)

    def reward(p):
        w = np.asarray(p, dtype=float)[..., 0]
        return -drag(p) - 2.0 * beta * np.abs(w) ** 3

    spec = ActionSpec((DimensionMap.range(0.0, PINBALL_OMEGA_MAX, label="omega"),
                       DimensionMap.range(lam_lo, lam_hi, label="f/f0")))
    env = SurrogateEnv(
        "pinball_periodic", spec, reward,
        calibration=[Anchor((0.0, lam_lo), -PINBALL_UNCONTROLLED, "no actuation"),
                     Anchor((0.0, lam_hi), -PINBALL_UNCONTROLLED, "no actuation")],
        optima=[(0.0, 0.5 * (lam_lo + lam_hi))], optimum_value=-PINBALL_UNCONTROLLED,
        optimum_mask=[True, False], fallback_reward=-PINBALL_UNCONTROLLED,
        params={"beta": beta},
    )
    env.drag = drag
    return env


# -- registry and oracle --------------------------------------------------------

BUILTIN_SURROGATES = {
    "sphere": lambda **kw: sphere(**{"d": 2, **kw}),
    "sphere1": lambda **kw: sphere(**{"d": 1, **kw}),
    "naca": naca_lift_env,
    "tandem": tandem_lift_env,
    "control_cylinder_re40": lambda **kw: control_cylinder_env("re40", **kw),
    "control_cylinder_re100": lambda **kw: control_cylinder_env("re100", **kw),
    "pinball_steady": pinball_steady_env,
    "pinball_periodic": pinball_periodic_env,
}


def make_surrogate(name: str, **kwargs) -> SurrogateEnv:
    try:
        factory = BUILTIN_SURROGATES[name]
    except KeyError:
        raise ValueError(f"unknown surrogate {name!r}; choose from {sorted(BUILTIN_SURROGATES)}") from None
    return factory(**kwargs)


def grid_oracle(env: SurrogateEnv, points_per_dim: int, budget: int = ORACLE_BUDGET) -> OracleResult:
    """Exhaustive search over a regular grid spanning the physical action box.

    Ties resolve to the first grid point in C order.
    """
    if points_per_dim < 2:
        raise ValueError("points_per_dim must be >= 2")
    d = env.action_spec.dim
    total = points_per_dim ** d
    if total > budget:
        raise OracleBudgetError(f"{total} grid points exceed the budget of {budget}")
    axes = [np.linspace(lo, hi, points_per_dim) for lo, hi in env.action_spec.bounds]

    best_i, best_v = -1, -np.inf
    for start in range(0, total, _CHUNK):
        idx = np.unravel_index(np.arange(start, min(start + _CHUNK, total)), (points_per_dim,) * d)
        pts = np.stack([ax[i] for ax, i in zip(axes, idx)], axis=-1)
        vals = np.asarray(env.reward_fn(pts), dtype=float)
        j = int(np.argmax(vals))
        if vals[j] > best_v:
            best_i, best_v = start + j, float(vals[j])
    idx = np.unravel_index(best_i, (points_per_dim,) * d)
    argmax = np.array([ax[i] for ax, i in zip(axes, idx)])
    env.oracle_argmax = argmax
    return OracleResult(argmax, best_v, points_per_dim)


def oracle_json(env: SurrogateEnv, result: OracleResult) -> str:
    doc = {"env": env.name, **result.to_dict(), "labels": env.action_spec.labels}
    return json.dumps(doc, indent=2)
