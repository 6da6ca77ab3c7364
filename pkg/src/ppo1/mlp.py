"""Small dense tanh network with hand-written backprop and Adam.

The networks used here are tiny (a couple of 4-neuron layers), so everything
is plain numpy on single input vectors. All functions are pure: updates
return new objects and never touch their arguments.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .exceptions import DimensionError, DivergedUpdateError

CHECKPOINT_VERSION = 1

_ACTIVATIONS = ("tanh", "linear")
_INIT_SCHEMES = ("xavier_uniform", "zeros")


@dataclass(frozen=True)
class NetworkLayout:
    input_dim: int
    hidden_sizes: tuple[int, ...] = (4, 4)
    output_dim: int = 1
    hidden_activation: str = "tanh"
    output_activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if not self.hidden_sizes:
            raise ValueError("hidden_sizes must be non-empty")
        if min(self.input_dim, self.output_dim, *self.hidden_sizes) < 1:
            raise ValueError(f"all layer sizes must be >= 1, got {self}")
        if self.hidden_activation != "tanh":
            raise ValueError("only tanh hidden layers are supported")
        if self.output_activation not in _ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {_ACTIVATIONS}")

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_sizes, self.output_dim]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkLayout":
        return cls(**d)


@dataclass
class NetworkParams:
    """Weights, biases and the state-independent log standard deviations.

    ``weights[k]`` has shape ``(fan_out, fan_in)``; layer ``k`` computes
    ``weights[k] @ x + biases[k]``. The same container is used for gradients.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    log_std: np.ndarray

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases, self.log_std]

    def _rebuild(self, arrays) -> "NetworkParams":
        n = len(self.weights)
        arrays = list(arrays)
        return NetworkParams(arrays[:n], arrays[n:2 * n], arrays[2 * n])

    def map(self, fn) -> "NetworkParams":
        return self._rebuild(fn(a) for a in self.arrays())

    def copy(self) -> "NetworkParams":
        return self.map(np.array)

    def zeros_like(self) -> "NetworkParams":
        return self.map(np.zeros_like)

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def unflatten(self, flat) -> "NetworkParams":
        """Return params with this object's shapes filled from ``flat``."""
        flat = np.asarray(flat, dtype=float)
        out, i = [], 0
        for a in self.arrays():
            out.append(flat[i:i + a.size].reshape(a.shape).copy())
            i += a.size
        if i != flat.size:
            raise DimensionError(f"expected {i} values, got {flat.size}")
        return self._rebuild(out)

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flatten())))

    def allclose(self, other: "NetworkParams", **kw) -> bool:
        return all(np.allclose(a, b, **kw) for a, b in zip(self.arrays(), other.arrays()))

    def equal(self, other: "NetworkParams") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


# gradients share the parameter container
ParamGradients = NetworkParams


@dataclass
class AdamState:
    m: NetworkParams
    v: NetworkParams
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def fresh(cls, params: NetworkParams, beta1=0.9, beta2=0.999, epsilon=1e-8) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like(), 0, beta1, beta2, epsilon)


def init_network(layout: NetworkLayout, seed: int, init_scheme: str = "xavier_uniform",
                 init_log_std: float = 0.0) -> NetworkParams:
    """Draw initial parameters.

    ``xavier_uniform`` samples each weight from U(-b, b) with
    b = sqrt(6 / (fan_in + fan_out)); ``zeros`` gives an all-zero network.
    Biases start at zero and every log-std entry at ``init_log_std``.
    """
    if init_scheme not in _INIT_SCHEMES:
        raise ValueError(f"unknown init_scheme {init_scheme!r}, expected one of {_INIT_SCHEMES}")
    rng = np.random.default_rng(seed)
    sizes = layout.sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        if init_scheme == "zeros":
            w = np.zeros((fan_out, fan_in))
        else:
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        weights.append(w)
        biases.append(np.zeros(fan_out))
    log_std = np.full(layout.output_dim, float(init_log_std))
    return NetworkParams(weights, biases, log_std)


def _check_input(params: NetworkParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    fan_in = params.weights[0].shape[1]
    if x.ndim != 1 or x.shape[0] != fan_in:
        raise DimensionError(f"input must be a vector of length {fan_in}, got shape {x.shape}")
    return x


def _squashed(output_activation: str | None) -> bool:
    return output_activation is None or output_activation == "tanh"


def _forward_trace(params, x, output_activation):
    acts = [x]
    n = len(params.weights)
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = w @ acts[-1] + b
        if k < n - 1 or _squashed(output_activation):
            z = np.tanh(z)
        acts.append(z)
    return acts


def forward(params: NetworkParams, x, output_activation: str | None = "tanh") -> np.ndarray:
    """Mean action for input ``x``; in (-1, 1) with the default tanh head."""
    x = _check_input(params, x)
    return _forward_trace(params, x, output_activation)[-1]


def backward(params: NetworkParams, x, upstream_grad,
             output_activation: str | None = "tanh") -> ParamGradients:
    """Gradient of ``upstream_grad . forward(params, x)`` w.r.t. every parameter.

    The log-std entry of the result is zero: log-std does not feed the mean,
    its gradient is assembled by the caller.
    """
    x = _check_input(params, x)
    g = np.asarray(upstream_grad, dtype=float)
    out_dim = params.weights[-1].shape[0]
    if g.shape != (out_dim,):
        raise DimensionError(f"upstream_grad must have length {out_dim}, got shape {g.shape}")

    acts = _forward_trace(params, x, output_activation)
    n = len(params.weights)
    gw = [None] * n
    gb = [None] * n
    for k in range(n - 1, -1, -1):
        if k < n - 1 or _squashed(output_activation):
            g = g * (1.0 - acts[k + 1] ** 2)
        gw[k] = np.outer(g, acts[k])
        gb[k] = g.copy()
        g = params.weights[k].T @ g
    return NetworkParams(gw, gb, np.zeros_like(params.log_std))


def adam_step(params: NetworkParams, grads: ParamGradients, state: AdamState, lr: float,
              maximize: bool = False) -> tuple[NetworkParams, AdamState]:
    """One bias-corrected Adam step; descends unless ``maximize`` is set."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    # elementwise, so one pass over the flattened parameters
    g = grads.flatten()
    if not np.all(np.isfinite(g)):
        raise DivergedUpdateError("non-finite gradient")
    b1, b2, eps = state.beta1, state.beta2, state.epsilon
    t = state.step_count + 1
    sign = 1.0 if maximize else -1.0
    m = b1 * state.m.flatten() + (1.0 - b1) * g
    v = b2 * state.v.flatten() + (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    p = params.flatten() + sign * lr * m_hat / (np.sqrt(v_hat) + eps)
    if not np.all(np.isfinite(p)):
        raise DivergedUpdateError("update produced non-finite parameters")
    state2 = AdamState(params.unflatten(m), params.unflatten(v), t, b1, b2, eps)
    return params.unflatten(p), state2


# -- checkpoints ------------------------------------------------------------

def _params_to_dict(p: NetworkParams) -> dict:
    return {
        "weights": [w.tolist() for w in p.weights],
        "biases": [b.tolist() for b in p.biases],
        "log_std": p.log_std.tolist(),
    }


def _params_from_dict(d: dict, layout: NetworkLayout) -> NetworkParams:
    sizes = layout.sizes
    weights = [np.array(w, dtype=float).reshape(o, i) for w, i, o in zip(d["weights"], sizes[:-1], sizes[1:])]
    biases = [np.array(b, dtype=float).reshape(o) for b, o in zip(d["biases"], sizes[1:])]
    log_std = np.array(d["log_std"], dtype=float).reshape(layout.output_dim)
    return NetworkParams(weights, biases, log_std)


def checkpoint_to_dict(layout: NetworkLayout, params: NetworkParams,
                       state: AdamState | None = None, extra: dict | None = None) -> dict:
    doc = {
        "version": CHECKPOINT_VERSION,
        "layout": layout.to_dict(),
        "params": _params_to_dict(params),
    }
    if state is not None:
        doc["adam"] = {
            "step_count": state.step_count,
            "beta1": state.beta1,
            "beta2": state.beta2,
            "epsilon": state.epsilon,
            "m": _params_to_dict(state.m),
            "v": _params_to_dict(state.v),
        }
    if extra:
        doc["extra"] = extra
    return doc


def checkpoint_from_dict(doc: dict):
    """Inverse of :func:`checkpoint_to_dict`; returns (layout, params, state, extra)."""
    version = doc.get("version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    layout = NetworkLayout.from_dict(doc["layout"])
    params = _params_from_dict(doc["params"], layout)
    state = None
    if "adam" in doc:
        a = doc["adam"]
        state = AdamState(
            _params_from_dict(a["m"], layout),
            _params_from_dict(a["v"], layout),
            int(a["step_count"]), float(a["beta1"]), float(a["beta2"]), float(a["epsilon"]),
        )
    return layout, params, state, doc.get("extra", {})


def save_checkpoint(path, layout, params, state=None, extra=None) -> Path:
    path = Path(path)
    path.write_text(json.dumps(checkpoint_to_dict(layout, params, state, extra)))
    return path


def load_checkpoint(path):
    return checkpoint_from_dict(json.loads(Path(path).read_text()))
