"""Fully connected tanh networks: initialization, forward pass, Adam.

Weights are stored as ``(fan_in, fan_out)`` arrays and applied as
``a @ W + b``. The canonical flattening is layer-major, weights before bias,
weights row-major; every flat vector in the package (gradients, Adam moments,
checkpoints) uses it.

Random numbers come from numpy's PCG64 bit generator seeded with the config
seed, which reproduces across platforms.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import ConfigurationError, NumericError, Value


@dataclass(frozen=True)
class NetworkConfig:
    input_dim: int
    output_dim: int
    hidden_layers: int
    hidden_width: int
    activation: str = "tanh"
    seed: int = 0

    def __post_init__(self):
        if min(self.input_dim, self.output_dim, self.hidden_layers, self.hidden_width) < 1:
            raise ConfigurationError(f"network dimensions must be >= 1: {self}")
        if self.activation != "tanh":
            raise ConfigurationError(f"unsupported activation {self.activation!r}")

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.output_dim]

    def with_seed(self, seed: int) -> NetworkConfig:
        return NetworkConfig(**{**asdict(self), "seed": int(seed)})


@dataclass
class NetworkParams:
    config: NetworkConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        sizes = self.config.sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ConfigurationError("layer count does not match config")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (sizes[k], sizes[k + 1]) or b.shape != (sizes[k + 1],):
                raise ConfigurationError(f"layer {k} has shapes {W.shape}, {b.shape}")

    @property
    def size(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def flatten(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts += [np.asarray(W, dtype=np.float64).ravel(), np.asarray(b, dtype=np.float64)]
        return np.concatenate(parts)

    @classmethod
    def unflatten(cls, config: NetworkConfig, flat) -> NetworkParams:
        flat = np.asarray(flat, dtype=np.float64)
        sizes = config.sizes
        weights, biases, pos = [], [], 0
        for n_in, n_out in zip(sizes[:-1], sizes[1:]):
            weights.append(flat[pos:pos + n_in * n_out].reshape(n_in, n_out).copy())
            pos += n_in * n_out
            biases.append(flat[pos:pos + n_out].copy())
            pos += n_out
        if pos != flat.size:
            raise ConfigurationError(f"expected {pos} parameters, got {flat.size}")
        return cls(config, weights, biases)

    def tree(self, dtype=np.float64):
        """Parameters as a tuple of ``(W, b)`` pairs, the layout the batched path uses."""
        return tuple((np.asarray(W, dtype), np.asarray(b, dtype)) for W, b in zip(self.weights, self.biases))

    @classmethod
    def from_tree(cls, config: NetworkConfig, tree) -> NetworkParams:
        return cls(config, [np.asarray(W, np.float64) for W, _ in tree], [np.asarray(b, np.float64) for _, b in tree])


def init_xavier(config: NetworkConfig) -> NetworkParams:
    """Xavier-uniform weights, zero biases, fully determined by ``config.seed``."""
    rng = np.random.Generator(np.random.PCG64(config.seed))
    sizes = config.sizes
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-limit, limit, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return NetworkParams(config, weights, biases)


def clone_params(params: NetworkParams) -> NetworkParams:
    return NetworkParams(params.config, [W.copy() for W in params.weights], [b.copy() for b in params.biases])


def param_labels(params: NetworkParams) -> list[str]:
    return [f"theta{i}" for i in range(params.size)]


def forward(params: NetworkParams, inputs, frozen: bool = False) -> list[Value]:
    """Build the network output graph for scalar input nodes.

    Parameters become ``parameter`` leaves labelled ``theta<i>`` (flat index)
    on the inputs' tape, so losses can be differentiated w.r.t. them with
    :func:`moveset.autodiff.gradient_accumulate_params`. With ``frozen=True``
    they are embedded as constants instead.
    """
    inputs = list(inputs)
    if len(inputs) != params.config.input_dim:
        raise ConfigurationError(f"expected {params.config.input_dim} inputs, got {len(inputs)}")
    tape = next((v.tape for v in inputs if isinstance(v, Value)), None)
    if tape is None:
        raise ConfigurationError("forward needs at least one graph node among the inputs")

    idx = 0

    def leaf(value):
        nonlocal idx
        node = tape.constant(float(value)) if frozen else tape.parameter(f"theta{idx}", float(value))
        idx += 1
        return node

    a = inputs
    n_layers = len(params.weights)
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        Wn = [[leaf(W[i, j]) for j in range(W.shape[1])] for i in range(W.shape[0])]
        bn = [leaf(b[j]) for j in range(b.shape[0])]
        z = []
        for j in range(W.shape[1]):
            acc = bn[j]
            for i in range(W.shape[0]):
                acc = acc + a[i] * Wn[i][j]
            z.append(acc)
        a = z if k == n_layers - 1 else [v.tanh() for v in z]
    return a


def forward_numpy(params: NetworkParams, X) -> np.ndarray:
    """Dense evaluation on an ``(M, input_dim)`` array."""
    a = np.asarray(X, dtype=np.float64)
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        a = a @ W + b
        if k < len(params.weights) - 1:
            a = np.tanh(a)
    return a


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, n: int, lr: float = 1e-4) -> AdamState:
        return cls(np.zeros(n), np.zeros(n), 0, lr)


def adam_update(x, g, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update on flat arrays; ``t`` is the new step count.

    Written with arithmetic operators only so it runs on numpy and jax arrays.
    """
    m = beta1 * m + (1.0 - beta1) * g
    v = beta2 * v + (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return x - lr * m_hat / (v_hat ** 0.5 + eps), m, v


def adam_step(params: NetworkParams, grads, state: AdamState) -> tuple[NetworkParams, AdamState]:
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != (params.size,):
        raise ConfigurationError(f"gradient length {grads.size} != parameter count {params.size}")
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise NumericError(f"non-finite gradient at parameter {bad[0]}; update skipped", node=int(bad[0]))
    t = state.t + 1
    flat, m, v = adam_update(params.flatten(), grads, state.m, state.v, t, state.lr, state.beta1, state.beta2, state.eps)
    return NetworkParams.unflatten(params.config, flat), AdamState(m, v, t, state.lr, state.beta1, state.beta2, state.eps)


def save_checkpoint(path, params: NetworkParams, state: AdamState | None = None) -> Path:
    """Write config, seed, flat parameters and Adam state as JSON."""
    payload = {
        "config": asdict(params.config),
        "seed": params.config.seed,
        "params": params.flatten().tolist(),
        "adam": None if state is None else {
            "m": np.asarray(state.m, np.float64).tolist(),
            "v": np.asarray(state.v, np.float64).tolist(),
            "t": int(state.t),
            "lr": state.lr,
            "beta1": state.beta1,
            "beta2": state.beta2,
            "eps": state.eps,
        },
    }
    path = Path(path)
    path.write_text(json.dumps(payload, indent=1) + "\n")
    return path


def load_checkpoint(path) -> tuple[NetworkParams, AdamState | None]:
    payload = json.loads(Path(path).read_text())
    config = NetworkConfig(**payload["config"])
    params = NetworkParams.unflatten(config, payload["params"])
    adam = payload.get("adam")
    state = None
    if adam is not None:
        state = AdamState(np.array(adam["m"]), np.array(adam["v"]), adam["t"], adam["lr"],
                          adam["beta1"], adam["beta2"], adam["eps"])
    return params, state
