"""Compiled full-batch Adam loop shared by MMPDE-Net and PINN training.

Losses are written with jets and compiled by jax; gradients w.r.t. the
``((W, b), ...)`` parameter tree come from ``jax.value_and_grad``. Adam acts
elementwise, so updating the tree leaf by leaf is the same as updating the
canonical flat vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np
from jax.flatten_util import ravel_pytree

from .autodiff import ConfigurationError, NumericError
from .network import NetworkParams, adam_update

DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass
class TrainResult:
    params: NetworkParams
    history: list = field(default_factory=list)  # rows (epoch, loss, *components)
    final_loss: float = float("nan")
    final_components: tuple = ()


def resolve_dtype(name):
    try:
        return DTYPES[name]
    except KeyError:
        raise ConfigurationError(f"dtype must be one of {sorted(DTYPES)}, got {name!r}") from None


def make_step(loss_fn):
    """Jit ``(tree, m, v, t, lr, data) -> (tree', m', v', loss, aux, finite)`` for ``loss_fn(tree, data)``.

    ``loss_fn`` returns ``(loss, aux)``. The returned step also serves, with
    ``lr=0``, to evaluate the loss exactly as training sees it.
    """

    def step(tree, m, v, t, lr, data):
        (loss, aux), g = jax.value_and_grad(loss_fn, has_aux=True)(tree, data)
        upd = jax.tree_util.tree_map(lambda x, g_, m_, v_: adam_update(x, g_, m_, v_, t, lr), tree, g, m, v)
        pick = lambda k: jax.tree_util.tree_map(lambda _, u: u[k], tree, upd)
        finite = jnp.all(jnp.isfinite(ravel_pytree(g)[0]))
        return pick(0), pick(1), pick(2), loss, aux, finite

    return jax.jit(step)


def train(step, params: NetworkParams, data, epochs: int, lr: float, dtype=np.float32) -> TrainResult:
    """Run ``epochs`` Adam steps; history row ``e`` is the loss before update ``e``."""
    tree = jax.tree_util.tree_map(jnp.asarray, params.tree(dtype))
    m = jax.tree_util.tree_map(jnp.zeros_like, tree)
    v = jax.tree_util.tree_map(jnp.zeros_like, tree)
    lr_ = jnp.asarray(lr, dtype=dtype)
    history = []
    for epoch in range(1, epochs + 1):
        t = jnp.asarray(epoch, dtype=dtype)
        new_tree, new_m, new_v, loss, aux, ok = step(tree, m, v, t, lr_, data)
        loss = float(loss)
        aux = tuple(float(a) for a in aux)
        history.append((epoch, loss) + aux)
        if not np.isfinite(loss) or not bool(ok):
            raise TrainingAborted(f"non-finite loss or gradient at epoch {epoch}", epoch, history)
        tree, m, v = new_tree, new_m, new_v
    out = NetworkParams.from_tree(params.config, tree)
    loss, aux = _evaluate(step, tree, data, dtype)
    return TrainResult(out, history, loss, aux)


def evaluate_loss(step, params: NetworkParams, data, dtype=np.float32):
    """Loss and components at ``params`` computed by the same compiled program as training."""
    return _evaluate(step, jax.tree_util.tree_map(jnp.asarray, params.tree(dtype)), data, dtype)


def _evaluate(step, tree, data, dtype):
    z = jax.tree_util.tree_map(jnp.zeros_like, tree)
    _, _, _, loss, aux, _ = step(tree, z, z, jnp.asarray(1.0, dtype), jnp.asarray(0.0, dtype), data)
    return float(loss), tuple(float(a) for a in aux)


class TrainingAborted(NumericError):
    def __init__(self, message, epoch, history):
        super().__init__(message)
        self.epoch = epoch
        self.history = history

