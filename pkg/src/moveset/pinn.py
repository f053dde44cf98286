"""PDE residual operators, the empirical PINN loss and its training loop.

Residual formulas are written once against an ``ops`` namespace and run both
on scalar tape nodes (per-point reference, exact nested derivatives) and on
jets inside the compiled training loss.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace

import jax.numpy as jnp
import numpy as np

from . import autodiff, jets, training
from .autodiff import ConfigurationError, TapeOps, Value
from .jets import JetOps
from .mmpde import PointSet
from .network import NetworkConfig, NetworkParams, forward, init_xavier

BURGERS1D_NU = 0.01 / math.pi
BURGERS2D_NU = 0.1


@dataclass(frozen=True)
class PinnConfig:
    net: NetworkConfig = NetworkConfig(2, 1, 4, 40)
    epochs: int = 20000
    lr: float = 1e-4
    alpha1: float = 1.0
    alpha2: float = 1.0
    m_r: int | None = None
    m_b: int | None = None
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("PINN needs epochs >= 1")
        if not (self.alpha1 > 0 and self.alpha2 > 0):
            raise ConfigurationError("loss weights must be positive")
        training.resolve_dtype(self.dtype)


class LaplacianForcing:
    """f = −Δu for a closed-form ``u``, derived by differentiation rather than transcribed."""

    def __init__(self, exact):
        self.exact = exact
        self.ndim = exact.ndim

    def expr(self, coords, ops):
        u = self.exact.expr(coords, ops)
        lap = 0.0
        for k in range(len(coords)):
            lap = lap + ops.d(ops.d(u, k), k)
        return -lap

    def numpy(self, P):
        P = np.asarray(P, dtype=np.float64)
        d = P.shape[1]
        coords = jets.coordinates(P, range(d), [(k, k) for k in range(d)])
        return np.asarray(jets.value(self.expr(coords, JetOps))) * np.ones(len(P))


@dataclass(frozen=True)
class ResidualOperator:
    """PDE form tag plus coefficients.

    ``kind`` is ``"poisson"`` (−Δu = f, any dimension), ``"burgers1d"`` on
    (x, t) or ``"burgers2d"`` on (x, y, t).
    """

    kind: str
    nu: float | None = None
    forcing: object = field(default=None, compare=False, hash=False)

    def __post_init__(self):
        if self.kind not in ("poisson", "burgers1d", "burgers2d"):
            raise ConfigurationError(f"unknown residual operator {self.kind!r}")
        if self.kind.startswith("burgers") and not (self.nu is not None and math.isfinite(self.nu) and self.nu > 0):
            raise ConfigurationError("Burgers viscosity must be finite and positive")

    def derivative_plan(self, ndim):
        """Coordinates to track and second-derivative pairs the residual needs."""
        if self.kind == "poisson":
            return tuple(range(ndim)), tuple((k, k) for k in range(ndim))
        if self.kind == "burgers1d":
            return (0, 1), ((0, 0),)
        return (0, 1, 2), ((0, 0), (1, 1))

    def residual(self, u, ops, ndim, f=0.0):
        d = ops.d
        if self.kind == "poisson":
            lap = 0.0
            for k in range(ndim):
                lap = lap + d(d(u, k), k)
            return -lap - f
        if self.kind == "burgers1d":
            u_x = d(u, 0)
            return d(u, 1) + u * u_x - self.nu * d(u_x, 0)
        u_x, u_y = d(u, 0), d(u, 1)
        return d(u, 2) + u * (u_x + u_y) - self.nu * (d(u_x, 0) + d(u_y, 1))


def poisson(forcing) -> ResidualOperator:
    return ResidualOperator("poisson", forcing=forcing)


def burgers1d_operator(nu=BURGERS1D_NU) -> ResidualOperator:
    return ResidualOperator("burgers1d", nu=nu)


def burgers2d_operator(nu=BURGERS2D_NU) -> ResidualOperator:
    return ResidualOperator("burgers2d", nu=nu)


# --- per-point reference path --------------------------------------------------

def _surrogate(net, coords):
    """Network output node at ``coords``; ``net`` is NetworkParams or a callable."""
    if isinstance(net, NetworkParams):
        return forward(net, coords)[0]
    return net(coords)


def _leaves(tape, point, prefix):
    return [tape.input(f"{prefix}{k}", float(c)) for k, c in enumerate(point)]


def _forcing_node(f, coords, ops):
    if f is None:
        return 0.0
    if hasattr(f, "expr"):
        return f.expr(coords, ops)
    if callable(f):
        return f(*coords, xp=ops)
    return float(f)


def residual_poisson(net, f, point, tape=None, prefix="x"):
    """r = −Δu − f at one point of any dimension."""
    tape = autodiff.Tape() if tape is None else tape
    x = _leaves(tape, point, prefix)
    ops = TapeOps(x)
    u = _surrogate(net, x)
    return ResidualOperator("poisson").residual(u, ops, len(x), _forcing_node(f, x, ops))


def residual_poisson2d(net, f, point, tape=None, prefix="x"):
    if len(point) != 2:
        raise ConfigurationError("residual_poisson2d takes (x, y)")
    return residual_poisson(net, f, point, tape, prefix)


def residual_burgers1d(net, point, nu=BURGERS1D_NU, tape=None, prefix="x"):
    tape = autodiff.Tape() if tape is None else tape
    x = _leaves(tape, point, prefix)
    return burgers1d_operator(nu).residual(_surrogate(net, x), TapeOps(x), 2)


def residual_burgers2d(net, point, nu=BURGERS2D_NU, tape=None, prefix="x"):
    tape = autodiff.Tape() if tape is None else tape
    x = _leaves(tape, point, prefix)
    return burgers2d_operator(nu).residual(_surrogate(net, x), TapeOps(x), 3)


def residual_at(net, operator: ResidualOperator, point, tape=None, prefix="x"):
    if operator.kind == "poisson":
        return residual_poisson(net, operator.forcing, point, tape, prefix)
    if operator.kind == "burgers1d":
        return residual_burgers1d(net, point, operator.nu, tape, prefix)
    return residual_burgers2d(net, point, operator.nu, tape, prefix)


def empirical_loss(net, operator: ResidualOperator, interior: PointSet, boundary: PointSet,
                   alpha1=1.0, alpha2=1.0, tape=None) -> Value:
    """(α1/M_r) Σ r² + (α2/M_b) Σ (u − g)² as one scalar graph node."""
    if len(interior) == 0 or len(boundary) == 0:
        raise ConfigurationError("interior and boundary sets must be nonempty")
    if boundary.values is None:
        raise ConfigurationError("boundary set carries no target values")
    tape = autodiff.Tape() if tape is None else tape
    res = 0.0
    for i, p in enumerate(interior.coords):
        r = residual_at(net, operator, p, tape, prefix=f"r{i}_x")
        res = res + r * r
    bnd = 0.0
    for i, (p, g) in enumerate(zip(boundary.coords, boundary.values)):
        b = _surrogate(net, _leaves(tape, p, f"b{i}_x")) - float(g)
        bnd = bnd + b * b
    total = alpha1 * (res / float(len(interior))) + alpha2 * (bnd / float(len(boundary)))
    return total if isinstance(total, Value) else tape.constant(float(total))


# --- compiled batch path -------------------------------------------------------

def batch_residual(tree, operator: ResidualOperator, X, f=None):
    dims, pairs = operator.derivative_plan(X.shape[1])
    u = jets.mlp_jet(tree, X, dims, pairs)[:, 0]
    r = operator.residual(u, JetOps, X.shape[1], 0.0 if f is None else f)
    return r.val


def _dense(tree, X):
    a = X
    for k, (W, b) in enumerate(tree):
        a = a @ W + b
        if k < len(tree) - 1:
            a = jnp.tanh(a)
    return a[:, 0]


@functools.lru_cache(maxsize=32)
def _step(operator: ResidualOperator, alpha1: float, alpha2: float):
    def loss_fn(tree, data):
        X, f, Xb, g = data
        r = batch_residual(tree, operator, X, f)
        res = alpha1 * jnp.mean(r * r)
        b = _dense(tree, Xb) - g
        bnd = alpha2 * jnp.mean(b * b)
        return res + bnd, (res, bnd)

    return training.make_step(loss_fn)


def _data(operator, interior: PointSet, boundary: PointSet, dtype):
    if boundary.values is None:
        raise ConfigurationError("boundary set carries no target values")
    f = None
    if operator.kind == "poisson" and operator.forcing is not None:
        f = jnp.asarray(operator.forcing.numpy(interior.coords), dtype)
    return (jnp.asarray(interior.coords, dtype), f, jnp.asarray(boundary.coords, dtype),
            jnp.asarray(boundary.values, dtype))


@dataclass
class PinnResult:
    params: NetworkParams
    history: list
    final_loss: float
    final_components: tuple = ()

    def __iter__(self):
        # unpacks as (params, history)
        return iter((self.params, self.history))


def train_pinn(config: PinnConfig, operator: ResidualOperator, interior: PointSet, boundary: PointSet,
               initial_params: NetworkParams | None = None, seed=None) -> PinnResult:
    """Full-batch Adam on the empirical loss.

    History rows are ``(epoch, loss, residual_term, boundary_term)`` with the
    loss taken before the update of that epoch; the terms include their
    weights. A non-finite loss aborts with :class:`training.TrainingAborted`
    carrying the epoch.
    """
    net = config.net if seed is None else config.net.with_seed(seed)
    if initial_params is None:
        params = init_xavier(net)
    else:
        if initial_params.config.sizes != net.sizes:
            raise ConfigurationError(f"inherited parameters have layout {initial_params.config.sizes}, expected {net.sizes}")
        params = initial_params
    dtype = training.resolve_dtype(config.dtype)
    step = _step(operator, float(config.alpha1), float(config.alpha2))
    res = training.train(step, params, _data(operator, interior, boundary, dtype), config.epochs, config.lr, dtype)
    return PinnResult(res.params, res.history, res.final_loss, res.final_components)


def pinn_loss(params: NetworkParams, config: PinnConfig, operator: ResidualOperator, interior: PointSet,
              boundary: PointSet, dtype=None):
    """``(loss, residual_term, boundary_term)`` through the compiled training program."""
    if dtype is not None:
        config = replace(config, dtype=dtype)
    dt = training.resolve_dtype(config.dtype)
    step = _step(operator, float(config.alpha1), float(config.alpha2))
    loss, aux = training.evaluate_loss(step, params, _data(operator, interior, boundary, dt), dt)
    return (loss,) + aux


def residual_values(params: NetworkParams, operator: ResidualOperator, P, dtype=np.float64) -> np.ndarray:
    """PDE residual of the network at the rows of ``P``."""
    P = np.asarray(P, dtype=dtype)
    f = None
    if operator.kind == "poisson" and operator.forcing is not None:
        f = operator.forcing.numpy(P).astype(dtype)
    return np.asarray(batch_residual(params.tree(dtype), operator, P, f)) * np.ones(len(P))


def mean_squared_residual(params: NetworkParams, operator: ResidualOperator, P) -> float:
    r = residual_values(params, operator, P)
    return float(np.mean(r * r))
