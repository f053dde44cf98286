"""Monitor functions built from a solution field and its gradient.

Two forms cover every monitor used in the experiments::

    sqrt:    w = sqrt(c0 + cu*u^2 + sum_k cgrad[k] * (du/dx_k)^2)
    affine:  w = a + b*u

A field is either an analytic expression or a frozen, pre-trained PINN sliced
at a reference time. Both evaluate on tape nodes (one point, exact nested
derivatives) and on jets (a batch of points), so the same monitor feeds the
reference residual and the training loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import jax.numpy as jnp
import numpy as np

from . import autodiff, jets
from .autodiff import ConfigurationError, NumericError, TapeOps, Value
from .jets import Jet, JetOps
from .network import NetworkParams, forward, forward_numpy


@dataclass(frozen=True)
class MonitorSpec:
    form: str = "sqrt"
    c0: float = 1.0
    cu: float = 0.0
    cgrad: tuple = ()
    a: float = 1.0
    b: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "cgrad", tuple(float(c) for c in self.cgrad))
        if self.form == "sqrt":
            if self.c0 <= 0 or self.cu < 0 or any(c < 0 for c in self.cgrad):
                raise ConfigurationError(f"sqrt monitor needs c0 > 0 and non-negative weights: {self}")
        elif self.form == "affine":
            if self.a <= 0 or self.b < 0:
                raise ConfigurationError(f"affine monitor needs a > 0 and b >= 0: {self}")
        else:
            raise ConfigurationError(f"unknown monitor form {self.form!r}")

    @classmethod
    def sqrt_form(cls, c0=1.0, cu=0.0, cgrad=()) -> MonitorSpec:
        return cls("sqrt", c0=c0, cu=cu, cgrad=tuple(cgrad))

    @classmethod
    def affine_form(cls, a=1.0, b=0.0) -> MonitorSpec:
        return cls("affine", a=a, b=b)

    @classmethod
    def constant(cls) -> MonitorSpec:
        return cls("affine", a=1.0, b=0.0)

    @property
    def uses_gradient(self) -> bool:
        return self.form == "sqrt" and any(c != 0 for c in self.cgrad)

    @property
    def uses_field(self) -> bool:
        if self.form == "affine":
            return self.b != 0
        return self.cu != 0 or self.uses_gradient

    def to_dict(self) -> dict:
        return {"form": self.form, "c0": self.c0, "cu": self.cu, "cgrad": list(self.cgrad), "a": self.a, "b": self.b}

    @classmethod
    def from_dict(cls, d: dict) -> MonitorSpec:
        unknown = set(d) - {"form", "c0", "cu", "cgrad", "a", "b"}
        if unknown:
            raise ConfigurationError(f"unknown monitor keys: {sorted(unknown)}")
        return cls(**{**d, "cgrad": tuple(d.get("cgrad", ()))})

    def combine(self, u, grads, ops):
        """w from the field value ``u`` and its spatial partials ``grads``."""
        if self.form == "affine":
            return self.a + self.b * u
        acc = self.c0
        if self.cu:
            acc = acc + self.cu * (u * u)
        for c, g in zip(self.cgrad, grads):
            if c:
                acc = acc + c * (g * g)
        if not isinstance(acc, (Value, Jet)):
            return float(np.sqrt(acc))
        return ops.sqrt(acc)


@dataclass(frozen=True)
class AnalyticField:
    """Closed-form field ``fn(*coords, xp)``; ``xp`` supplies exp/sin/cos/tanh/sqrt."""

    fn: Callable
    ndim: int
    name: str = "analytic"

    def expr(self, coords, ops):
        return self.fn(*coords, xp=ops)

    def numpy(self, P):
        P = np.asarray(P, dtype=np.float64)
        return np.asarray(self.fn(*(P[:, k] for k in range(P.shape[1])), xp=np))


@dataclass(frozen=True)
class PinnField:
    """A trained network frozen and sliced at ``t_ref`` along its last input."""

    params: NetworkParams
    ndim: int
    t_ref: float | None = None
    name: str = field(default="pinn")

    def __post_init__(self):
        expected = self.ndim + (0 if self.t_ref is None else 1)
        if self.params.config.input_dim != expected:
            raise ConfigurationError(f"network takes {self.params.config.input_dim} inputs, field needs {expected}")
        # the field must not change while a monitor refers to it
        for W in self.params.weights + self.params.biases:
            W.setflags(write=False)

    def expr(self, coords, ops):
        coords = list(coords)
        if any(isinstance(c, Value) for c in coords):
            if self.t_ref is not None:
                coords.append(float(self.t_ref))
            tape = next(c.tape for c in coords if isinstance(c, Value))
            coords = [c if isinstance(c, Value) else tape.constant(c) for c in coords]
            return forward(self.params, coords, frozen=True)[0]
        return _mlp_on_coords(self.params.tree(_dtype_of(coords)), coords, self.t_ref)[:, 0]

    def numpy(self, P):
        P = np.asarray(P, dtype=np.float64)
        if self.t_ref is not None:
            P = np.column_stack([P, np.full(len(P), self.t_ref)])
        return forward_numpy(self.params, P)[:, 0]


def _dtype_of(coords):
    for c in coords:
        v = c.val if isinstance(c, Jet) else c
        if hasattr(v, "dtype"):
            return v.dtype
    return np.float64


def _mlp_on_coords(tree, coords, t_ref=None):
    """Run an MLP on a list of coordinate jets/arrays, stacking them as columns."""
    cols = list(coords)
    proto = next((c for c in cols if isinstance(c, Jet)), None)
    if proto is None:
        X = jnp.stack([jnp.asarray(c) for c in cols] + ([] if t_ref is None else [jnp.full_like(jnp.asarray(cols[0]), t_ref)]), axis=1)
        a = X
        for k, (W, b) in enumerate(tree):
            a = a @ W + b
            if k < len(tree) - 1:
                a = jnp.tanh(a)
        return a
    M = proto.val.shape[0]
    dtype = proto.val.dtype
    if t_ref is not None:
        cols.append(jnp.full((M,), t_ref, dtype=dtype))

    def column(c, get):
        if isinstance(c, Jet):
            v = get(c)
        else:
            v = None if get is not _val else c
        if v is None:
            return jnp.zeros((M,), dtype=dtype)
        if v is jets.UNTRACKED:
            raise ConfigurationError("input jet lacks a needed second derivative")
        return jnp.broadcast_to(jnp.asarray(v, dtype=dtype), (M,))

    val = jnp.stack([column(c, _val) for c in cols], axis=1)
    grad = [jnp.stack([column(c, lambda j, k=k: j.grad[k]) for c in cols], axis=1) for k in range(proto.ndim)]
    pairs = set(proto.hess)
    for c in cols:
        if isinstance(c, Jet):
            pairs &= set(c.hess)
    order = min(c.order for c in cols if isinstance(c, Jet))
    hess = {}
    if order >= 2:
        hess = {p: jnp.stack([column(c, lambda j, p=p: j.hess.get(p)) for c in cols], axis=1) for p in pairs}
    a = Jet(val, grad, hess, order)
    for k, (W, b) in enumerate(tree):
        a = a.matmul(W) + b
        if k < len(tree) - 1:
            a = a.tanh()
    return a


def _val(j):
    return j.val


def monitor_expr(spec: MonitorSpec, field_, coords, ops):
    """w at symbolic coordinates (tape nodes or jets), differentiable in them."""
    if not spec.uses_field:
        return spec.combine(0.0, (), ops)
    u = field_.expr(coords, ops)
    grads = [ops.d(u, k) for k in range(len(coords))] if spec.uses_gradient else ()
    return spec.combine(u, grads, ops)


def monitor_value(spec: MonitorSpec, field_, point) -> Value:
    """Graph node for w at one point.

    ``point`` holds coordinate leaves (or floats, which become input leaves
    ``x0, x1, ...`` on a fresh tape). Raises :class:`NumericError` when w is
    not positive at the bound coordinates.
    """
    coords = list(point)
    if not any(isinstance(c, Value) for c in coords):
        tape = autodiff.Tape()
        coords = [tape.input(f"x{k}", float(c)) for k, c in enumerate(coords)]
    tape = next(c.tape for c in coords if isinstance(c, Value))
    w = monitor_expr(spec, field_, coords, TapeOps(coords))
    if not isinstance(w, Value):
        w = tape.constant(w)
    try:
        wv = autodiff.evaluate(tape, None, w)
    except autodiff.ConfigurationError:
        wv = None  # coordinates unbound; positivity is checked at evaluation time
    if wv is not None and not np.all(np.asarray(wv) > 0):
        raise NumericError(f"monitor is not positive (w={wv})", node=w.id)
    return w


def monitor_jet(spec: MonitorSpec, field_, P, dtype=None) -> Jet:
    """w and its spatial gradient at the rows of ``P`` as a first-order jet."""
    P = np.asarray(P, dtype=np.float64 if dtype is None else dtype)
    d = P.shape[1]
    pairs = [(i, j) for i in range(d) for j in range(i, d)]
    coords = jets.coordinates(P, range(d), pairs)
    w = monitor_expr(spec, field_, coords, JetOps)
    if not isinstance(w, Jet):
        w = coords[0] * 0.0 + w
    return Jet(w.val, w.grad, {}, order=1)


def check_positive(w: Jet | np.ndarray):
    vals = np.asarray(w.val if isinstance(w, Jet) else w)
    if not np.all(vals > 0):
        raise NumericError(f"monitor is not positive (min w = {vals.min():g})")
