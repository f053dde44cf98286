"""Batched second-order forward derivatives (truncated Taylor arithmetic).

A :class:`Jet` carries, for a batch of points, a value array together with
its first derivatives w.r.t. a few input coordinates and a chosen subset of
second derivatives. Arithmetic propagates them exactly up to the jet's
``order``; ``d(k)`` turns the derivative along coordinate ``k`` into a jet of
one order less. This is the vectorized path used for training: it computes
the same quantities as nested :func:`moveset.autodiff.gradient` calls on the
scalar tape, but as dense array operations that jax can trace and compile.

Components are numpy or jax arrays that broadcast against each other; a
``None`` component is an exact zero and :data:`UNTRACKED` marks a second
derivative that was never propagated (reading it raises).
"""

from __future__ import annotations

import jax.numpy as jnp
import numpy as np

INF_ORDER = 99


class _Untracked:
    def __repr__(self):
        return "UNTRACKED"


UNTRACKED = _Untracked()


def _add(a, b):
    if a is None:
        return b
    if b is None:
        return a
    if a is UNTRACKED or b is UNTRACKED:
        return UNTRACKED
    return a + b


def _mul(a, b):
    if a is None or b is None:
        return None
    if a is UNTRACKED or b is UNTRACKED:
        return UNTRACKED
    return a * b


def _neg(a):
    if a is None or a is UNTRACKED:
        return a
    return -a


def _pair(i, j):
    return (i, j) if i <= j else (j, i)


class Jet:
    """Value plus derivatives along ``ndim`` coordinates, truncated at ``order``.

    ``grad`` is a tuple of length ``ndim``; ``hess`` maps sorted index pairs to
    arrays and only lists the pairs being tracked.
    """

    __slots__ = ("val", "grad", "hess", "order")
    __array_priority__ = 1000

    def __init__(self, val, grad, hess=None, order=2):
        self.val = val
        self.grad = tuple(grad)
        self.hess = dict(hess or {})
        self.order = order

    @property
    def ndim(self):
        return len(self.grad)

    @classmethod
    def variable(cls, val, k: int, ndim: int, pairs=()) -> Jet:
        """The coordinate ``k`` itself as a jet (unit gradient, zero curvature)."""
        grad = [None] * ndim
        grad[k] = 1.0
        return cls(val, grad, {p: None for p in pairs}, order=2)

    # --- structure ---------------------------------------------------------
    def d(self, k: int) -> Jet:
        """Derivative along coordinate ``k`` as a jet of one order less."""
        if self.order < 1 or self.grad[k] is UNTRACKED:
            raise ValueError(f"derivative along coordinate {k} was not tracked")
        if self.order >= 2:
            grad = [self.hess.get(_pair(k, j), UNTRACKED) for j in range(self.ndim)]
            return Jet(self.grad[k], grad, {}, order=1)
        return Jet(self.grad[k], [None] * self.ndim, {}, order=0)

    def __getitem__(self, index) -> Jet:
        def take(a):
            if a is None or a is UNTRACKED:
                return a
            if np.ndim(a) == 0:
                return a
            return a[index]

        return Jet(take(self.val), [take(g) for g in self.grad],
                   {p: take(h) for p, h in self.hess.items()}, self.order)

    def _lift(self, other):
        if isinstance(other, Jet):
            if other.ndim != self.ndim:
                raise ValueError("jets track different coordinates")
            return other
        return Jet(other, [None] * self.ndim, {p: None for p in self.hess}, order=INF_ORDER)

    @staticmethod
    def _pairs(a, b):
        if a.order == INF_ORDER:
            return b.hess.keys()
        if b.order == INF_ORDER:
            return a.hess.keys()
        return [p for p in a.hess if p in b.hess]

    # --- arithmetic --------------------------------------------------------
    def __add__(self, other):
        b = self._lift(other)
        order = min(self.order, b.order)
        grad = [_add(x, y) for x, y in zip(self.grad, b.grad)]
        hess = {p: _add(self.hess.get(p), b.hess.get(p)) for p in self._pairs(self, b)}
        return Jet(self.val + b.val, grad, hess, order)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.val, [_neg(g) for g in self.grad], {p: _neg(h) for p, h in self.hess.items()}, self.order)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) - self

    def __mul__(self, other):
        b = self._lift(other)
        a = self
        order = min(a.order, b.order)
        grad = [_add(_mul(ga, b.val), _mul(a.val, gb)) for ga, gb in zip(a.grad, b.grad)]
        hess = {}
        if order >= 2:
            for p in self._pairs(a, b):
                i, j = p
                h = _add(_mul(a.hess.get(p), b.val), _mul(a.val, b.hess.get(p)))
                h = _add(h, _mul(a.grad[i], b.grad[j]))
                h = _add(h, _mul(a.grad[j], b.grad[i]))
                hess[p] = h
        return Jet(a.val * b.val, grad, hess, order)

    __rmul__ = __mul__

    def apply(self, f0, f1, f2) -> Jet:
        """Chain rule for a scalar function with value/derivative arrays f0, f1, f2."""
        grad = [_mul(f1, g) for g in self.grad]
        hess = {}
        if self.order >= 2:
            for (i, j), h in self.hess.items():
                hess[(i, j)] = _add(_mul(f1, h), _mul(f2, _mul(self.grad[i], self.grad[j])))
        return Jet(f0, grad, hess, self.order)

    def reciprocal(self) -> Jet:
        r = 1.0 / self.val
        return self.apply(r, -r * r, 2.0 * r * r * r)

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, k):
        k = int(k)
        if k == 0:
            return self._lift(1.0)
        return self.apply(self.val ** k, k * self.val ** (k - 1), k * (k - 1) * self.val ** (k - 2) if k > 1 else 0.0)

    def tanh(self):
        t = jnp.tanh(self.val)
        s = 1.0 - t * t
        return self.apply(t, s, -2.0 * t * s)

    def exp(self):
        e = jnp.exp(self.val)
        return self.apply(e, e, e)

    def sin(self):
        s, c = jnp.sin(self.val), jnp.cos(self.val)
        return self.apply(s, c, -s)

    def cos(self):
        s, c = jnp.sin(self.val), jnp.cos(self.val)
        return self.apply(c, -s, -c)

    def sqrt(self):
        r = jnp.sqrt(self.val)
        return self.apply(r, 0.5 / r, -0.25 / (r * self.val))

    def matmul(self, W) -> Jet:
        """Right-multiply every component by ``W`` (a linear map)."""
        mm = lambda a: a if a is None or a is UNTRACKED else a @ W
        return Jet(self.val @ W, [mm(g) for g in self.grad], {p: mm(h) for p, h in self.hess.items()}, self.order)


def exp(v):
    return v.exp() if isinstance(v, Jet) else jnp.exp(v)


def sin(v):
    return v.sin() if isinstance(v, Jet) else jnp.sin(v)


def cos(v):
    return v.cos() if isinstance(v, Jet) else jnp.cos(v)


def tanh(v):
    return v.tanh() if isinstance(v, Jet) else jnp.tanh(v)


def sqrt(v):
    return v.sqrt() if isinstance(v, Jet) else jnp.sqrt(v)


def value(v):
    return v.val if isinstance(v, Jet) else v


def coordinates(X, dims, pairs=()):
    """Input jets for the columns of ``X`` (shape ``(M, n)``).

    Derivatives are tracked along the columns listed in ``dims``; the other
    columns come back as plain arrays. ``pairs`` index into ``dims``.
    """
    dims = list(dims)
    out = []
    for c in range(X.shape[1]):
        if c in dims:
            out.append(Jet.variable(X[:, c], dims.index(c), len(dims), pairs))
        else:
            out.append(X[:, c])
    return out


def mlp_jet(tree, X, dims, pairs=()) -> Jet:
    """Forward pass of a tanh MLP carrying derivatives w.r.t. input columns ``dims``.

    ``tree`` is a sequence of ``(W, b)`` with ``W`` shaped ``(fan_in, fan_out)``.
    Returns a jet whose ``val`` has shape ``(M, output_dim)``.
    """
    dims = list(dims)
    n_in = X.shape[1]
    grad = []
    for c in dims:
        row = np.zeros((1, n_in))
        row[0, c] = 1.0
        grad.append(jnp.asarray(row, dtype=X.dtype))
    a = Jet(X, grad, {p: None for p in pairs}, order=2)
    n_layers = len(tree)
    for k, (W, b) in enumerate(tree):
        z = a.matmul(W) + b
        a = z if k == n_layers - 1 else z.tanh()
    return a


class JetOps:
    """Calculus namespace over jets, mirroring :class:`moveset.autodiff.TapeOps`."""

    exp = staticmethod(exp)
    sin = staticmethod(sin)
    cos = staticmethod(cos)
    tanh = staticmethod(tanh)
    sqrt = staticmethod(sqrt)

    @staticmethod
    def d(expr, k):
        if isinstance(expr, Jet):
            return expr.d(k)
        return 0.0
