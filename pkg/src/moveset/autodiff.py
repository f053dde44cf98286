"""Scalar computation-graph automatic differentiation.

Derivatives are built graph-to-graph: :func:`gradient` returns new nodes on the
same tape, so its results can be differentiated again. Nodes are hash-consed
and trivial constants are folded at construction, which keeps nested
derivative graphs (e.g. a parameter gradient of a second input-derivative)
from blowing up.

Leaf values may be Python floats or numpy arrays; with arrays the whole graph
is evaluated elementwise, one lane per point.
"""

from __future__ import annotations

import math
from numbers import Real

import numpy as np

__all__ = [
    "ConfigurationError",
    "NumericError",
    "Tape",
    "Value",
    "evaluate",
    "gradient",
    "gradient_accumulate_params",
    "exp",
    "sin",
    "cos",
    "tanh",
    "sqrt",
    "TapeOps",
]

ARITY = {
    "constant": 0,
    "input": 0,
    "parameter": 0,
    "add": 2,
    "sub": 2,
    "mul": 2,
    "div": 2,
    "neg": 1,
    "pow": 1,
    "sqrt": 1,
    "exp": 1,
    "sin": 1,
    "cos": 1,
    "tanh": 1,
}
LEAF_OPS = ("input", "parameter")


class ConfigurationError(ValueError):
    """Raised for malformed inputs: unbound leaves, bad shapes, unknown labels."""


class NumericError(ArithmeticError):
    """Raised when a computation produces a non-finite value.

    ``node`` carries the offending node id (or parameter index) when known.
    """

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class Value:
    """Handle to one node of a :class:`Tape`."""

    __slots__ = ("tape", "id")

    def __init__(self, tape: Tape, node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def op(self) -> str:
        return self.tape.ops[self.id]

    @property
    def operands(self) -> tuple:
        return self.tape.operands[self.id]

    @property
    def payload(self):
        return self.tape.payloads[self.id]

    def __repr__(self):
        return f"Value(id={self.id}, op={self.op!r})"

    def _lift(self, other):
        if isinstance(other, Value):
            if other.tape is not self.tape:
                raise ConfigurationError("operands belong to different tapes")
            return other
        return self.tape.constant(other)

    def __add__(self, other):
        return self.tape._node("add", (self, self._lift(other)))

    def __radd__(self, other):
        return self.tape._node("add", (self._lift(other), self))

    def __sub__(self, other):
        return self.tape._node("sub", (self, self._lift(other)))

    def __rsub__(self, other):
        return self.tape._node("sub", (self._lift(other), self))

    def __mul__(self, other):
        return self.tape._node("mul", (self, self._lift(other)))

    def __rmul__(self, other):
        return self.tape._node("mul", (self._lift(other), self))

    def __truediv__(self, other):
        return self.tape._node("div", (self, self._lift(other)))

    def __rtruediv__(self, other):
        return self.tape._node("div", (self._lift(other), self))

    def __neg__(self):
        return self.tape._node("neg", (self,))

    def __pos__(self):
        return self

    def __pow__(self, k):
        if isinstance(k, Value) or int(k) != k:
            raise ConfigurationError("only integer exponents are supported; use sqrt")
        return self.tape._node("pow", (self,), int(k))

    def sqrt(self):
        return self.tape._node("sqrt", (self,))

    def exp(self):
        return self.tape._node("exp", (self,))

    def sin(self):
        return self.tape._node("sin", (self,))

    def cos(self):
        return self.tape._node("cos", (self,))

    def tanh(self):
        return self.tape._node("tanh", (self,))


_FOLD = {
    "add": lambda a, b: a + b,
    "sub": lambda a, b: a - b,
    "mul": lambda a, b: a * b,
    "div": lambda a, b: a / b,
    "neg": lambda a: -a,
    "sqrt": math.sqrt,
    "exp": math.exp,
    "sin": math.sin,
    "cos": math.cos,
    "tanh": math.tanh,
}


class Tape:
    """Append-only node store with a registry of labelled leaves.

    Operands always precede the node that uses them, so node ids are a
    topological order.
    """

    def __init__(self):
        self.ops: list[str] = []
        self.operands: list[tuple[int, ...]] = []
        self.payloads: list = []
        self.leaves: dict[str, int] = {}
        self._memo: dict = {}

    def __len__(self):
        return len(self.ops)

    def _append(self, op, operands=(), payload=None):
        key = (op, operands, payload)
        if op not in LEAF_OPS:
            hit = self._memo.get(key)
            if hit is not None:
                return Value(self, hit)
        self.ops.append(op)
        self.operands.append(operands)
        self.payloads.append(payload)
        node_id = len(self.ops) - 1
        if op not in LEAF_OPS:
            self._memo[key] = node_id
        return Value(self, node_id)

    def constant(self, value: float) -> Value:
        if not isinstance(value, Real):
            raise ConfigurationError(f"constant must be a real scalar, got {type(value).__name__}")
        value = float(value)
        if value == 0.0:
            value = 0.0  # fold -0.0 into 0.0 so the memo sees one zero
        return self._append("constant", (), value)

    def _leaf(self, op, label, value):
        if label in self.leaves:
            node = Value(self, self.leaves[label])
            if node.op != op:
                raise ConfigurationError(f"leaf {label!r} already registered as {node.op}")
            return node
        node = self._append(op, (), None if value is None else float(value))
        self.leaves[label] = node.id
        return node

    def input(self, label: str, value=None) -> Value:
        """Register (or fetch) an input leaf; ``value`` is its default binding."""
        return self._leaf("input", label, value)

    def parameter(self, label: str, value=None) -> Value:
        return self._leaf("parameter", label, value)

    def leaf(self, label: str) -> Value:
        try:
            return Value(self, self.leaves[label])
        except KeyError:
            raise ConfigurationError(f"unknown leaf {label!r}") from None

    def _is_const(self, v: Value, c=None):
        if self.ops[v.id] != "constant":
            return False
        return c is None or self.payloads[v.id] == c

    def _node(self, op, args, payload=None):
        ids = tuple(a.id for a in args)
        consts = [self._is_const(a) for a in args]
        if all(consts):
            vals = [self.payloads[i] for i in ids]
            try:
                if op == "pow":
                    return self.constant(float(vals[0]) ** payload)
                folded = _FOLD[op](*vals)
            except (ZeroDivisionError, ValueError, OverflowError):
                folded = None
            if folded is not None and math.isfinite(folded):
                return self.constant(folded)
        if op == "add":
            if self._is_const(args[0], 0.0):
                return args[1]
            if self._is_const(args[1], 0.0):
                return args[0]
        elif op == "sub":
            if self._is_const(args[1], 0.0):
                return args[0]
            if self._is_const(args[0], 0.0):
                return self._node("neg", (args[1],))
            if ids[0] == ids[1]:
                return self.constant(0.0)
        elif op == "mul":
            if self._is_const(args[0], 0.0) or self._is_const(args[1], 0.0):
                return self.constant(0.0)
            if self._is_const(args[0], 1.0):
                return args[1]
            if self._is_const(args[1], 1.0):
                return args[0]
            if self._is_const(args[0], -1.0):
                return self._node("neg", (args[1],))
            if self._is_const(args[1], -1.0):
                return self._node("neg", (args[0],))
        elif op == "div":
            if self._is_const(args[1], 1.0):
                return args[0]
            if self._is_const(args[0], 0.0) and not self._is_const(args[1], 0.0):
                return self.constant(0.0)
        elif op == "neg":
            if self.ops[ids[0]] == "neg":
                return Value(self, self.operands[ids[0]][0])
        elif op == "pow":
            if payload == 0:
                return self.constant(1.0)
            if payload == 1:
                return args[0]
        return self._append(op, ids, payload)

    def ancestors(self, roots) -> list[int]:
        """Sorted ids of every node the given roots depend on (roots included)."""
        seen = set()
        stack = [r.id if isinstance(r, Value) else r for r in roots]
        while stack:
            i = stack.pop()
            if i in seen:
                continue
            seen.add(i)
            stack.extend(self.operands[i])
        return sorted(seen)


def exp(v):
    return v.exp() if isinstance(v, Value) else np.exp(v)


def sin(v):
    return v.sin() if isinstance(v, Value) else np.sin(v)


def cos(v):
    return v.cos() if isinstance(v, Value) else np.cos(v)


def tanh(v):
    return v.tanh() if isinstance(v, Value) else np.tanh(v)


def sqrt(v):
    return v.sqrt() if isinstance(v, Value) else np.sqrt(v)


_EVAL = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "neg": np.negative,
    "sqrt": np.sqrt,
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "tanh": np.tanh,
}


def _check_finite(vals: dict, ops):
    # one vectorized pass; on failure report the lowest (earliest) bad node
    ids = list(vals)
    scalar = [i for i in ids if np.ndim(vals[i]) == 0]
    bad = [i for i, ok in zip(scalar, np.isfinite(np.array([vals[i] for i in scalar], dtype=float))) if not ok]
    bad += [i for i in ids if np.ndim(vals[i]) and not np.all(np.isfinite(vals[i]))]
    if bad:
        i = min(bad)
        raise NumericError(f"non-finite value at node {i} ({ops[i]})", node=i)


def evaluate(tape: Tape, leaf_values: dict | None, nodes):
    """Evaluate ``nodes`` (a Value or a sequence of Values).

    ``leaf_values`` maps leaf labels to floats or equally shaped arrays and
    overrides the default bindings given at leaf registration. Returns a value
    for a single node, else a list.
    """
    single = isinstance(nodes, Value)
    nodes = [nodes] if single else list(nodes)
    leaf_values = leaf_values or {}
    unknown = set(leaf_values) - set(tape.leaves)
    if unknown:
        raise ConfigurationError(f"unknown leaf labels: {sorted(unknown)}")
    bound = {tape.leaves[k]: v for k, v in leaf_values.items()}

    vals: dict[int, object] = {}
    ops, operands, payloads = tape.ops, tape.operands, tape.payloads
    with np.errstate(all="ignore"):
        for i in tape.ancestors(nodes):
            op = ops[i]
            if op == "constant":
                vals[i] = payloads[i]
                continue
            if op in LEAF_OPS:
                if i in bound:
                    v = bound[i]
                elif payloads[i] is not None:
                    v = payloads[i]
                else:
                    label = next(k for k, j in tape.leaves.items() if j == i)
                    raise ConfigurationError(f"leaf {label!r} is unbound")
                v = np.asarray(v, dtype=float) if not isinstance(v, float) else v
            elif op == "pow":
                v = vals[operands[i][0]] ** payloads[i]
            else:
                v = _EVAL[op](*(vals[j] for j in operands[i]))
            vals[i] = v
    _check_finite(vals, ops)
    out = [vals[n.id] for n in nodes]
    return out[0] if single else out


def _accumulate(adj, i, contribution):
    prev = adj.get(i)
    adj[i] = contribution if prev is None else prev + contribution


def gradient(tape: Tape, output: Value, wrt) -> list[Value]:
    """Symbolic reverse-mode derivatives of ``output`` w.r.t. leaves.

    ``wrt`` holds leaf labels or leaf Values. The returned nodes live on the
    same tape and are themselves differentiable.
    """
    targets = [tape.leaf(w) if isinstance(w, str) else w for w in wrt]
    for t in targets:
        if t.op not in LEAF_OPS:
            raise ConfigurationError(f"node {t.id} is not a leaf")
    adj: dict[int, Value] = {output.id: tape.constant(1.0)}
    for i in reversed(tape.ancestors([output])):
        g = adj.get(i)
        if g is None:
            continue
        op = tape.ops[i]
        if op == "constant" or op in LEAF_OPS:
            continue
        node = Value(tape, i)
        args = [Value(tape, j) for j in tape.operands[i]]
        a = args[0]
        if op == "add":
            _accumulate(adj, a.id, g)
            _accumulate(adj, args[1].id, g)
        elif op == "sub":
            _accumulate(adj, a.id, g)
            _accumulate(adj, args[1].id, -g)
        elif op == "mul":
            b = args[1]
            _accumulate(adj, a.id, g * b)
            _accumulate(adj, b.id, g * a)
        elif op == "div":
            b = args[1]
            _accumulate(adj, a.id, g / b)
            _accumulate(adj, b.id, -(g * node) / b)
        elif op == "neg":
            _accumulate(adj, a.id, -g)
        elif op == "pow":
            k = tape.payloads[i]
            _accumulate(adj, a.id, g * (k * a ** (k - 1)))
        elif op == "sqrt":
            # d sqrt at 0 evaluates to a division by zero -> NumericError
            _accumulate(adj, a.id, g / (2.0 * node))
        elif op == "exp":
            _accumulate(adj, a.id, g * node)
        elif op == "sin":
            _accumulate(adj, a.id, g * a.cos())
        elif op == "cos":
            _accumulate(adj, a.id, -(g * a.sin()))
        elif op == "tanh":
            _accumulate(adj, a.id, g * (1.0 - node * node))
        else:  # pragma: no cover - ARITY lists every op
            raise ConfigurationError(f"unknown op {op!r}")
    zero = tape.constant(0.0)
    return [adj.get(t.id, zero) for t in targets]


def gradient_accumulate_params(tape: Tape, scalar_loss: Value, params, leaf_values=None) -> np.ndarray:
    """Numeric gradient of ``scalar_loss`` w.r.t. every entry of ``params``.

    ``params`` is a :class:`moveset.network.NetworkParams` whose entries were
    registered on the tape by :func:`moveset.network.forward`. The result is
    aligned with ``params.flatten()``.
    """
    from .network import param_labels

    labels = param_labels(params)
    bindings = dict(zip(labels, params.flatten()))
    missing = [lab for lab in labels if lab not in tape.leaves]
    if missing:
        # parameters never used by the loss contribute a zero gradient
        for lab in missing:
            tape.parameter(lab, bindings[lab])
    if leaf_values:
        bindings.update(leaf_values)
    grads = gradient(tape, scalar_loss, labels)
    values = evaluate(tape, bindings, grads)
    if any(np.ndim(v) for v in values):
        raise ConfigurationError("loss must be scalar; bind leaves to scalars, not arrays")
    out = np.array([float(v) for v in values])
    bad = np.flatnonzero(~np.isfinite(out))
    if bad.size:
        raise NumericError(f"non-finite gradient at parameter {bad[0]}", node=int(bad[0]))
    return out


class TapeOps:
    """Calculus namespace over tape nodes.

    ``d(expr, k)`` differentiates w.r.t. the ``k``-th coordinate leaf. Code
    written against this namespace also runs on batched jets through
    :class:`moveset.jets.JetOps`.
    """

    exp = staticmethod(exp)
    sin = staticmethod(sin)
    cos = staticmethod(cos)
    tanh = staticmethod(tanh)
    sqrt = staticmethod(sqrt)

    def __init__(self, coords):
        self.coords = list(coords)

    def d(self, expr, k):
        if not isinstance(expr, Value):
            return 0.0
        return gradient(expr.tape, expr, [self.coords[k]])[0]
