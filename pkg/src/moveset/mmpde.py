"""Moving-mesh residual and MMPDE-Net training.

A network N maps computational points ξ to physical points
``x = ξ + φ(ξ)·N(ξ)``, where the bump φ vanishes on the boundary. Training
minimizes the steady Winslow residual (x_t ≡ 0)::

    J  = x_ξ y_η − x_η y_ξ
    S1 = ∂ξ[(x_η² + y_η²)/(Jw)] − ∂η[(x_ξ x_η + y_ξ y_η)/(Jw)]
    S2 = −∂ξ[(x_ξ x_η + y_ξ y_η)/(Jw)] + ∂η[(x_ξ² + y_ξ²)/(Jw)]
    Rx = (x_ξ S1 + x_η S2)/J,   Ry = (y_ξ S1 + y_η S2)/J

In 2D the monitor w is a frozen function of the input points ξ. In 1D the
residual is the equidistribution form ``R = ∂ξ[w(x(ξ)) x_ξ]``, with w
composed with the map.

Every formula takes an ``ops`` namespace (:class:`~moveset.autodiff.TapeOps`
or :class:`~moveset.jets.JetOps`), so the per-point reference residual and
the compiled batch loss used for training share one implementation.
"""

from __future__ import annotations

import csv
import functools
from dataclasses import dataclass, field, replace
from pathlib import Path

import jax.numpy as jnp
import numpy as np

from . import autodiff, jets, training
from .autodiff import ConfigurationError, NumericError, TapeOps, Value
from .jets import Jet, JetOps
from .monitor import AnalyticField, MonitorSpec, PinnField, _mlp_on_coords, check_positive, monitor_expr, monitor_jet
from .network import NetworkConfig, NetworkParams, forward, forward_numpy, init_xavier

J_MIN = 1e-12


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box; at most one dimension is temporal (kept last by convention)."""

    lower: tuple
    upper: tuple
    roles: tuple = ()

    def __post_init__(self):
        lo = tuple(float(a) for a in self.lower)
        hi = tuple(float(b) for b in self.upper)
        roles = tuple(self.roles) or ("spatial",) * len(lo)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "roles", roles)
        if not (len(lo) == len(hi) == len(roles)) or not lo:
            raise ConfigurationError("domain bounds and roles must have equal, nonzero length")
        if any(a >= b for a, b in zip(lo, hi)):
            raise ConfigurationError(f"domain needs lower < upper: {lo} {hi}")
        if any(r not in ("spatial", "temporal") for r in roles) or roles.count("temporal") > 1:
            raise ConfigurationError(f"bad dimension roles {roles}")
        if not 1 <= len(self.spatial_dims) <= 2:
            raise ConfigurationError("MMPDE supports one or two spatial dimensions")

    @classmethod
    def box(cls, *bounds, temporal=None) -> Domain:
        roles = ["spatial"] * len(bounds)
        if temporal is not None:
            roles[temporal] = "temporal"
        return cls(tuple(b[0] for b in bounds), tuple(b[1] for b in bounds), tuple(roles))

    @property
    def ndim(self) -> int:
        return len(self.lower)

    @property
    def spatial_dims(self) -> list[int]:
        return [k for k, r in enumerate(self.roles) if r == "spatial"]

    @property
    def temporal_dim(self) -> int | None:
        return self.roles.index("temporal") if "temporal" in self.roles else None

    def spatial(self) -> Domain:
        dims = self.spatial_dims
        return Domain(tuple(self.lower[k] for k in dims), tuple(self.upper[k] for k in dims))

    def contains(self, P, atol=0.0) -> np.ndarray:
        P = np.atleast_2d(P)
        return np.all((P >= np.array(self.lower) - atol) & (P <= np.array(self.upper) + atol), axis=1)

    def on_boundary(self, P) -> np.ndarray:
        """Rows lying on a face of the box (any role)."""
        P = np.atleast_2d(P)
        return np.any((P == np.array(self.lower)) | (P == np.array(self.upper)), axis=1)

    def column_names(self) -> list[str]:
        names, k = [], 0
        for r in self.roles:
            if r == "temporal":
                names.append("t")
            else:
                names.append(f"x{k}")
                k += 1
        return names

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "roles": list(self.roles)}


@dataclass(frozen=True)
class PointSet:
    coords: np.ndarray
    domain: Domain
    provenance: str = "uniform-grid"
    values: np.ndarray | None = None  # target values for boundary/initial sets

    def __post_init__(self):
        P = np.array(self.coords, dtype=np.float64, ndmin=2)
        if P.shape[0] == 0 or P.shape[1] != self.domain.ndim:
            raise ConfigurationError(f"point set must be M×{self.domain.ndim} with M > 0, got {P.shape}")
        if not np.all(np.isfinite(P)):
            raise ConfigurationError("point set has non-finite coordinates")
        if not np.all(self.domain.contains(P)):
            raise ConfigurationError("point set leaves its domain")
        P.setflags(write=False)
        object.__setattr__(self, "coords", P)
        if self.values is not None:
            V = np.array(self.values, dtype=np.float64).reshape(-1)
            if V.shape[0] != P.shape[0]:
                raise ConfigurationError("one target value per point is required")
            V.setflags(write=False)
            object.__setattr__(self, "values", V)

    def __len__(self):
        return self.coords.shape[0]

    def spatial_coords(self) -> np.ndarray:
        return self.coords[:, self.domain.spatial_dims]

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.domain.column_names())
            for row in self.coords:
                w.writerow([repr(float(v)) for v in row])
        return path


def read_points_csv(path, domain: Domain, provenance="file") -> PointSet:
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    if rows[0] != domain.column_names():
        raise ConfigurationError(f"{path}: header {rows[0]} does not match {domain.column_names()}")
    return PointSet(np.array(rows[1:], dtype=np.float64), domain, provenance)


@dataclass(frozen=True)
class MmpdeConfig:
    net: NetworkConfig = NetworkConfig(2, 2, 8, 20)
    epochs: int = 20000
    lr: float = 1e-4
    iterations: int = 1
    monitor: MonitorSpec = MonitorSpec.sqrt_form(1.0, 0.0, (1.0, 1.0))
    time_derivative_mode: str = "steady-state"
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 1 or self.iterations < 1:
            raise ConfigurationError("MMPDE needs epochs >= 1 and iterations >= 1")
        if self.time_derivative_mode != "steady-state":
            raise ConfigurationError("only the steady-state mode is implemented")
        if self.net.input_dim != self.net.output_dim:
            raise ConfigurationError("MMPDE-Net maps points to points: input_dim must equal output_dim")
        training.resolve_dtype(self.dtype)

    def with_dim(self, d: int) -> MmpdeConfig:
        return replace(self, net=replace(self.net, input_dim=d, output_dim=d))


@dataclass
class MmpdeResult:
    points: PointSet
    params: NetworkParams
    history: list
    warnings: list = field(default_factory=list)
    final_loss: float = float("nan")


# --- formulas shared by the tape and jet paths --------------------------------

def bump(coords, domain: Domain):
    """Boundary bump φ, zero on ∂Ω and 1 at the centre."""
    phi = 1.0
    for c, a, b in zip(coords, domain.lower, domain.upper):
        phi = phi * ((c - a) * (b - c)) * (4.0 / (b - a) ** 2)
    return phi


def hard_boundary_transform(raw_output, inputs, domain: Domain):
    """``x_k = ξ_k + φ(ξ)·N_k`` for each coordinate."""
    phi = bump(inputs, domain)
    return [xi + phi * n for xi, n in zip(inputs, raw_output)]


def jacobian_J(x, y, ops):
    return ops.d(x, 0) * ops.d(y, 1) - ops.d(x, 1) * ops.d(y, 0)


def s_terms(x, y, J, w, ops):
    """S1 and S2 of the Winslow residual from the map, its Jacobian and w."""
    x_xi, x_eta = ops.d(x, 0), ops.d(x, 1)
    y_xi, y_eta = ops.d(y, 0), ops.d(y, 1)
    Jw = J * w
    A = (x_eta * x_eta + y_eta * y_eta) / Jw
    B = (x_xi * x_eta + y_xi * y_eta) / Jw
    C = (x_xi * x_xi + y_xi * y_xi) / Jw
    S1 = ops.d(A, 0) - ops.d(B, 1)
    S2 = ops.d(C, 1) - ops.d(B, 0)
    return S1, S2


def winslow_residual(x, y, w, ops):
    J = jacobian_J(x, y, ops)
    S1, S2 = s_terms(x, y, J, w, ops)
    Rx = (ops.d(x, 0) * S1 + ops.d(x, 1) * S2) / J
    Ry = (ops.d(y, 0) * S1 + ops.d(y, 1) * S2) / J
    return Rx, Ry


def composed_monitor_1d(spec: MonitorSpec, field_, x, ops):
    """w(x(ξ)) with the field gradient taken in x via u_x = ∂ξ[u(x(ξ))] / x_ξ."""
    if not spec.uses_field:
        return spec.combine(0.0, (), ops)
    u = field_.expr([x], ops)
    grads = (ops.d(u, 0) / ops.d(x, 0),) if spec.uses_gradient else ()
    return spec.combine(u, grads, ops)


def equidistribution_residual(x, w, ops):
    return ops.d(w * ops.d(x, 0), 0)


# --- per-point reference path on the scalar tape ------------------------------

def _point_leaves(tape, point, prefix="xi"):
    return [tape.input(f"{prefix}{k}", float(c)) for k, c in enumerate(point)]


def _check_J(tape, J):
    if not isinstance(J, Value):
        Jv = float(J)
    else:
        Jv = autodiff.evaluate(tape, None, J)
    if abs(Jv) < J_MIN:
        raise NumericError(f"degenerate map: |J| = {abs(Jv):.3g}", node=getattr(J, "id", None))


def mmpde_residual_2d(params: NetworkParams, config: MmpdeConfig, point, field_, domain: Domain, tape=None, prefix="xi"):
    """(R_x, R_y) graph nodes at one input point; parameters are ``theta<i>`` leaves."""
    tape = autodiff.Tape() if tape is None else tape
    xi = _point_leaves(tape, point, prefix)
    ops = TapeOps(xi)
    x, y = hard_boundary_transform(forward(params, xi), xi, domain)
    _check_J(tape, jacobian_J(x, y, ops))
    w = monitor_expr(config.monitor, field_, xi, ops)
    return winslow_residual(x, y, w, ops)


def mmpde_residual_1d(params: NetworkParams, config: MmpdeConfig, point, field_, domain: Domain, tape=None, prefix="xi"):
    tape = autodiff.Tape() if tape is None else tape
    xi = _point_leaves(tape, np.atleast_1d(point), prefix)
    ops = TapeOps(xi)
    (x,) = hard_boundary_transform(forward(params, xi), xi, domain)
    x_xi = ops.d(x, 0)
    if float(autodiff.evaluate(tape, None, x_xi) if isinstance(x_xi, Value) else x_xi) <= 0:
        raise NumericError("fold-over: x_ξ <= 0", node=getattr(x_xi, "id", None))
    w = composed_monitor_1d(config.monitor, field_, x, ops)
    return equidistribution_residual(x, w, ops)


def mmpde_loss(params: NetworkParams, config: MmpdeConfig, points: PointSet, field_, tape=None) -> Value:
    """Mean squared residual over ``points`` as one scalar graph node."""
    tape = autodiff.Tape() if tape is None else tape
    dom = points.domain
    total = 0.0
    for i, p in enumerate(points.coords):
        if dom.ndim == 2:
            Rx, Ry = mmpde_residual_2d(params, config, p, field_, dom, tape, prefix=f"p{i}_xi")
            total = total + (Rx * Rx + Ry * Ry)
        else:
            R = mmpde_residual_1d(params, config, p, field_, dom, tape, prefix=f"p{i}_xi")
            total = total + R * R
    if not isinstance(total, Value):
        total = tape.constant(float(total))
    return total / float(len(points))


# --- compiled batch path -------------------------------------------------------

_PAIRS_2D = ((0, 0), (0, 1), (1, 1))


def batch_residual_2d(tree, P, w: Jet, domain: Domain):
    xi = jets.coordinates(P, (0, 1), _PAIRS_2D)
    N = jets.mlp_jet(tree, P, (0, 1), _PAIRS_2D)
    x, y = hard_boundary_transform([N[:, 0], N[:, 1]], xi, domain)
    return winslow_residual(x, y, w, JetOps)


def batch_residual_1d(tree, P, field_, spec: MonitorSpec, domain: Domain):
    xi = jets.coordinates(P, (0,), ((0, 0),))
    N = jets.mlp_jet(tree, P, (0,), ((0, 0),))
    (x,) = hard_boundary_transform([N[:, 0]], xi, domain)
    w = composed_monitor_1d(spec, field_, x, JetOps)
    return equidistribution_residual(x, w, JetOps)


@dataclass(frozen=True)
class _TracedPinnField:
    tree: tuple
    t_ref: float | None

    def expr(self, coords, ops):
        return _mlp_on_coords(self.tree, coords, self.t_ref)[:, 0]


@functools.lru_cache(maxsize=32)
def _step_2d(domain: Domain):
    def loss_fn(tree, data):
        P, wv, wg0, wg1 = data
        w = Jet(wv, (wg0, wg1), {}, order=1)
        Rx, Ry = batch_residual_2d(tree, P, w, domain)
        return jnp.mean(Rx.val ** 2 + Ry.val ** 2), ()

    return training.make_step(loss_fn)


@functools.lru_cache(maxsize=32)
def _step_1d(domain: Domain, spec: MonitorSpec, field_key):
    kind, payload = field_key

    def loss_fn(tree, data):
        P, field_tree = data
        field_ = payload if kind == "analytic" else _TracedPinnField(field_tree, payload)
        R = batch_residual_1d(tree, P, field_, spec, domain)
        return jnp.mean(R.val ** 2), ()

    return training.make_step(loss_fn)


def _field_key(field_):
    if field_ is None or isinstance(field_, AnalyticField):
        return ("analytic", field_)
    return ("pinn", field_.t_ref)


def monitor_at(spec: MonitorSpec, field_, P) -> Jet:
    """w and ∇w at spatial points, float64, with the positivity check applied."""
    w = monitor_jet(spec, field_, P)
    check_positive(w)
    return w


def _prepare(config: MmpdeConfig, points: PointSet, field_):
    dom = points.domain.spatial()
    if points.domain.ndim != dom.ndim:
        raise ConfigurationError("MMPDE acts on spatial point sets; slice time first")
    if config.net.input_dim != dom.ndim:
        config = config.with_dim(dom.ndim)
    dtype = training.resolve_dtype(config.dtype)
    P = points.coords
    if dom.ndim == 2:
        w = monitor_at(config.monitor, field_, P)
        grads = [np.broadcast_to(np.asarray(g if g is not None else 0.0), (len(P),)) for g in w.grad]
        data = tuple(jnp.asarray(a, dtype) for a in (P, np.asarray(w.val), grads[0], grads[1]))
        step = _step_2d(dom)
    else:
        # w depends on the moving x; check positivity at the inputs as a guard
        check_positive(monitor_jet(config.monitor, field_, P))
        ftree = None
        if isinstance(field_, PinnField):
            ftree = field_.params.tree(dtype)
        data = (jnp.asarray(P, dtype), ftree)
        step = _step_1d(dom, config.monitor, _field_key(field_))
    return config, dom, step, data, dtype


def map_points(params: NetworkParams, P, domain: Domain) -> np.ndarray:
    """Apply the trained transform ``ξ ↦ ξ + φ(ξ) N(ξ)`` in float64."""
    P = np.asarray(P, dtype=np.float64)
    N = forward_numpy(params, P)
    phi = bump([P[:, k] for k in range(P.shape[1])], domain)
    X = P + phi[:, None] * N
    on_b = domain.on_boundary(P)
    X[on_b] = P[on_b]  # φ is exactly zero there; keep the bits too
    return X


def jacobian_at(params: NetworkParams, P, domain: Domain) -> np.ndarray:
    """J (2D) or x_ξ (1D) of the transform at the rows of ``P``."""
    P = np.asarray(P, dtype=np.float64)
    d = P.shape[1]
    xi = jets.coordinates(P, range(d))
    N = jets.mlp_jet(params.tree(np.float64), P, range(d))
    X = hard_boundary_transform([N[:, k] for k in range(d)], xi, domain)
    if d == 1:
        return np.asarray(X[0].grad[0]) * np.ones(len(P))
    J = X[0].grad[0] * X[1].grad[1] - X[0].grad[1] * X[1].grad[0]
    return np.asarray(J) * np.ones(len(P))


def init_untangled(net: NetworkConfig, P, domain: Domain, max_halvings=30) -> NetworkParams:
    """Xavier initialization whose initial transform does not fold at ``P``.

    A random deep network occasionally produces a map with J <= 0 somewhere,
    which makes the Winslow residual blow up before training starts. In that
    case the output layer is halved until the map is untangled at the inputs.
    """
    params = init_xavier(net)
    for _ in range(max_halvings):
        if jacobian_at(params, P, domain).min() > 0:
            return params
        params.weights[-1] = params.weights[-1] * 0.5
    return params


def train_mmpde(config: MmpdeConfig, points: PointSet, field_=None, seed=None, iteration=1) -> MmpdeResult:
    """Train MMPDE-Net on ``points`` with the monitor frozen there and return the moved points."""
    config, dom, step, data, dtype = _prepare(config, points, field_)
    net = config.net if seed is None else config.net.with_seed(seed)
    start = init_untangled(net, points.coords, dom)
    result = training.train(step, start, data, config.epochs, config.lr, dtype)
    P = points.coords
    X = map_points(result.params, P, dom)
    warnings = []
    jac = jacobian_at(result.params, P, dom)
    if jac.min() <= 0:
        warnings.append(f"mmpde iteration {iteration}: fold-over, min J = {jac.min():.6g}")
    inside = dom.contains(X)
    if not inside.all():
        warnings.append(f"mmpde iteration {iteration}: {int((~inside).sum())} points left the domain and were clipped")
        X = np.clip(X, dom.lower, dom.upper)
    moved = PointSet(X, dom, f"mmpde-iteration {iteration}")
    return MmpdeResult(moved, result.params, result.history, warnings, result.final_loss)


def train_mmpde_iterative(config: MmpdeConfig, points: PointSet, field_=None, out_dir=None) -> list[MmpdeResult]:
    """Repeat MMPDE-Net training, re-initializing the network each time.

    Iteration ``i`` (1-based) uses seed ``config.net.seed + i - 1`` and builds
    its monitor at the points produced by iteration ``i - 1``. With
    ``out_dir`` each iteration's points go to ``points_iter{i}.csv``.
    """
    results = []
    current = points
    for i in range(1, config.iterations + 1):
        res = train_mmpde(config, current, field_, seed=config.net.seed + i - 1, iteration=i)
        if out_dir is not None:
            res.points.write_csv(Path(out_dir) / f"points_iter{i}.csv")
        results.append(res)
        current = res.points
    return results


def mmpde_loss_batch(params: NetworkParams, config: MmpdeConfig, points: PointSet, field_=None, dtype=None) -> float:
    """Compiled-path value of the MMPDE loss (what training minimizes)."""
    if dtype is not None:
        config = replace(config, dtype=dtype)
    config, _, step, data, dt = _prepare(config, points, field_)
    return training.evaluate_loss(step, params, data, dt)[0]


def peak_fraction(P, radius=0.2, center=(0.0, 0.0)) -> float:
    """Share of points within ``radius`` of ``center``."""
    P = np.asarray(P)
    return float(np.mean(np.linalg.norm(P - np.asarray(center), axis=1) < radius))
