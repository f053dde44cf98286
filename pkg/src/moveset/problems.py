"""Benchmark problems, reference solutions and point samplers.

Problem registry keys: ``poisson1d-phenomenon``, ``poisson2d-one-peak``,
``poisson2d-two-peaks``, ``burgers1d``, ``burgers2d``. Forcing terms are
derived by differentiating the closed-form solutions; boundary and initial
targets are evaluated from those formulas when a set is sampled.

Grids are tensor lattices built with ``np.linspace`` per dimension and
flattened row-major (last dimension fastest).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp, roots_hermite

from .autodiff import ConfigurationError, TapeOps, Value, evaluate
from .mmpde import Domain, PointSet
from .monitor import AnalyticField, MonitorSpec
from .network import NetworkConfig
from .pinn import (
    BURGERS1D_NU,
    BURGERS2D_NU,
    LaplacianForcing,
    PinnConfig,
    ResidualOperator,
    burgers1d_operator,
    burgers2d_operator,
    poisson,
    residual_at,
)


# --- samplers ------------------------------------------------------------------

def lattice_axes(domain: Domain, counts):
    counts = tuple(int(n) for n in counts)
    if len(counts) != domain.ndim or min(counts) < 2:
        raise ConfigurationError(f"need one count >= 2 per dimension, got {counts}")
    return [np.linspace(a, b, n) for a, b, n in zip(domain.lower, domain.upper, counts)]


def tensor_grid(axes) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def sample_uniform_grid(domain: Domain, counts, include_boundary=True, provenance="uniform-grid") -> PointSet:
    """Tensor lattice with ``counts[k]`` nodes per axis; optionally only its interior nodes."""
    axes = lattice_axes(domain, counts)
    if not include_boundary:
        axes = [a[1:-1] for a in axes]
        if any(a.size == 0 for a in axes):
            raise ConfigurationError("an interior-only grid needs at least 3 nodes per axis")
    return PointSet(tensor_grid(axes), domain, provenance)


def interior_grid(domain: Domain, counts) -> PointSet:
    """Exactly ``counts`` nodes per axis strictly inside the box (a lattice of counts+2 minus its rim)."""
    return sample_uniform_grid(domain, [n + 2 for n in counts], include_boundary=False)


def boundary_lattice(domain: Domain, counts) -> np.ndarray:
    """Lattice nodes on the spatial faces and the initial-time face."""
    P = tensor_grid(lattice_axes(domain, counts))
    return P[boundary_predicate(domain, P)]


def boundary_predicate(domain: Domain, P) -> np.ndarray:
    P = np.atleast_2d(P)
    mask = np.zeros(len(P), dtype=bool)
    for k, role in enumerate(domain.roles):
        mask |= P[:, k] == domain.lower[k]
        if role == "spatial":
            mask |= P[:, k] == domain.upper[k]
    return mask


def sample_boundary(domain: Domain, count, seed, counts, target=None) -> PointSet:
    """Draw ``count`` distinct boundary-lattice nodes with a PCG64 generator.

    ``counts`` fixes the lattice; ``target(P)`` supplies the boundary values.
    The draw is returned in lattice order so equal seeds give equal files.
    """
    L = boundary_lattice(domain, counts)
    if count > len(L):
        raise ConfigurationError(f"asked for {count} boundary points, lattice has {len(L)}")
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = np.sort(rng.choice(len(L), size=count, replace=False))
    P = L[idx]
    values = None if target is None else target(P)
    return PointSet(P, domain, "boundary-lattice", values)


# --- problem specification ---------------------------------------------------------

@dataclass(frozen=True)
class ProblemSpec:
    name: str
    domain: Domain
    operator: ResidualOperator
    exact: AnalyticField | None
    boundary_value: object  # P -> values on boundary/initial points
    interior_counts: tuple
    test_counts: tuple
    boundary_count: int
    monitor: MonitorSpec
    pinn: PinnConfig
    t_ref: float | None = None
    eval_times: tuple = ()
    reference: object = field(default=None, compare=False)

    def truth(self, P) -> np.ndarray:
        if self.exact is not None:
            return self.exact.numpy(P)
        return self.reference(P)

    def interior(self, counts=None) -> PointSet:
        return interior_grid(self.domain, counts or self.interior_counts)

    def boundary(self, seed, count=None, counts=None) -> PointSet:
        return sample_boundary(self.domain, count or self.boundary_count, seed, counts or self.test_counts,
                               self.boundary_value)

    def is_boundary(self, P) -> np.ndarray:
        return boundary_predicate(self.domain, P)

    def check_exact(self, n=100, seed=0, tol=1e-8) -> float:
        """Max |residual| of the exact solution at ``n`` random points (debug/test hook)."""
        if self.exact is None:
            raise ConfigurationError(f"{self.name} has no closed-form solution")
        rng = np.random.Generator(np.random.PCG64(seed))
        lo, hi = np.array(self.domain.lower), np.array(self.domain.upper)
        worst = max(abs(exact_residual(self, p)) for p in lo + (hi - lo) * rng.random((n, self.domain.ndim)))
        if worst > tol:
            raise ConfigurationError(f"{self.name}: exact solution leaves residual {worst:g}")
        return worst


def exact_residual(problem: ProblemSpec, point) -> float:
    """PDE residual of the closed-form solution at one point, through the scalar tape."""
    r = residual_at(lambda c: problem.exact.expr(c, TapeOps(c)), problem.operator, point)
    return float(evaluate(r.tape, None, r)) if isinstance(r, Value) else float(r)


# --- closed forms ----------------------------------------------------------------

def _phenomenon_u(k):
    def u(x, xp):
        return xp.exp(-2.0 * (x - 4.0) * (x - 5.0)) * xp.sin(k * x)

    return u


def _one_peak(x, y, xp):
    return xp.exp(-1000.0 * (x * x + y * y))


def _two_peaks(x, y, xp):
    return xp.exp(-1000.0 * (x * x + (y - 0.5) * (y - 0.5))) + xp.exp(-1000.0 * (x * x + (y + 0.5) * (y + 0.5)))


def _burgers2d_wave(x, y, t, xp):
    return 1.0 / (xp.exp(5.0 * (x + y - t)) + 1.0)


@lru_cache(maxsize=None)
def poisson1d_phenomenon(k: int = 2) -> ProblemSpec:
    if int(k) != k or k < 1:
        raise ConfigurationError("frequency k must be a positive integer")
    exact = AnalyticField(_phenomenon_u(float(k)), 1, f"phenomenon-k{k}")
    dom = Domain.box((0.0, 3.0 * math.pi))
    return ProblemSpec(
        name="poisson1d-phenomenon",
        domain=dom,
        operator=poisson(LaplacianForcing(exact)),
        exact=exact,
        boundary_value=exact.numpy,
        interior_counts=(300,),
        test_counts=(1000,),
        boundary_count=2,
        monitor=MonitorSpec.sqrt_form(1.0, 0.0, (1.0,)),
        pinn=PinnConfig(NetworkConfig(1, 1, 4, 60), epochs=20000, m_r=300, m_b=2),
    )


@lru_cache(maxsize=None)
def poisson2d_one_peak() -> ProblemSpec:
    exact = AnalyticField(_one_peak, 2, "one-peak")
    return ProblemSpec(
        name="poisson2d-one-peak",
        domain=Domain.box((-1.0, 1.0), (-1.0, 1.0)),
        operator=poisson(LaplacianForcing(exact)),
        exact=exact,
        boundary_value=exact.numpy,
        interior_counts=(100, 100),
        test_counts=(400, 400),
        boundary_count=300,
        monitor=MonitorSpec.sqrt_form(1.0, 100.0, (1.0, 1.0)),
        pinn=PinnConfig(NetworkConfig(2, 1, 4, 40), epochs=20000, m_b=300),
    )


ONE_PEAK_ITERATIVE_MONITOR = MonitorSpec.affine_form(1.0, 0.5)


@lru_cache(maxsize=None)
def poisson2d_two_peaks() -> ProblemSpec:
    exact = AnalyticField(_two_peaks, 2, "two-peaks")
    return ProblemSpec(
        name="poisson2d-two-peaks",
        domain=Domain.box((-1.0, 1.0), (-1.0, 1.0)),
        operator=poisson(LaplacianForcing(exact)),
        exact=exact,
        boundary_value=exact.numpy,
        interior_counts=(100, 100),
        test_counts=(400, 400),
        boundary_count=400,
        monitor=MonitorSpec.sqrt_form(1.0, 100.0, (0.0, 0.0)),
        pinn=PinnConfig(NetworkConfig(2, 1, 4, 40), epochs=20000, m_b=400),
    )


def _burgers1d_bc(P):
    P = np.atleast_2d(P)
    out = np.zeros(len(P))
    init = P[:, 1] == 0.0
    out[init] = -np.sin(np.pi * P[init, 0])
    return out


@lru_cache(maxsize=None)
def burgers1d() -> ProblemSpec:
    return ProblemSpec(
        name="burgers1d",
        domain=Domain.box((-1.0, 1.0), (0.0, 1.0), temporal=1),
        operator=burgers1d_operator(BURGERS1D_NU),
        exact=None,
        boundary_value=_burgers1d_bc,
        interior_counts=(200, 100),
        test_counts=(400, 400),
        boundary_count=400,
        monitor=MonitorSpec.sqrt_form(1.0, 1.0, (0.01,)),
        pinn=PinnConfig(NetworkConfig(2, 1, 8, 20), epochs=20000, m_b=400),
        t_ref=0.0,
        eval_times=(0.3, 0.5, 0.7, 0.9),
        reference=lambda P: burgers1d_reference(P[:, 0], P[:, 1]),
    )


@lru_cache(maxsize=None)
def burgers2d() -> ProblemSpec:
    exact = AnalyticField(_burgers2d_wave, 3, "burgers2d-wave")
    return ProblemSpec(
        name="burgers2d",
        domain=Domain.box((-0.5, 0.5), (-0.5, 0.5), (0.4, 0.7), temporal=2),
        operator=burgers2d_operator(BURGERS2D_NU),
        exact=exact,
        boundary_value=exact.numpy,
        interior_counts=(80, 80, 15),
        test_counts=(400, 400, 100),
        boundary_count=8000,
        monitor=MonitorSpec.sqrt_form(1.0, 0.0, (1.0, 1.0)),
        pinn=PinnConfig(NetworkConfig(3, 1, 8, 20), epochs=5000, m_b=8000),
        t_ref=0.5,
        eval_times=(0.45, 0.5, 0.6, 0.7),
    )


REGISTRY = {
    "poisson1d-phenomenon": poisson1d_phenomenon,
    "poisson2d-one-peak": poisson2d_one_peak,
    "poisson2d-two-peaks": poisson2d_two_peaks,
    "burgers1d": burgers1d,
    "burgers2d": burgers2d,
}


def get_problem(key: str, **kwargs) -> ProblemSpec:
    try:
        return REGISTRY[key](**kwargs)
    except KeyError:
        raise ConfigurationError(f"unknown problem {key!r}; choose from {sorted(REGISTRY)}") from None


# --- Burgers 1D reference (Cole–Hopf) ------------------------------------------------

# --- analytic demo fields for standalone MMPDE runs ------------------------------

def _gaussian_peak(c):
    def u(x, y, xp):
        return c * xp.exp(-c * c * (x * x + y * y))

    return u


def _ellipse(x, y, xp):
    s = 4.0 * x * x + 9.0 * y * y - 1.0
    return xp.exp(-8.0 * s * s)


def _parabola(x, y, xp):
    s = -x * x + y + 0.5
    return xp.exp(-100.0 * s * s)


def demo_field(name: str, c: float = 10.0):
    """``(field, monitor)`` for a named analytic demo on [-1, 1]²; ``field`` is None for ``constant``."""
    if name == "gaussian-peak":
        return AnalyticField(_gaussian_peak(float(c)), 2, f"gaussian-peak(c={c:g})"), MonitorSpec.sqrt_form(1.0, 1.0)
    if name == "one-peak":
        return AnalyticField(_one_peak, 2, "one-peak"), ONE_PEAK_ITERATIVE_MONITOR
    if name == "ellipse":
        return AnalyticField(_ellipse, 2, "ellipse"), MonitorSpec.affine_form(1.0, 1.0)
    if name == "parabola":
        return AnalyticField(_parabola, 2, "parabola"), MonitorSpec.affine_form(1.0, 1.0)
    if name == "constant":
        return None, MonitorSpec.constant()
    raise ConfigurationError(f"unknown demo field {name!r}; choose from {sorted(DEMO_FIELDS)}")


DEMO_FIELDS = ("constant", "ellipse", "gaussian-peak", "one-peak", "parabola")
DEMO_DOMAIN = Domain.box((-1.0, 1.0), (-1.0, 1.0))


def burgers1d_reference(x, t, nu=BURGERS1D_NU, nodes=200):
    """Viscous Burgers solution for u(x,0) = −sin(πx) via the Cole–Hopf transform.

    With y = x − sqrt(4νt)·z the solution is a ratio of Gauss–Hermite sums::

        u = −Σ w_i sin(πy_i) F(y_i) / Σ w_i F(y_i),   F(y) = exp(−cos(πy) / (2πν))

    evaluated as a softmax over log-weights so the huge exponents stay finite.
    Requires t > 0; at t = 0 the initial condition is returned.
    """
    x, t = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(t, dtype=np.float64))
    if np.any(t < 0):
        raise ConfigurationError("reference solution needs t >= 0")
    z, w = _hermite(nodes)
    c = np.sqrt(4.0 * nu * t)[..., None]
    y = x[..., None] - c * z
    logw = np.log(w) - np.cos(np.pi * y) / (2.0 * np.pi * nu)
    p = np.exp(logw - logsumexp(logw, axis=-1, keepdims=True))
    u = -np.sum(p * np.sin(np.pi * y), axis=-1)
    return np.where(t == 0, -np.sin(np.pi * x), u)


@lru_cache(maxsize=8)
def _hermite(n):
    z, w = roots_hermite(n)
    keep = w > 0
    return z[keep], w[keep]
