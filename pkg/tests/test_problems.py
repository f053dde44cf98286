import math

import numpy as np
import pytest

from moveset import autodiff as ad
from moveset.autodiff import ConfigurationError, TapeOps
from moveset.jets import JetOps, coordinates
from moveset.pinn import BURGERS1D_NU, residual_at
from moveset.problems import (
    DEMO_FIELDS,
    REGISTRY,
    burgers1d,
    burgers1d_reference,
    burgers2d,
    demo_field,
    get_problem,
    interior_grid,
    poisson1d_phenomenon,
    poisson2d_one_peak,
    poisson2d_two_peaks,
    sample_boundary,
    sample_uniform_grid,
)


@pytest.mark.parametrize("key", sorted(REGISTRY))
def test_registry_problems_are_consistent(key):
    prob = get_problem(key)
    assert prob.name == key
    pts = prob.interior()
    assert len(pts) == int(np.prod(prob.interior_counts))
    assert not prob.is_boundary(pts.coords).any()
    b = prob.boundary(seed=0)
    assert len(b) == prob.boundary_count
    assert prob.is_boundary(b.coords).all()
    np.testing.assert_allclose(b.values, prob.truth(b.coords), atol=1e-12)


def test_unknown_problem_key():
    with pytest.raises(ConfigurationError):
        get_problem("heat3d")


def test_interior_grid_counts_and_spacing():
    dom = poisson2d_one_peak().domain
    g = interior_grid(dom, (4, 3))
    assert len(g) == 12
    xs = np.unique(g.coords[:, 0])
    np.testing.assert_allclose(xs, np.linspace(-1, 1, 6)[1:-1])


def test_uniform_grid_is_row_major():
    dom = poisson2d_one_peak().domain
    g = sample_uniform_grid(dom, (2, 3)).coords
    np.testing.assert_array_equal(g[:3, 0], [-1, -1, -1])
    np.testing.assert_array_equal(g[:3, 1], [-1, 0, 1])


def test_boundary_sampling_seeded_and_excludes_final_time():
    prob = burgers1d()
    a, b, c = prob.boundary(1), prob.boundary(1), prob.boundary(2)
    np.testing.assert_array_equal(a.coords, b.coords)
    assert not np.array_equal(a.coords, c.coords)
    assert len(np.unique(a.coords, axis=0)) == len(a)
    top = a.coords[:, 1] == 1.0
    assert np.all(np.abs(a.coords[top, 0]) == 1.0)  # only the corners of the final-time face
    init = a.coords[:, 1] == 0.0
    np.testing.assert_allclose(a.values[init], -np.sin(np.pi * a.coords[init, 0]))
    np.testing.assert_array_equal(a.values[~init], 0.0)


def test_boundary_sampling_too_many():
    dom = poisson2d_one_peak().domain
    with pytest.raises(ConfigurationError):
        sample_boundary(dom, 100, 0, (5, 5))


def _independent_residual(prob, P):
    """Tape residual of the closed form minus a forcing evaluated through jets."""
    out = []
    for p in P:
        t = ad.Tape()
        xs = [t.input(f"x{k}", v) for k, v in enumerate(p)]
        u = prob.exact.expr(xs, TapeOps(xs))
        ops = TapeOps(xs)
        lap = sum((ops.d(ops.d(u, k), k) for k in range(len(xs))), 0.0)
        out.append(-ad.evaluate(t, None, lap))
    f = prob.operator.forcing.numpy(P) if prob.operator.kind == "poisson" else 0.0
    return np.array(out) - f


@pytest.mark.parametrize("make", [poisson2d_one_peak, poisson2d_two_peaks])
def test_poisson_forcing_is_minus_laplacian(make):
    prob = make()
    P = np.random.default_rng(3).uniform(-1, 1, (40, 2))
    assert np.max(np.abs(_independent_residual(prob, P))) < 1e-6


def test_forcing_against_finite_differences():
    prob = poisson2d_two_peaks()
    P = np.array([[0.01, 0.49], [-0.02, -0.52]])
    h = 1e-4
    u = prob.exact.numpy
    for p in P:
        lap = sum((u((p + e)[None]) - 2 * u(p[None]) + u((p - e)[None])) / h**2 for e in np.eye(2) * h)
        assert prob.operator.forcing.numpy(p[None])[0] == pytest.approx(-lap[0], rel=1e-5)


def test_burgers2d_wave_solves_the_pde():
    prob = burgers2d()
    rng = np.random.default_rng(0)
    lo, hi = np.array(prob.domain.lower), np.array(prob.domain.upper)
    for p in lo + (hi - lo) * rng.random((30, 3)):
        r = residual_at(lambda c: prob.exact.expr(c, TapeOps(c)), prob.operator, p)
        assert abs(ad.evaluate(r.tape, None, r)) < 1e-8


@pytest.mark.parametrize("k", [2, 4, 16])
def test_phenomenon_problem(k):
    prob = poisson1d_phenomenon(k)
    assert prob.domain.lower == (0.0,) and prob.domain.upper == pytest.approx((3 * math.pi,))
    x = np.array([[1.0], [4.5]])
    np.testing.assert_allclose(prob.truth(x), np.exp(-2 * (x[:, 0] - 4) * (x[:, 0] - 5)) * np.sin(k * x[:, 0]))
    assert np.max(np.abs(_independent_residual(prob, np.linspace(0.1, 9.0, 25)[:, None]))) < 1e-6


# --- Cole-Hopf reference ---------------------------------------------------------------

def test_reference_initial_condition_and_short_time():
    x = np.linspace(-1, 1, 41)
    np.testing.assert_array_equal(burgers1d_reference(x, 0.0), -np.sin(np.pi * x))
    # first-order Taylor step in time: u_t(x, 0) = -u u_x + nu u_xx of the initial profile
    t = 1e-5
    u0 = -np.sin(np.pi * x)
    ut0 = -u0 * (-np.pi * np.cos(np.pi * x)) + BURGERS1D_NU * np.pi**2 * np.sin(np.pi * x)
    np.testing.assert_allclose((burgers1d_reference(x, t) - u0) / t, ut0, atol=1e-3)


def test_reference_symmetry_and_boundary():
    x = np.linspace(0.05, 0.95, 10)
    for t in (0.3, 0.9):
        np.testing.assert_allclose(burgers1d_reference(-x, t), -burgers1d_reference(x, t), atol=1e-12)
        assert abs(burgers1d_reference(1.0, t)) < 1e-10


def test_reference_quadrature_converged():
    x = np.linspace(-1, 1, 101)
    np.testing.assert_allclose(burgers1d_reference(x, 0.7, nodes=200), burgers1d_reference(x, 0.7, nodes=400),
                               atol=1e-12)


def test_reference_satisfies_burgers_by_finite_differences():
    nu, h = BURGERS1D_NU, 1e-4
    u = lambda x, t: burgers1d_reference(x, t)  # noqa: E731
    for x, t in [(0.3, 0.2), (-0.5, 0.5), (0.6, 0.8)]:
        ut = (u(x, t + h) - u(x, t - h)) / (2 * h)
        ux = (u(x + h, t) - u(x - h, t)) / (2 * h)
        uxx = (u(x + h, t) - 2 * u(x, t) + u(x - h, t)) / h**2
        assert abs(ut + u(x, t) * ux - nu * uxx) < 1e-5


def test_reference_rejects_negative_time():
    with pytest.raises(ConfigurationError):
        burgers1d_reference(0.0, -0.1)


# --- demo fields ------------------------------------------------------------------------------

@pytest.mark.parametrize("name", DEMO_FIELDS)
def test_demo_fields(name):
    field_, spec = demo_field(name, c=10.0)
    if name == "constant":
        assert field_ is None and not spec.uses_field
        return
    P = np.array([[0.0, 0.0], [0.5, -0.25]])
    vals = field_.numpy(P)
    C = coordinates(P, [0, 1])
    np.testing.assert_allclose(np.asarray(field_.expr(C, JetOps).val), vals, rtol=1e-13)
    if name == "gaussian-peak":
        assert vals[0] == 10.0
    with pytest.raises(ConfigurationError):
        demo_field("nope")
