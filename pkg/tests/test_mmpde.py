import math

import jax
import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from moveset import autodiff as ad
from moveset.autodiff import ConfigurationError, NumericError, TapeOps
from moveset.jets import Jet
from moveset.mmpde import (
    Domain,
    MmpdeConfig,
    PointSet,
    batch_residual_2d,
    init_untangled,
    jacobian_at,
    map_points,
    mmpde_loss,
    mmpde_loss_batch,
    mmpde_residual_1d,
    mmpde_residual_2d,
    monitor_at,
    peak_fraction,
    read_points_csv,
    train_mmpde,
    train_mmpde_iterative,
    winslow_residual,
)
from moveset.monitor import AnalyticField, MonitorSpec
from moveset.network import NetworkConfig, NetworkParams, init_xavier
from moveset.problems import sample_uniform_grid

SQ = Domain.box((-1.0, 1.0), (-1.0, 1.0))
LINE = Domain.box((0.0, 2.0))
PEAK = AnalyticField(lambda x, y, xp: xp.exp(-4.0 * (x * x + y * y)), 2, "peak")
PEAK1D = AnalyticField(lambda x, xp: xp.exp(-4.0 * (x - 1.0) * (x - 1.0)), 1, "peak1d")


# --- Winslow residual against an independent finite-difference route --------------

EPS = 0.1


def _map(xi, eta, ops):
    return (xi + EPS * ops.sin(math.pi * xi) * eta * eta, eta + EPS * xi * ops.sin(math.pi * eta))


def _w(xi, eta, ops=None):
    return 1.0 + xi * xi + 0.5 * eta


def _abc(xi, eta):
    # hand-derived partials of _map
    x_xi = 1 + EPS * math.pi * math.cos(math.pi * xi) * eta**2
    x_eta = 2 * EPS * math.sin(math.pi * xi) * eta
    y_xi = EPS * math.sin(math.pi * eta)
    y_eta = 1 + EPS * math.pi * xi * math.cos(math.pi * eta)
    J = x_xi * y_eta - x_eta * y_xi
    Jw = J * _w(xi, eta)
    return (x_eta**2 + y_eta**2) / Jw, (x_xi * x_eta + y_xi * y_eta) / Jw, (x_xi**2 + y_xi**2) / Jw, \
        (x_xi, x_eta, y_xi, y_eta, J)


@pytest.mark.parametrize("pt", [(0.3, 0.2), (-0.5, 0.7), (0.1, -0.4)])
def test_winslow_residual_matches_finite_differences(pt):
    t = ad.Tape()
    xi = [t.input("a", pt[0]), t.input("b", pt[1])]
    ops = TapeOps(xi)
    x, y = _map(*xi, ops)
    Rx, Ry = winslow_residual(x, y, _w(*xi), ops)
    got = ad.evaluate(t, None, [Rx, Ry])

    h = 1e-5
    a, b = pt
    dA = (_abc(a + h, b)[0] - _abc(a - h, b)[0]) / (2 * h)
    dB_eta = (_abc(a, b + h)[1] - _abc(a, b - h)[1]) / (2 * h)
    dB_xi = (_abc(a + h, b)[1] - _abc(a - h, b)[1]) / (2 * h)
    dC = (_abc(a, b + h)[2] - _abc(a, b - h)[2]) / (2 * h)
    S1, S2 = dA - dB_eta, dC - dB_xi
    x_xi, x_eta, y_xi, y_eta, J = _abc(a, b)[3]
    ref = [(x_xi * S1 + x_eta * S2) / J, (y_xi * S1 + y_eta * S2) / J]
    np.testing.assert_allclose(got, ref, rtol=1e-6, atol=1e-8)


def _zero_output(net):
    p = init_xavier(net)
    p.weights[-1] = np.zeros_like(p.weights[-1])
    return p


def test_identity_map_has_zero_residual_for_constant_monitor():
    cfg = MmpdeConfig(net=NetworkConfig(2, 2, 2, 5), monitor=MonitorSpec.constant())
    pts = sample_uniform_grid(SQ, (5, 5))
    p = _zero_output(cfg.net)
    np.testing.assert_array_equal(map_points(p, pts.coords, SQ), pts.coords)
    loss = mmpde_loss(p, cfg, pts, None)
    assert ad.evaluate(loss.tape, None, loss) == 0.0
    assert mmpde_loss_batch(p, cfg, pts, None, dtype="float64") == 0.0


def test_scalar_and_compiled_losses_agree_2d():
    cfg = MmpdeConfig(net=NetworkConfig(2, 2, 2, 6, seed=3), monitor=MonitorSpec.sqrt_form(1.0, 1.0, (1.0, 1.0)))
    pts = sample_uniform_grid(SQ, (4, 4))
    p = init_untangled(cfg.net, pts.coords, SQ)
    loss = mmpde_loss(p, cfg, pts, PEAK)
    scalar = ad.evaluate(loss.tape, None, loss)
    assert mmpde_loss_batch(p, cfg, pts, PEAK, dtype="float64") == pytest.approx(scalar, rel=1e-10)


def test_scalar_and_compiled_losses_agree_1d():
    cfg = MmpdeConfig(net=NetworkConfig(1, 1, 2, 6, seed=1), monitor=MonitorSpec.sqrt_form(1.0, 1.0, (0.5,)))
    pts = sample_uniform_grid(LINE, (9,))
    p = init_untangled(cfg.net, pts.coords, LINE)
    loss = mmpde_loss(p, cfg, pts, PEAK1D)
    scalar = ad.evaluate(loss.tape, None, loss)
    assert mmpde_loss_batch(p, cfg, pts, PEAK1D, dtype="float64") == pytest.approx(scalar, rel=1e-10)


def test_parameter_gradients_agree_between_engines():
    cfg = MmpdeConfig(net=NetworkConfig(2, 2, 2, 4, seed=7), monitor=MonitorSpec.sqrt_form(1.0, 1.0, (1.0, 1.0)))
    P = np.array([[0.2, -0.3], [-0.6, 0.1], [0.4, 0.5]])
    pts = PointSet(P, SQ)
    p = init_untangled(cfg.net, P, SQ)
    loss = mmpde_loss(p, cfg, pts, PEAK)
    g_tape = ad.gradient_accumulate_params(loss.tape, loss, p)

    w = monitor_at(cfg.monitor, PEAK, P)
    wj = Jet(jnp.asarray(w.val), tuple(jnp.asarray(g) for g in w.grad), {}, order=1)

    def lf(tree):
        Rx, Ry = batch_residual_2d(tree, jnp.asarray(P), wj, SQ)
        return jnp.mean(Rx.val**2 + Ry.val**2)

    g = jax.grad(lf)(jax.tree_util.tree_map(jnp.asarray, p.tree()))
    flat = np.concatenate([np.concatenate([np.ravel(W), np.ravel(b)]) for W, b in g])
    np.testing.assert_allclose(flat, g_tape, rtol=1e-9, atol=1e-12)


# --- transform, folds and errors -----------------------------------------------------

@given(st.integers(0, 200), st.integers(1, 3), st.integers(2, 12))
def test_boundary_rows_are_fixed_exactly(seed, layers, width):
    p = init_xavier(NetworkConfig(2, 2, layers, width, seed=seed))
    P = sample_uniform_grid(SQ, (6, 7)).coords
    X = map_points(p, P, SQ)
    b = SQ.on_boundary(P)
    np.testing.assert_array_equal(X[b], P[b])


def test_init_untangled_never_folds():
    P = sample_uniform_grid(SQ, (20, 20)).coords
    for seed in range(20):
        p = init_untangled(NetworkConfig(2, 2, 8, 20, seed=seed), P, SQ)
        assert jacobian_at(p, P, SQ).min() > 0


def test_degenerate_jacobian_raises():
    cfg = NetworkConfig(2, 2, 1, 2)
    # N = (-tanh ξ, tanh η): x_ξ = 0 at the centre, so J = 0 there
    p = NetworkParams(cfg, [np.eye(2), np.diag([-1.0, 1.0])], [np.zeros(2), np.zeros(2)])
    with pytest.raises(NumericError):
        mmpde_residual_2d(p, MmpdeConfig(net=cfg, monitor=MonitorSpec.constant()), (0.0, 0.0), None, SQ)


def test_fold_in_1d_raises():
    cfg = NetworkConfig(1, 1, 1, 1)
    p = NetworkParams(cfg, [np.ones((1, 1)), -5.0 * np.ones((1, 1))], [np.zeros(1), np.zeros(1)])
    mm = MmpdeConfig(net=cfg, monitor=MonitorSpec.constant())
    with pytest.raises(NumericError):
        mmpde_residual_1d(p, mm, (1.0,), None, LINE)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        MmpdeConfig(epochs=0)
    with pytest.raises(ConfigurationError):
        MmpdeConfig(time_derivative_mode="moving")
    with pytest.raises(ConfigurationError):
        MmpdeConfig(net=NetworkConfig(2, 1, 2, 4))
    with pytest.raises(ConfigurationError):
        MmpdeConfig(dtype="float16")


def test_space_time_sets_must_be_sliced_first():
    st_dom = Domain.box((-1.0, 1.0), (0.0, 1.0), temporal=1)
    pts = sample_uniform_grid(st_dom, (3, 3))
    with pytest.raises(ConfigurationError):
        train_mmpde(MmpdeConfig(epochs=1), pts, None)


# --- training -------------------------------------------------------------------------

def test_short_training_run_contract():
    cfg = MmpdeConfig(net=NetworkConfig(2, 2, 2, 8), epochs=15, lr=1e-3, monitor=MonitorSpec.sqrt_form(1.0, 1.0))
    pts = sample_uniform_grid(SQ, (6, 6))
    res = train_mmpde(cfg, pts, PEAK)
    assert [r[0] for r in res.history] == list(range(1, 16))
    assert all(np.isfinite(r[1]) for r in res.history)
    b = SQ.on_boundary(pts.coords)
    np.testing.assert_array_equal(res.points.coords[b], pts.coords[b])
    assert np.all(SQ.contains(res.points.coords))
    assert np.isfinite(res.final_loss)


def test_iterative_training_writes_each_iteration(tmp_path):
    cfg = MmpdeConfig(net=NetworkConfig(2, 2, 2, 6, seed=4), epochs=5, iterations=3, lr=1e-3,
                      monitor=MonitorSpec.affine_form(1.0, 0.5))
    pts = sample_uniform_grid(SQ, (5, 5))
    results = train_mmpde_iterative(cfg, pts, PEAK, out_dir=tmp_path)
    assert len(results) == 3
    for i, res in enumerate(results, start=1):
        back = read_points_csv(tmp_path / f"points_iter{i}.csv", SQ)
        np.testing.assert_array_equal(back.coords, res.points.coords)
    again = train_mmpde_iterative(cfg, pts, PEAK)
    np.testing.assert_array_equal(again[-1].points.coords, results[-1].points.coords)


def test_training_is_deterministic():
    cfg = MmpdeConfig(net=NetworkConfig(2, 2, 2, 6, seed=11), epochs=10, lr=1e-3)
    pts = sample_uniform_grid(SQ, (5, 5))
    a, b = train_mmpde(cfg, pts, PEAK), train_mmpde(cfg, pts, PEAK)
    assert a.history == b.history
    np.testing.assert_array_equal(a.points.coords, b.points.coords)


# --- point sets --------------------------------------------------------------------------

def test_point_set_validation():
    with pytest.raises(ConfigurationError):
        PointSet(np.array([[2.0, 0.0]]), SQ)
    with pytest.raises(ConfigurationError):
        PointSet(np.array([[np.nan, 0.0]]), SQ)
    with pytest.raises(ConfigurationError):
        PointSet(np.zeros((0, 2)), SQ)
    with pytest.raises(ConfigurationError):
        PointSet(np.zeros((2, 2)), SQ, values=[1.0])
    ps = PointSet(np.zeros((2, 2)), SQ)
    with pytest.raises(ValueError):
        ps.coords[0, 0] = 1.0


def test_domain_validation():
    with pytest.raises(ConfigurationError):
        Domain.box((1.0, 0.0))
    with pytest.raises(ConfigurationError):
        Domain.box((0, 1), (0, 1), (0, 1))
    d = Domain.box((0, 1), (0, 1), (0, 1), temporal=2)
    assert d.column_names() == ["x0", "x1", "t"]
    assert d.spatial() == Domain.box((0, 1), (0, 1))


def test_csv_round_trip_is_bit_exact(tmp_path):
    P = np.random.default_rng(0).uniform(-1, 1, (30, 2))
    ps = PointSet(P, SQ)
    back = read_points_csv(ps.write_csv(tmp_path / "p.csv"), SQ)
    np.testing.assert_array_equal(back.coords, P)
    with pytest.raises(ConfigurationError):
        read_points_csv(tmp_path / "p.csv", Domain.box((-1, 1), (0, 1), temporal=1))


def test_peak_fraction():
    P = np.array([[0.0, 0.0], [0.1, 0.1], [0.5, 0.5], [0.19, 0.0]])
    assert peak_fraction(P) == 0.75
