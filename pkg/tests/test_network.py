import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from moveset import autodiff as ad
from moveset.autodiff import ConfigurationError, NumericError
from moveset.network import (
    AdamState,
    NetworkConfig,
    NetworkParams,
    adam_step,
    adam_update,
    clone_params,
    forward,
    forward_numpy,
    init_xavier,
    load_checkpoint,
    param_labels,
    save_checkpoint,
)


def test_xavier_is_seeded_and_bounded():
    cfg = NetworkConfig(2, 1, 3, 10, seed=5)
    a, b = init_xavier(cfg), init_xavier(cfg)
    for Wa, Wb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(Wa, Wb)
    for W in a.weights:
        limit = np.sqrt(6.0 / sum(W.shape))
        assert np.all(np.abs(W) <= limit)
    assert all(np.all(bias == 0) for bias in a.biases)
    c = init_xavier(cfg.with_seed(6))
    assert not np.array_equal(a.weights[0], c.weights[0])


def test_parameter_count_and_flat_round_trip():
    cfg = NetworkConfig(3, 2, 2, 5)
    p = init_xavier(cfg)
    assert p.size == 3 * 5 + 5 + 5 * 5 + 5 + 5 * 2 + 2
    q = NetworkParams.unflatten(cfg, p.flatten())
    np.testing.assert_array_equal(q.flatten(), p.flatten())
    assert len(param_labels(p)) == p.size
    with pytest.raises(ConfigurationError):
        NetworkParams.unflatten(cfg, p.flatten()[:-1])


def test_bad_configs_rejected():
    with pytest.raises(ConfigurationError):
        NetworkConfig(0, 1, 1, 1)
    with pytest.raises(ConfigurationError):
        NetworkConfig(1, 1, 1, 1, activation="relu")


@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 8), st.integers(0, 50))
def test_graph_forward_matches_dense_forward(d_in, layers, width, seed):
    p = init_xavier(NetworkConfig(d_in, 2, layers, width, seed=seed))
    x = np.random.default_rng(seed).uniform(-1, 1, d_in)
    t = ad.Tape()
    outs = forward(p, [t.input(f"x{k}", v) for k, v in enumerate(x)])
    got = ad.evaluate(t, None, outs)
    np.testing.assert_allclose(got, forward_numpy(p, x[None, :])[0], rtol=1e-13, atol=1e-14)


def test_frozen_forward_has_no_parameter_leaves():
    p = init_xavier(NetworkConfig(1, 1, 2, 4))
    t = ad.Tape()
    forward(p, [t.input("x", 0.2)], frozen=True)
    assert list(t.leaves) == ["x"]


def test_forward_rejects_wrong_arity():
    p = init_xavier(NetworkConfig(2, 1, 1, 3))
    t = ad.Tape()
    with pytest.raises(ConfigurationError):
        forward(p, [t.input("x", 0.0)])


def test_adam_first_step_moves_by_lr():
    # with bias correction the first step is lr * sign(g) up to eps
    x = np.array([1.0, -2.0, 0.5])
    g = np.array([0.3, -4.0, 1e-3])
    new, m, v = adam_update(x, g, np.zeros(3), np.zeros(3), 1, 0.01)
    np.testing.assert_allclose(new, x - 0.01 * np.sign(g), rtol=0, atol=1e-7)


def test_adam_step_rejects_nonfinite_gradient():
    p = init_xavier(NetworkConfig(1, 1, 1, 2))
    g = np.zeros(p.size)
    g[3] = np.nan
    with pytest.raises(NumericError) as err:
        adam_step(p, g, AdamState.fresh(p.size))
    assert err.value.node == 3


def test_adam_minimizes_a_quadratic():
    p = init_xavier(NetworkConfig(1, 1, 1, 2, seed=1))
    state = AdamState.fresh(p.size, lr=0.05)
    target = np.linspace(-1, 1, p.size)
    for _ in range(2000):
        p, state = adam_step(p, 2 * (p.flatten() - target), state)
    np.testing.assert_allclose(p.flatten(), target, atol=1e-3)


def test_checkpoint_round_trip(tmp_path):
    p = init_xavier(NetworkConfig(2, 1, 2, 3, seed=9))
    state = AdamState(np.arange(p.size) * 0.1, np.arange(p.size) * 0.01, 7, 1e-3)
    path = save_checkpoint(tmp_path / "ck.json", p, state)
    q, s = load_checkpoint(path)
    np.testing.assert_array_equal(q.flatten(), p.flatten())
    assert q.config == p.config
    np.testing.assert_array_equal(s.m, state.m)
    assert s.t == 7


def test_clone_is_independent():
    p = init_xavier(NetworkConfig(1, 1, 1, 2))
    q = clone_params(p)
    q.weights[0][0, 0] += 1.0
    assert p.weights[0][0, 0] != q.weights[0][0, 0]
