"""Network tests: forward pass, backprop gradients, training behavior,
sector extraction, embedding assembly, serialization."""

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sarlab.shallow import (ShallowNet, TrainOptions, approx_residual, embed,
                            extract_bounds, load_embedding, load_net,
                            loss_and_grad, save_embedding, save_net, train)

TANH1 = 0.7615941559557649


def tiny_net():
    # 1 input, 1 unit, 1 output: y = 2 tanh(x) + 0.5
    return ShallowNet(w1=[[1.0]], b1=[0.0], w2=[[2.0]], b2=[0.5])


def test_forward_known_values():
    net = tiny_net()
    assert net(np.array([1.0]))[0] == pytest.approx(2 * TANH1 + 0.5, abs=1e-15)
    assert net(np.array([0.0]))[0] == pytest.approx(0.5, abs=0.0)


def test_forward_zero_weights_returns_bias():
    net = ShallowNet(np.zeros((3, 2)), np.zeros(3), np.zeros((2, 3)), [1.5, -0.5])
    out = net(np.array([[0.3, -4.0], [100.0, 2.0]]))
    np.testing.assert_array_equal(out, [[1.5, -0.5], [1.5, -0.5]])


def test_forward_batch_matches_single():
    net = ShallowNet([[0.5, -1.0], [2.0, 0.1]], [0.1, -0.2],
                     [[1.0, 0.3]], [0.0])
    xs = np.array([[0.2, 0.4], [-1.0, 2.0]])
    batch = net(xs)
    singles = np.vstack([net(x) for x in xs])
    np.testing.assert_allclose(batch, singles, atol=1e-15)


def test_shape_validation():
    with pytest.raises(ValueError):
        ShallowNet(np.zeros((2, 1)), np.zeros(3), np.zeros((1, 2)), np.zeros(1))


def test_gradcheck_against_central_differences():
    rng = np.random.default_rng(0)
    net = ShallowNet(rng.standard_normal((4, 2)), rng.standard_normal(4),
                     rng.standard_normal((3, 4)), rng.standard_normal(3))
    x = rng.standard_normal((12, 2))
    t = rng.standard_normal((12, 3))
    _, g = loss_and_grad(net, x, t)
    eps = 1e-6
    for field in ("w1", "b1", "w2", "b2"):
        arr = getattr(net, field).copy()
        g_arr = getattr(g, field)
        it = np.ndindex(arr.shape)
        for idx in it:
            for sgn, store in ((1, "hi"), (-1, "lo")):
                pert = {f: getattr(net, f).copy() for f in ("w1", "b1", "w2", "b2")}
                pert[field][idx] += sgn * eps
                val = loss_and_grad(ShallowNet(**pert), x, t)[0]
                if store == "hi":
                    hi = val
                else:
                    lo = val
            num = (hi - lo) / (2 * eps)
            assert abs(num - g_arr[idx]) <= 1e-5 * max(1.0, abs(num)), (field, idx)


def test_train_constant_target():
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, size=(400, 2))
    t = np.full((400, 1), 3.25)
    res = train(x, t, hidden=3, options=TrainOptions(epochs=120, seed=0))
    assert not res.diverged
    assert res.final_rms[0] < 1e-4


def test_train_identity_target():
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, size=(2000, 1))
    res = train(x, x, hidden=6, options=TrainOptions(epochs=300, seed=0))
    assert not res.diverged
    assert res.final_rms[0] < 0.01


def test_train_zero_samples_errors():
    with pytest.raises(ValueError):
        train(np.zeros((0, 2)), np.zeros((0, 1)), hidden=2)


def test_train_row_mismatch_errors():
    with pytest.raises(ValueError):
        train(np.zeros((5, 2)), np.zeros((4, 1)), hidden=2)


def test_train_warns_when_undersampled():
    with pytest.warns(UserWarning, match="samples"):
        train(np.random.default_rng(0).uniform(-1, 1, (8, 1)),
              np.zeros((8, 1)), hidden=4, options=TrainOptions(epochs=2))


def test_train_divergence_keeps_last_finite_iterate():
    rng = np.random.default_rng(3)
    x = rng.uniform(-1, 1, size=(128, 1))
    t = 100.0 * x
    with pytest.warns(UserWarning, match="diverged"):
        res = train(x, t, hidden=2,
                    options=TrainOptions(epochs=50, lr=4e3, momentum=0.0))
    assert res.diverged
    assert np.isfinite(res.net.w1).all() and np.isfinite(res.net.b2).all()


def test_train_is_deterministic_by_seed():
    rng = np.random.default_rng(4)
    x = rng.uniform(-1, 1, size=(128, 1))
    t = np.tanh(2 * x)
    a = train(x, t, hidden=3, options=TrainOptions(epochs=20, seed=9))
    b = train(x, t, hidden=3, options=TrainOptions(epochs=20, seed=9))
    np.testing.assert_array_equal(a.net.w1, b.net.w1)
    np.testing.assert_array_equal(a.loss_history, b.loss_history)


def test_extract_bounds_row_norm_oracle():
    net = ShallowNet([[3.0, 4.0]], [0.2], [[1.0]], [0.0])
    bounds = extract_bounds(net)
    assert bounds.slopes[0] == pytest.approx(5.0, abs=1e-15)
    np.testing.assert_allclose(bounds.directions[0], [0.6, 0.8], atol=1e-15)
    assert bounds.biases[0] == 0.2
    assert bounds.kept.tolist() == [0]


def test_extract_bounds_prunes_dead_units():
    net = ShallowNet([[1.0, 0.0], [0.0, 0.0], [0.0, 2.0]], np.zeros(3),
                     np.ones((1, 3)), [0.0])
    bounds = extract_bounds(net)
    assert bounds.kept.tolist() == [0, 2]
    np.testing.assert_allclose(bounds.slopes, [1.0, 2.0])


def test_approx_residual_zero_for_self():
    net = tiny_net()
    rep = approx_residual(net, lambda x: net(x), -1.0, 1.0, n_samples=64)
    assert rep.max_abs[0] == 0.0 and rep.rms[0] == 0.0


def test_approx_residual_detects_error():
    net = tiny_net()
    rep = approx_residual(net, lambda x: net(x) + 0.1, -1.0, 1.0, n_samples=64)
    assert rep.max_abs[0] == pytest.approx(0.1, abs=1e-12)
    assert rep.rms[0] == pytest.approx(0.1, abs=1e-12)


def test_save_load_net_bit_exact(tmp_path):
    net = tiny_net()
    f = tmp_path / "net.json"
    save_net(net, f)
    back = load_net(f)
    for field in ("w1", "b1", "w2", "b2"):
        np.testing.assert_array_equal(getattr(back, field), getattr(net, field))


# -- embedding assembly ------------------------------------------------------

def two_unit_net():
    # 2 inputs -> 2 units -> 1 output; zero biases so the net vanishes at 0
    return ShallowNet([[1.0, 0.0], [0.0, 2.0]], [0.0, 0.0], [[0.5, -0.25]], [0.0])


def test_embed_shapes_and_bank():
    net = two_unit_net()
    a_phys = -np.eye(2)
    emb = embed([net], [np.array([[1.0], [0.0]])], a_phys, kappa=1.0)
    sys = emb.system
    assert sys.n == sys.m == 2
    assert emb.n_phys == 2 and emb.p == 0
    # physical F columns are combiner @ w2 per unit
    np.testing.assert_allclose(emb.f_phys, [[0.5, -0.25], [0.0, 0.0]], atol=1e-15)
    np.testing.assert_allclose(emb.c_rows, [[1.0, 0.0], [0.0, 1.0]], atol=1e-15)
    np.testing.assert_allclose(sys.sector_slopes, [1.0, 2.0], atol=1e-15)


def test_embed_pads_fictitious_states():
    # 1 physical state, 3 units -> 2 fictitious states
    net = ShallowNet([[1.0], [2.0], [0.5]], np.zeros(3), [[1.0, 1.0, 1.0]], [0.0])
    emb = embed([net], [np.array([[1.0]])], [[-1.0]], kappa=2.0)
    sys = emb.system
    assert sys.n == 3 and emb.p == 2
    np.testing.assert_allclose(sys.a[1:, 1:], -2.0 * np.eye(2), atol=1e-15)
    assert np.all(sys.f_gain[1:] == 0.0)
    assert np.all(sys.c[:, 1:] == 0.0)


def test_embed_recenter_shifts_unit_biases():
    net = ShallowNet([[1.0, 0.0], [0.0, 2.0]], [0.0, 0.1], [[0.5, -0.25]], [0.0])
    x_star = np.array([0.3, -0.2])
    star_out = net(x_star)
    emb = embed([net], [np.array([[1.0], [0.0]])], -np.eye(2), kappa=1.0,
                x_star=x_star, const_drift=-np.array([star_out[0], 0.0]))
    # unit biases become b1 + (w1 . x_star): direction-scaled form
    expected = np.array([0.0 + 0.3, 0.1 + 2.0 * (-0.2)])
    np.testing.assert_allclose(emb.system.nonlinearity(np.zeros(2)), 0.0, atol=1e-15)
    bank_b = expected  # recentred unit must vanish at deviation 0 by construction
    probe = emb.system.nonlinearity(np.array([0.1, 0.1]))
    manual = np.tanh(emb.system.sector_slopes * 0.1 + bank_b) - np.tanh(bank_b)
    np.testing.assert_allclose(probe, manual, atol=1e-15)


def test_embed_offset_gate():
    net = two_unit_net()
    x_star = np.array([1.0, 1.0])
    with pytest.raises(ValueError, match="offset"):
        embed([net], [np.array([[1.0], [0.0]])], -np.eye(2), kappa=1.0,
              x_star=x_star)  # net(x*) != 0 and no compensating const drift


def test_embed_validates_combiner_shape():
    net = two_unit_net()
    with pytest.raises(ValueError):
        embed([net], [np.eye(3)], -np.eye(2), kappa=1.0)


def test_embedding_roundtrip(tmp_path):
    net = two_unit_net()
    emb = embed([net], [np.array([[1.0], [0.0]])], -np.eye(2), kappa=1.5)
    f = tmp_path / "emb.json"
    save_embedding(emb, f)
    back = load_embedding(f)
    assert back.kappa == 1.5 and back.n_phys == 2
    np.testing.assert_array_equal(back.system.a, emb.system.a)
    np.testing.assert_array_equal(back.system.f_gain, emb.system.f_gain)
    np.testing.assert_array_equal(back.system.sector_slopes, emb.system.sector_slopes)


@settings(max_examples=30, deadline=None)
@given(w=st.lists(st.floats(-3, 3), min_size=2, max_size=2),
       b=st.floats(-1, 1), x=st.lists(st.floats(-2, 2), min_size=2, max_size=2))
def test_extract_bounds_slope_is_row_norm(w, b, x):
    net = ShallowNet([w], [b], [[1.0]], [0.0])
    norm = float(np.hypot(*w))
    bounds = extract_bounds(net)
    if norm <= 1e-12:
        assert bounds.kept.size == 0
    else:
        assert bounds.slopes[0] == pytest.approx(norm, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_loss_is_half_mean_squared_error(seed):
    rng = np.random.default_rng(seed)
    net = ShallowNet(rng.standard_normal((2, 1)), rng.standard_normal(2),
                     rng.standard_normal((1, 2)), rng.standard_normal(1))
    x = rng.standard_normal((7, 1))
    t = rng.standard_normal((7, 1))
    loss, _ = loss_and_grad(net, x, t)
    manual = 0.5 * np.mean(np.sum((net(x) - t) ** 2, axis=1))
    assert loss == pytest.approx(manual, rel=1e-12)
