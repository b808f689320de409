"""Neuron-model tests: gating oracles, channel currents, equilibria,
simulation invariants, calibration, training sets, parameter JSON."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sarlab import morris_lecar as ml
from sarlab.sde import SimConfig


@pytest.fixture(scope="module")
def p():
    return ml.MorrisLecarParams()


def test_default_parameter_values(p):
    assert (p.cap, p.v1, p.v3, p.v4) == (5.0, -1.2, 12.0, 17.4)
    assert (p.phi, p.v_l, p.v_ca, p.v_k) == (1.0 / 15.0, -60.0, 120.0, -80.0)
    assert (p.g_ca, p.g_k, p.g_l) == (4.0, 8.0, 2.0)
    assert p.v2 == 18.0  # not part of the published set; calibrated default


def test_param_validation():
    with pytest.raises(ValueError):
        ml.MorrisLecarParams(cap=0.0)
    with pytest.raises(ValueError):
        ml.MorrisLecarParams(v2=0.0)
    with pytest.raises(ValueError):
        ml.MorrisLecarParams(phi=-1.0)


def test_gating_midpoints_and_timescale(p):
    assert ml.m_ss(p.v1, p) == pytest.approx(0.5, abs=0.0)
    assert ml.n_ss(p.v3, p) == pytest.approx(0.5, abs=0.0)
    assert ml.tau_n(p.v3, p) == pytest.approx(15.0, abs=1e-12)
    trip = ml.gating(p.v3, p)
    assert trip[1] == 0.5 and trip[2] == pytest.approx(15.0)


def test_gating_asymptotics(p):
    assert ml.m_ss(1e4, p) == pytest.approx(1.0, abs=1e-12)
    assert ml.n_ss(1e4, p) == pytest.approx(1.0, abs=1e-12)
    assert ml.tau_n(1e3, p) < 1e-10


def test_channels_vanish_at_reversal(p):
    assert ml.leak_current(p.v_l, p) == 0.0
    assert ml.ca_current(p.v_ca, p) == 0.0
    assert ml.k_current(p.v_k, 0.7, p) == 0.0
    assert ml.k_current(-20.0, 0.0, p) == 0.0


def test_channel_stack_matches_components(p):
    v, n = -30.0, 0.4
    stack = ml.channel_currents(v, n, p)
    np.testing.assert_allclose(
        stack, [ml.leak_current(v, p), ml.ca_current(v, p), ml.k_current(v, n, p)],
        atol=1e-15)


def test_rhs_degenerate_params_zero_drift():
    q = ml.MorrisLecarParams(v_l=0.0, v_ca=0.0, v_k=0.0, i_app=0.0)
    out = ml.rhs(np.array([0.0, ml.n_ss(0.0, q)]), q)
    assert out[0] == 0.0
    assert out[1] == pytest.approx(0.0, abs=1e-15)


def test_recovery_rate_sign(p):
    v = -20.0
    below = ml.n_ss(v, p) - 0.2
    assert ml.recovery_rate(v, below, p) > 0.0
    above = ml.n_ss(v, p) + 0.2
    assert ml.recovery_rate(v, above, p) < 0.0


def test_recovery_jacobian_matches_finite_differences(p):
    v, n = -25.0, 0.3
    jac = ml.recovery_jacobian(v, n, p)
    h = 1e-6
    dv = (ml.recovery_rate(v + h, n, p) - ml.recovery_rate(v - h, n, p)) / (2 * h)
    dn = (ml.recovery_rate(v, n + h, p) - ml.recovery_rate(v, n - h, p)) / (2 * h)
    assert jac[0] == pytest.approx(dv, rel=1e-6)
    assert jac[1] == pytest.approx(dn, rel=1e-8)


def test_equilibrium_is_a_root(p):
    q = p.with_iapp(40.0)
    eq = ml.equilibrium(q)
    res = ml.rhs(eq, q)
    assert np.abs(res).max() < 1e-10


def test_equilibrium_conserved_with_zero_noise(p):
    q = p.with_iapp(40.0)
    eq = ml.equilibrium(q)
    path = ml.simulate_ml(q, eq, SimConfig(t_end=100.0, dt=1e-3, record_stride=100))
    drift = np.linalg.norm(path.states - eq, axis=1).max()
    assert drift < 1e-6


def test_rest_convergence_without_current(p):
    q = p.with_iapp(0.0)
    path = ml.simulate_ml(q, ml.DEFAULT_INIT, SimConfig(t_end=500.0, dt=5e-3,
                                                        record_stride=10))
    v = path.states[:, 0]
    tail = path.times >= 400.0
    assert np.ptp(v[tail]) < 1.0  # mV


def test_noise_modes_bit_identical_at_sigma_zero(p):
    q = p.with_iapp(40.0)
    cfg = SimConfig(t_end=20.0, dt=5e-3, seed=5)
    a = ml.simulate_ml(q, ml.DEFAULT_INIT, cfg, sigma=0.0, noise_mode="state")
    b = ml.simulate_ml(q, ml.DEFAULT_INIT, cfg, sigma=0.0, noise_mode="current")
    np.testing.assert_array_equal(a.states, b.states)


def test_noise_seed_determinism(p):
    q = p.with_iapp(40.0)
    cfg = SimConfig(t_end=20.0, dt=5e-3, seed=5)
    a = ml.simulate_ml(q, ml.DEFAULT_INIT, cfg, sigma=0.85)
    b = ml.simulate_ml(q, ml.DEFAULT_INIT, cfg, sigma=0.85)
    np.testing.assert_array_equal(a.states, b.states)
    c = ml.simulate_ml(q, ml.DEFAULT_INIT, cfg, sigma=0.85, path_index=1)
    assert not np.array_equal(a.states, c.states)


def test_noise_mode_rejected(p):
    with pytest.raises(ValueError):
        ml.simulate_ml(p, ml.DEFAULT_INIT, SimConfig(t_end=1.0), noise_mode="bogus")


def test_dt_refinement_first_order(p):
    q = p.with_iapp(0.0)
    coarse = ml.simulate_ml(q, ml.DEFAULT_INIT,
                            SimConfig(t_end=100.0, dt=2e-3, record_stride=50000))
    fine = ml.simulate_ml(q, ml.DEFAULT_INIT,
                          SimConfig(t_end=100.0, dt=1e-3, record_stride=100000))
    end_c = coarse.states[-1]
    end_f = fine.states[-1]
    rel = np.linalg.norm(end_c - end_f) / np.linalg.norm(end_f)
    assert rel < 1e-3


def test_recovery_band_warning(p):
    q = p.with_iapp(0.0)
    with pytest.warns(RuntimeWarning, match="recovery"):
        ml.simulate_ml(q, np.array([-52.14, 2.0]), SimConfig(t_end=1.0, dt=1e-3))


def test_spike_times_interpolation():
    t = np.array([0.0, 1.0, 2.0, 3.0])
    v = np.array([-1.0, 1.0, -1.0, 3.0])
    st_ = ml.spike_times(t, v, threshold=0.0)
    np.testing.assert_allclose(st_, [0.5, 2.25], atol=1e-12)


def test_spiking_at_calibrated_current(spiking_params):
    path = ml.simulate_ml(spiking_params, ml.DEFAULT_INIT,
                          SimConfig(t_end=500.0, dt=5e-3, record_stride=10))
    spikes = ml.spike_times(path.times, path.states[:, 0])
    assert spikes.size >= 3
    assert np.ptp(path.states[:, 0]) > 40.0


def test_calibration_finds_smallest_grid_current(calibrated_iapp):
    assert calibrated_iapp == pytest.approx(40.0)


def test_make_training_set_exact_targets(p):
    x, targets = ml.make_training_set(p, n_samples=128, seed=3)
    assert x.shape == (128, 2) and targets.shape == (128, 3)
    np.testing.assert_array_equal(targets,
                                  ml.channel_currents(x[:, 0], x[:, 1], p))
    again, _ = ml.make_training_set(p, n_samples=128, seed=3)
    np.testing.assert_array_equal(x, again)


def test_make_training_set_empty_and_collapsed(p):
    x, targets = ml.make_training_set(p, n_samples=0)
    assert x.shape == (0, 2) and targets.shape == (0, 3)
    x, targets = ml.make_training_set(p, box=((-10.0, 0.5), (-10.0, 0.5)),
                                      n_samples=16)
    assert np.ptp(targets, axis=0).max() == 0.0


def test_params_json_keys(tmp_path, p):
    f = tmp_path / "params.json"
    ml.save_params(p.with_iapp(40.0), f)
    doc = json.loads(f.read_text())
    assert set(doc) == {"cap", "gL", "vL", "gCa", "vCa", "gK", "vK",
                        "v1", "v2", "v3", "v4", "phi", "i_app"}
    assert doc["vK"] == -80.0 and doc["gCa"] == 4.0
    back = ml.load_params(f)
    assert back == p.with_iapp(40.0)


@settings(max_examples=50, deadline=None)
@given(v=st.floats(-250.0, 250.0))
def test_gating_bounds_hold_everywhere(v):
    # strict bounds hold for all finite v; double precision saturates the
    # tanh to exactly 1.0 past |v| ~ 350, so probe below that
    p = ml.MorrisLecarParams()
    m, n, tau = ml.gating(v, p)
    assert 0.0 < m < 1.0
    assert 0.0 < n < 1.0
    assert tau > 0.0


@settings(max_examples=30, deadline=None)
@given(v=st.floats(-120.0, 60.0), n=st.floats(0.0, 1.0))
def test_rhs_recovery_sign_property(v, n):
    p = ml.MorrisLecarParams()
    out = ml.rhs(np.array([v, n]), p)
    gap = ml.n_ss(v, p) - n
    assert out[1] * gap >= 0.0
