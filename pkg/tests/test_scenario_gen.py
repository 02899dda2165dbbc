import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from patopa.errors import InvalidArgumentError, ParseError
from patopa.grid_model import (GridTopology, LineParams, assemble_admittance, builtin_feeder,
                               complete_candidate_graph, load_feeder)
from patopa.scenario_gen import (MeasurementSet, NoiseSpec, apply_noise, forward_injections,
                                 read_measurements, sample_voltage_profiles, simulate,
                                 truncated_normal_cdf, write_measurements)


@pytest.fixture(scope="module")
def feeder8():
    return load_feeder(builtin_feeder("feeder8"))


def injections_from_admittance(topo, params, V, Theta):
    """Nodal form: P_i = sum_k v_i v_k (G_ik cos t_ik + B_ik sin t_ik)."""
    Y = assemble_admittance(topo, params)
    dth = Theta[:, :, None] - Theta[:, None, :]
    vv = V[:, :, None] * V[:, None, :]
    P = np.sum(vv * (Y.G * np.cos(dth) + Y.B * np.sin(dth)), axis=2)
    Q = np.sum(vv * (Y.G * np.sin(dth) - Y.B * np.cos(dth)), axis=2)
    return P, Q


def test_profiles_deterministic(feeder8):
    topo, _ = feeder8
    a = sample_voltage_profiles(topo, 50, seed=7)
    b = sample_voltage_profiles(topo, 50, seed=7)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_profiles_shape_and_slack(feeder8):
    topo, _ = feeder8
    V, Theta = sample_voltage_profiles(topo, 500, seed=1)
    assert V.shape == Theta.shape == (500, 8)
    assert np.all(Theta[:, 0] == 0)
    assert V.min() >= 0.95 and V.max() <= 1.05
    assert np.abs(Theta).max() <= 0.05


def test_profiles_reject_empty(feeder8):
    with pytest.raises(InvalidArgumentError):
        sample_voltage_profiles(feeder8[0], 0, seed=1)


def test_two_bus_injection_by_hand():
    topo = complete_candidate_graph(2)
    P, Q = forward_injections(topo, LineParams([1.0], [0.0]), [[1.0, 0.98]], [[0.0, -0.02]])
    assert P[0, 0] == pytest.approx(1 - 0.98 * math.cos(0.02), abs=1e-15)
    assert P[0, 0] == pytest.approx(0.020196, abs=1e-6)
    # q_0 = -g v0 v1 sin(theta_0 - theta_1)
    assert Q[0, 0] == pytest.approx(-0.98 * math.sin(0.02), abs=1e-15)


def test_flat_start_gives_zero_flow(feeder8):
    topo, params = feeder8
    P, Q = forward_injections(topo, params, np.ones((3, 8)), np.zeros((3, 8)))
    assert not P.any() and not Q.any()


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 7), seed=st.integers(0, 2**32 - 1))
def test_branch_form_matches_nodal_form(n, seed):
    rng = np.random.default_rng(seed)
    K = complete_candidate_graph(n)
    params = LineParams(rng.uniform(0, 5, K.n_edges), rng.uniform(-5, 0, K.n_edges))
    V = rng.uniform(0.9, 1.1, (4, n))
    Theta = rng.uniform(-0.3, 0.3, (4, n))
    P, Q = forward_injections(K, params, V, Theta)
    P1, Q1 = injections_from_admittance(K, params, V, Theta)
    np.testing.assert_allclose(P, P1, rtol=0, atol=1e-12)
    np.testing.assert_allclose(Q, Q1, rtol=0, atol=1e-12)


def test_forward_dimension_mismatch(feeder8):
    topo, params = feeder8
    with pytest.raises(InvalidArgumentError):
        forward_injections(topo, params, np.ones((2, 7)), np.zeros((2, 7)))
    with pytest.raises(InvalidArgumentError):
        forward_injections(topo, LineParams([1.0], [1.0]), np.ones((2, 8)), np.zeros((2, 8)))


def test_total_injection_equals_nonnegative_losses(feeder8):
    topo, params = feeder8
    ms = simulate(topo, params, 200, seed=3)
    assert np.all(ms.P.sum(axis=1) >= 0)


def test_zero_noise_is_identity(feeder8):
    topo, params = feeder8
    ms = simulate(topo, params, 20, seed=3)
    noisy = apply_noise(ms, NoiseSpec.uniform(0.0, seed=9))
    for ch in ("V", "Theta", "P", "Q"):
        np.testing.assert_array_equal(getattr(noisy, ch), getattr(ms, ch))
    assert noisy.truth is ms


def test_relative_noise_level(feeder8):
    topo, params = feeder8
    ms = simulate(topo, params, 500, seed=4)
    noisy = apply_noise(ms, NoiseSpec.uniform(0.10, seed=5))
    for ch in ("V", "Theta", "P", "Q"):
        clean = getattr(ms, ch)
        err = getattr(noisy, ch) - clean
        target = 0.10 * clean.std(axis=0)
        live = target > 0
        np.testing.assert_allclose(err.std(axis=0)[live], target[live], rtol=0.15)
        assert not err[:, ~live].any()


def test_per_channel_levels(feeder8):
    topo, params = feeder8
    ms = simulate(topo, params, 100, seed=4)
    noisy = apply_noise(ms, NoiseSpec({"p": 0.05}, seed=1))
    np.testing.assert_array_equal(noisy.V, ms.V)
    assert not np.array_equal(noisy.P, ms.P)


def test_missing_angle_column_zeroed(feeder8):
    topo, params = feeder8
    ms = simulate(topo, params, 50, seed=4)
    noisy = apply_noise(ms, NoiseSpec.uniform(0.05, missing_angle_buses={3}, seed=1))
    assert np.all(noisy.Theta[:, 3] == 0)
    assert noisy.missing_angle_buses == {3}


def test_truncated_noise_bounded(feeder8):
    topo, params = feeder8
    ms = simulate(topo, params, 400, seed=4)
    noisy = apply_noise(ms, NoiseSpec.uniform(0.2, truncation_d=1.5, seed=2))
    for ch in ("V", "Theta", "P", "Q"):
        err = getattr(noisy, ch) - getattr(ms, ch)
        bound = 1.5 * noisy.sigma[ch.lower()]
        assert np.all(np.abs(err) <= bound * (1 + 1e-12))


def test_noise_deterministic(feeder8):
    topo, params = feeder8
    ms = simulate(topo, params, 30, seed=4)
    a = apply_noise(ms, NoiseSpec.uniform(0.1, seed=11))
    b = apply_noise(ms, NoiseSpec.uniform(0.1, seed=11))
    np.testing.assert_array_equal(a.P, b.P)
    np.testing.assert_array_equal(a.Theta, b.Theta)


def test_noise_spec_validation():
    with pytest.raises(InvalidArgumentError):
        NoiseSpec.uniform(-0.1)
    with pytest.raises(InvalidArgumentError):
        NoiseSpec.uniform(0.1, truncation_d=0)
    with pytest.raises(InvalidArgumentError):
        NoiseSpec({"w": 0.1})


def test_truncated_cdf_values():
    assert truncated_normal_cdf(0.0, 0.3, 1.0) == pytest.approx(0.5)
    assert truncated_normal_cdf(1.0, 0.3, 1.0) == 1.0
    assert truncated_normal_cdf(-1.0, 0.3, 1.0) == 0.0
    assert truncated_normal_cdf(5.0, 0.3, 1.0) == 1.0
    assert truncated_normal_cdf(-5.0, 0.3, 1.0) == 0.0
    # wide truncation approaches the untruncated normal: Phi(1)
    assert truncated_normal_cdf(0.2, 0.2, 2.0) == pytest.approx(0.8413447460685429, abs=1e-4)


def test_truncated_cdf_converges_to_normal():
    from scipy.stats import norm
    x = np.linspace(-2, 2, 9)
    gaps = [np.max(np.abs(truncated_normal_cdf(x, 1.0, d) - norm.cdf(x))) for d in (2, 4, 8)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-10


def test_truncated_cdf_matches_empirical():
    from patopa.scenario_gen import sample_truncated_normal
    rng = np.random.default_rng(0)
    z = sample_truncated_normal(rng, 0.5, 1.2, 20000)
    for x in (-0.3, 0.1, 0.4):
        assert np.mean(z <= x) == pytest.approx(truncated_normal_cdf(x, 0.5, 0.6), abs=0.015)


def test_measurement_csv_roundtrip(tmp_path, feeder8):
    topo, params = feeder8
    ms = simulate(topo, params, 5, seed=4)
    path = tmp_path / "m.csv"
    write_measurements(path, ms)
    back = read_measurements(path)
    for ch in ("V", "Theta", "P", "Q"):
        np.testing.assert_array_equal(getattr(back, ch), getattr(ms, ch))


def test_measurement_csv_corrupt(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("t,bus,v,theta,p,q\n0,0,1.0,0.0,0.1\n")
    with pytest.raises(ParseError):
        read_measurements(path)
    path.write_text("t,bus,v,theta,p,q\n0,0,1.0,0.0,0.1,0.2\n1,1,1.0,0,0,0\n")
    with pytest.raises(ParseError):
        read_measurements(path)


def test_measurement_set_validation():
    with pytest.raises(InvalidArgumentError):
        MeasurementSet(np.ones((2, 3)), np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((3, 3)))
    with pytest.raises(InvalidArgumentError):
        MeasurementSet(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 3)), np.zeros((2, 3)))
