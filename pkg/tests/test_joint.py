import math

import numpy as np
import pytest

from patopa import joint
from patopa.errors import InsufficientDataError, InvalidArgumentError, IterationFailureError
from patopa.estimators import eiv_log_likelihood, glra_diag
from patopa.feature_builder import build_system
from patopa.grid_model import (GridTopology, LineParams, builtin_feeder, complete_candidate_graph,
                               embed_params, load_feeder)
from patopa.joint import (NoiseInfo, PatopaOptions, TopoSearchState, estimate_with_missing_angles,
                          patopa, topo_est, train_validation_split, update_topo)
from patopa.scenario_gen import NoiseSpec, apply_noise, simulate


@pytest.fixture(scope="module")
def feeder8():
    return load_feeder(builtin_feeder("feeder8"))


def noisy(topo, params, level, T=300, seed=0):
    return apply_noise(simulate(topo, params, T, seed), NoiseSpec.uniform(level, seed=7000 + seed))


def sorted_system(fs, fit):
    order = np.argsort(fit.g_hat, kind="stable")
    return fs.select_edges(order), fit.g_hat[order], fit.b_hat[order], order


def test_split_sizes():
    assert train_validation_split(300) == 200
    assert train_validation_split(10) == 7
    with pytest.raises(InsufficientDataError):
        train_validation_split(1)


def test_topo_est_noiseless_separates_true_lines(feeder8):
    topo, params = feeder8
    K = complete_candidate_graph(8)
    ms = simulate(topo, params, 150, seed=1)
    fs = build_system(K, ms, NoiseInfo.from_measurements(ms))
    fs_s, g, b, order = sorted_system(fs, glra_diag(fs))
    state = TopoSearchState(0, 27, 0.0)
    cut = topo_est(fs_s, g, b, state=state)
    assert cut == 21
    assert {K.edges[order[k]] for k in range(cut, 28)} == set(topo.edges)
    assert len(state.probes) <= math.ceil(math.log2(28))


def test_topo_est_keeps_all_true_edges(feeder8):
    topo, params = feeder8
    ms = noisy(topo, params, 0.01)
    fs = build_system(topo, ms, NoiseInfo.from_measurements(ms))
    fs_s, g, b, _ = sorted_system(fs, glra_diag(fs))
    assert topo_est(fs_s, g, b) == 0


def test_topo_est_preconditions(feeder8):
    topo, params = feeder8
    ms = noisy(topo, params, 0.01, T=30)
    fs = build_system(topo, ms, NoiseInfo.from_measurements(ms))
    g = np.arange(7.0)
    with pytest.raises(InvalidArgumentError):
        topo_est(fs, g[::-1], np.zeros(7))
    with pytest.raises(InvalidArgumentError):
        topo_est(fs.select_edges([0]), g[:1], g[:1])
    with pytest.raises(InvalidArgumentError):
        topo_est(fs, g[:5], g[:5])


def test_topo_est_reports_failing_probe(feeder8, monkeypatch):
    topo, params = feeder8
    ms = noisy(topo, params, 0.01, T=30)
    fs = build_system(topo, ms, NoiseInfo.from_measurements(ms))
    fs_s, g, b, _ = sorted_system(fs, glra_diag(fs))

    def boom(*args, **kwargs):
        raise IterationFailureError("inner solve failed", iteration=3)

    monkeypatch.setattr(joint, "glra_diag", boom)
    with pytest.raises(IterationFailureError) as info:
        topo_est(fs_s, g, b)
    assert info.value.probe == 0 and info.value.iteration == 3


def test_update_topo_examples():
    K = complete_candidate_graph(3)
    topo, keep = update_topo(K, [3.0, 1.0, 2.0], 0)
    assert topo == K
    topo, keep = update_topo(K, [1.0, 1.0, 1.0], 2)
    assert topo.n_edges == 3
    K4 = GridTopology(4, [(0, 1), (1, 2), (2, 3), (0, 3)])
    topo, keep = update_topo(K4, [0.0, 0.0, 1.0, 2.0], 2)
    assert list(keep) == [2, 3]
    assert set(topo.edges) == {(0, 3), (2, 3)}
    with pytest.raises(InvalidArgumentError):
        update_topo(K4, [0.0, 0.0, 1.0, 2.0], 4)


def test_patopa_noiseless_exact(feeder8):
    topo, params = feeder8
    res = patopa(simulate(topo, params, 300, seed=2))
    assert set(res.edges) == set(topo.edges)
    truth = embed_params(topo, params, res.candidates)
    on = truth.g != 0
    np.testing.assert_allclose(res.g_hat[on], truth.g[on], rtol=1e-8)
    np.testing.assert_allclose(res.b_hat[on], truth.b[on], rtol=1e-8)
    # removed candidates carry zeros
    np.testing.assert_array_equal(res.g_hat[truth.g == 0], 0)
    np.testing.assert_array_equal(res.b_hat[truth.g == 0], 0)


def test_patopa_noisy_exact_topology(feeder8):
    topo, params = feeder8
    res = patopa(noisy(topo, params, 0.10, T=500, seed=3))
    assert set(res.edges) == set(topo.edges)


def test_patopa_trace_monotone_and_bounded(feeder8):
    topo, params = feeder8
    res = patopa(noisy(topo, params, 0.05, seed=4))
    counts = [e["edges"] for e in res.trace]
    assert all(a > b for a, b in zip(counts, counts[1:]))
    assert res.outer_iterations == len(res.trace) <= 28
    doc = res.to_dict()
    assert set(doc) >= {"edges", "g", "b", "outer_iterations", "trace"}
    assert len(doc["g"]) == len(doc["edges"])


def test_patopa_final_fit_clears_validation_threshold(feeder8):
    topo, params = feeder8
    ms = noisy(topo, params, 0.05, seed=5)
    options = PatopaOptions()
    res = patopa(ms, options=options)
    K = res.candidates
    fs = build_system(K, ms, NoiseInfo.from_measurements(ms))
    full = glra_diag(fs, track_condition=False)
    val = fs.time_steps(train_validation_split(ms.T), ms.T)
    l_base = eiv_log_likelihood(val.X, val.y, full.g_hat, full.b_hat, val.weights())
    l_final = eiv_log_likelihood(val.X, val.y, res.g_hat, res.b_hat, val.weights())
    assert l_final >= l_base - options.likelihood_slack * abs(l_base)


def test_patopa_soundness_at_low_noise(feeder8):
    topo, params = feeder8
    for seed in range(30):
        res = patopa(noisy(topo, params, 0.05, T=500, seed=100 + seed))
        assert set(topo.edges) <= set(res.edges), f"trial {seed} removed a true line"


def test_patopa_two_bus_single_edge():
    topo = complete_candidate_graph(2)
    params = LineParams([3.0], [-2.0])
    res = patopa(noisy(topo, params, 0.01, T=50))
    assert res.edges == ((0, 1),)
    assert res.outer_iterations == 1


def test_patopa_insufficient_data(feeder8):
    topo, params = feeder8
    ms = simulate(topo, params, 3, seed=0)
    with pytest.raises(InsufficientDataError) as info:
        patopa(ms)
    assert info.value.required_samples == 4


def test_patopa_candidate_validation(feeder8):
    topo, params = feeder8
    ms = simulate(topo, params, 10, seed=0)
    with pytest.raises(InvalidArgumentError):
        patopa(ms, candidates=complete_candidate_graph(5))
    with pytest.raises(InvalidArgumentError):
        patopa(ms, candidates=GridTopology(8, []))


def test_missing_angles_empty_set_is_plain_run(feeder8):
    topo, params = feeder8
    ms = noisy(topo, params, 0.01, T=200, seed=6)
    a, b = patopa(ms), estimate_with_missing_angles(ms, set())
    assert a.edges == b.edges
    np.testing.assert_array_equal(a.g_hat, b.g_hat)
    np.testing.assert_array_equal(a.b_hat, b.b_hat)


def test_missing_angles_ignore_input_column(feeder8):
    topo, params = feeder8
    ms = noisy(topo, params, 0.01, T=200, seed=6)
    a = estimate_with_missing_angles(ms, {4})
    scrambled = ms.Theta.copy()
    scrambled[:, 4] = 99.0
    from patopa.scenario_gen import MeasurementSet
    other = MeasurementSet(ms.V, scrambled, ms.P, ms.Q, sigma=ms.sigma)
    b = estimate_with_missing_angles(other, {4})
    np.testing.assert_array_equal(a.g_hat, b.g_hat)


def test_missing_angles_single_bus_topology(feeder8):
    topo, params = feeder8
    res = estimate_with_missing_angles(noisy(topo, params, 0.01, T=500, seed=8), {5})
    assert set(res.edges) == set(topo.edges)


def test_missing_angles_validation(feeder8):
    topo, params = feeder8
    ms = simulate(topo, params, 10, seed=0)
    with pytest.raises(InvalidArgumentError):
        estimate_with_missing_angles(ms, range(8))
    with pytest.raises(InvalidArgumentError):
        estimate_with_missing_angles(ms, {9})


def test_large_feeder_smoke():
    topo, params = load_feeder(builtin_feeder("feeder123"))
    rng = np.random.default_rng(0)
    extra = set()
    while len(extra) < 20:
        a, b = sorted(rng.choice(123, 2, replace=False).tolist())
        if (a, b) not in topo.edges:
            extra.add((a, b))
    candidates = GridTopology(123, list(topo.edges) + sorted(extra))
    ms = noisy(topo, params, 0.01, T=20, seed=0)
    res = patopa(ms, options=PatopaOptions(max_iter=40, probe_max_iter=10), candidates=candidates)
    assert 0 < len(res.edges) <= candidates.n_edges
    assert np.all(np.isfinite(res.g_hat))
