import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import make_params, random_sample
from helpers import make_alternator, markov_rollout, pin_inference
from mixcast.dataset import ForecastTask, MtsSample, corrupt_all, synthesize
from mixcast.evalcast import (CLUSTER_HEADER, METRICS_HEADER, UndefinedMetricsError, baselines,
                              clusters_csv, corrupt_prefixes, evaluate, forecast, forecast_batch, imputation_eval,
                              metrics_csv, robustness_sweep, score)
from mixcast.trainer import TrainConfig, train


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

def test_score_worked_example():
    rep = score([[1.0, 2.0, 3.0, 9.0]], [[1.0, 1.0, 1.0, np.nan]], [[1, 1, 1, 0]])
    assert rep.rmse == pytest.approx(math.sqrt(5 / 3))
    assert rep.mae == pytest.approx(1.0)
    assert rep.n_scored == 3


def test_score_needs_an_observed_target():
    with pytest.raises(UndefinedMetricsError):
        score(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)))


def test_score_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        score(np.zeros((2, 2)), np.zeros((2, 3)), np.ones((2, 2)))


_vals = arrays(np.float64, (3, 4), elements=st.floats(-1e3, 1e3))


@settings(max_examples=200, deadline=None)
@given(_vals, _vals, arrays(np.int8, (3, 4), elements=st.integers(0, 1)),
       st.floats(1e-3, 1e3))
def test_score_properties(pred, truth, mask, c):
    if mask.sum() == 0:
        return
    rep = score(pred, truth, mask)
    assert rep.rmse >= rep.mae - 1e-9 * max(1.0, rep.mae)
    scaled = score(c * pred, c * truth, mask)
    assert scaled.rmse == pytest.approx(c * rep.rmse, rel=1e-9, abs=1e-9)
    assert scaled.mae == pytest.approx(c * rep.mae, rel=1e-9, abs=1e-9)
    assert score(truth, truth, mask).rmse == 0.0


# ---------------------------------------------------------------------------
# Baselines and forecasts
# ---------------------------------------------------------------------------

def test_baselines_use_observed_entries_only():
    prefix = MtsSample("p", [[1.0, np.nan, 3.0, np.nan], [np.nan, 5.0, np.nan, np.nan]],
                       [[1, 0, 1, 0], [0, 1, 0, 0]])
    out = baselines(prefix, 3)
    np.testing.assert_array_equal(out["mean"], [[2.0] * 3, [5.0] * 3])
    np.testing.assert_array_equal(out["locf"], [[3.0] * 3, [5.0] * 3])


def test_single_cluster_forecast_is_its_mean():
    params = make_params(k=1, d=3, gamma=0.2)
    params.gen.mu.data[...] = [[1.5, -2.0, 0.25]]
    res = forecast(params, random_sample(np.random.default_rng(0), 3, 6, p_obs=0.6), 4)
    np.testing.assert_allclose(res.predictions, np.repeat(params.gen.mu.data.T, 4, axis=1),
                               atol=1e-12)
    np.testing.assert_allclose(res.psi_path, 1.0)


def test_full_basis_weight_forecasts_basis_mean():
    rng = np.random.default_rng(1)
    params = make_params(k=3, d=2, gamma=1.0)
    params.gen.mu.data[...] = rng.normal(size=(3, 2))
    params.basis_probs = np.array([0.2, 0.3, 0.5])
    res = forecast(params, random_sample(rng, 2, 5), 3)
    expected = params.basis_probs @ params.gen.mu.data
    np.testing.assert_allclose(res.predictions, np.repeat(expected[:, None], 3, axis=1),
                               atol=1e-12)


def _alternating_params(gamma):
    params = make_params(k=2, d=2, hidden=3, gamma=gamma)
    make_alternator(params.gen)
    means = np.array([[-1.0, 2.0], [4.0, 0.5]])
    params.gen.mu.data[...] = means
    params.basis_probs = np.array([0.5, 0.5])
    pin_inference(params.inf, [40.0, -40.0])
    return params, means


def test_alternating_model_forecast():
    params, means = _alternating_params(0.0)
    res = forecast(params, random_sample(np.random.default_rng(2), 2, 5), 6)
    A = np.array([[0.0, 1.0], [1.0, 0.0]])
    psi, x = markov_rollout(0, A, params.basis_probs, 0.0, means, 6)
    np.testing.assert_allclose(res.psi_path, psi, atol=1e-9)
    np.testing.assert_allclose(res.predictions, x.T, atol=1e-9)


def test_alternating_model_with_basis_weight():
    # the soft psi fed back still has a clear arg-max, so the cell keeps flipping
    g = 0.25
    params, means = _alternating_params(g)
    res = forecast(params, random_sample(np.random.default_rng(2), 2, 5), 6)
    flip = np.array([[0.0, 1.0], [1.0, 0.0]] * 3)
    psi = (1 - g) * flip + g * params.basis_probs
    np.testing.assert_allclose(res.psi_path, psi, atol=1e-9)
    np.testing.assert_allclose(res.predictions, (psi @ means).T, atol=1e-9)


def test_horizon_values_never_reach_the_forecast():
    rng = np.random.default_rng(3)
    params = make_params(k=3, d=2, hidden=4, gamma="gate", seed=5)
    task = ForecastTask(window=5, horizon=3)
    s = random_sample(rng, 2, 8, p_obs=0.8)
    poisoned = s.values.copy()
    poisoned[:, 5:] = 1e9
    s2 = MtsSample("s", poisoned, s.mask)
    a = forecast_batch(params, [task.split_sample(s)[0]], 3)[0]
    b = forecast_batch(params, [task.split_sample(s2)[0]], 3)[0]
    assert np.array_equal(a, b)


def test_batched_forecast_matches_single():
    rng = np.random.default_rng(4)
    params = make_params(k=3, d=2, hidden=4, gamma=0.1, seed=2)
    prefixes = [random_sample(rng, 2, 5, p_obs=0.7, sid=f"s{i}") for i in range(3)]
    batch, _ = forecast_batch(params, prefixes, 4)
    for i, p in enumerate(prefixes):
        np.testing.assert_allclose(batch[i], forecast(params, p, 4).predictions, atol=1e-12)


# ---------------------------------------------------------------------------
# Protocols
# ---------------------------------------------------------------------------

def _constant_samples(c, n=4, d=2, w=6):
    return [MtsSample(f"s{i}", np.full((d, w), c), np.ones((d, w))) for i in range(n)]


def test_imputation_eval_degenerate_model():
    params = make_params(k=1, d=1, gamma=0.0)
    params.gen.mu.data[...] = 0.0
    before, after = imputation_eval(params, _constant_samples(2.0, d=1), 0.3, seed=0)
    assert before == pytest.approx(0.0, abs=1e-12)
    assert after == pytest.approx(2.0)


def test_imputation_eval_identity_rho_splits_the_fill():
    # two variables with equal bandwidths: the fill is half the own curve
    params = make_params(k=1, d=2, gamma=0.0)
    params.gen.mu.data[...] = 2.0
    before, after = imputation_eval(params, _constant_samples(2.0), 0.3, seed=0)
    assert before == pytest.approx(1.0)
    assert after == pytest.approx(0.0, abs=1e-12)


def test_imputation_eval_rejects_bad_fraction():
    params = make_params(k=1, d=2)
    with pytest.raises(ValueError):
        imputation_eval(params, _constant_samples(1.0), 0.0, seed=0)


def _small_problem():
    samples, _ = synthesize(2, 2, 8, 30, 20.0, 0.05, seed=0)
    cfg = TrainConfig(k=2, gamma=0.05, sigma=2.0, hidden_dim=4, window=6, horizon=2,
                      epochs=2, batch_size=10, learning_rate=1e-2)
    return (samples[:18], samples[18:22], samples[22:]), cfg, ForecastTask(6, 2)


def test_sweep_rows_and_clean_delta_matches_direct_training():
    splits, cfg, task = _small_problem()
    rows = robustness_sweep(cfg, splits, [0.0, 0.3], [0, 1], task, with_baseline=True)
    assert len(rows) == 8
    assert {r["model"] for r in rows} == {"mixcast", "mean"}
    params, _ = train(splits[0], splits[1], replace(cfg, seed=1))
    direct = evaluate(params, splits[2], task)["model"]
    row = next(r for r in rows if r["delta"] == 0.0 and r["seed"] == 1 and r["model"] == "mixcast")
    assert row["rmse"] == direct.rmse and row["n_scored"] == direct.n_scored


def test_clean_corruption_is_identity():
    splits, _, _ = _small_problem()
    assert all(a.same_as(b) for a, b in zip(splits[0], corrupt_all(splits[0], 0.0, 9)))


def test_prefix_corruption_spares_the_horizon():
    rng = np.random.default_rng(6)
    samples = [random_sample(rng, 2, 10, sid=f"s{i}") for i in range(5)]
    out = corrupt_prefixes(samples, 7, 0.5, seed=1)
    for a, b in zip(samples, out):
        assert np.array_equal(a.mask[:, 7:], b.mask[:, 7:])
        assert b.mask[:, :7].sum() == 7
        assert ((b.mask <= a.mask)).all()


def test_sweep_rejects_bad_delta():
    splits, cfg, task = _small_problem()
    with pytest.raises(ValueError):
        robustness_sweep(cfg, splits, [1.0], [0], task)


def test_csv_headers():
    text = metrics_csv([{"dataset": "x", "model": "m", "delta": 0.1, "seed": 0,
                         "rmse": 1.0, "mae": 0.5, "n_scored": 3}])
    assert text.splitlines()[0] == ",".join(METRICS_HEADER)
    text = clusters_csv(["a"], [np.array([[0.2, 0.8], [0.6, 0.4]])])
    assert text.splitlines() == [",".join(CLUSTER_HEADER), "a,1,1,0.8", "a,2,0,0.6"]
