from __future__ import annotations

import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose
from oracles import LinearFeatures, kalman_predict

from rrgpssm.evaluation import (
    PredictiveSummary,
    forecast_k_step,
    mean_loglik,
    pool,
    posterior_predictive,
    rmse,
    rolling_forecast,
    simulate_predictive,
    write_predictive_csv,
)
from rrgpssm.gibbs import ChainRecord, GibbsChain
from rrgpssm.model import RRGPSSM


def linear_chain(a=0.8, q=0.5, r=1.0, n_records=1) -> GibbsChain:
    template = RRGPSSM(A=[[a]], Q=[[q]], basis=LinearFeatures(1), C=[[1.0]], R=[[r]])
    recs = [
        ChainRecord(k, None, np.array([[a]]), np.array([[q]]), np.zeros(0), False, 0.0)
        for k in range(n_records)
    ]
    return GibbsChain(template, recs)


def summary(mean, var=None):
    mean = np.asarray(mean, float).reshape(-1, 1)
    var = np.ones_like(mean) if var is None else np.asarray(var, float).reshape(-1, 1)
    return PredictiveSummary(mean, var, 1)


class TestMetrics:
    def test_rmse_examples(self):
        y = np.array([0.3, -1.0, 2.0])
        assert rmse(summary(y), y) == 0.0
        assert_allclose(rmse(summary(y + 0.7), y), 0.7)
        assert_allclose(rmse(summary([0.0, 0.0]), [3.0, 4.0]), np.sqrt(12.5))
        assert_allclose(rmse(summary([0.0, 0.0]), [3.0, 4.0]), 3.53553, atol=1e-5)

    def test_mean_loglik_examples(self):
        y = np.array([0.3, -1.0, 2.0])
        assert_allclose(mean_loglik(summary(y), y), -0.5 * np.log(2 * np.pi))
        c = 5.0
        assert_allclose(mean_loglik(summary(y, c * np.ones(3)), y) - mean_loglik(summary(y), y), -0.5 * np.log(c))

    def test_loglik_maximised_at_squared_residual(self):
        y, m = np.array([1.0]), np.array([0.2])
        best = (y - m) ** 2
        lls = [mean_loglik(summary(m, best * s), y) for s in (0.5, 0.9, 1.0, 1.1, 2.0)]
        assert np.argmax(lls) == 2

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            rmse(summary([0.0, 1.0]), [1.0])
        with pytest.raises(ValueError):
            mean_loglik(summary([0.0, 1.0]), [1.0, 2.0, 3.0])

    def test_variance_floor(self):
        assert np.isfinite(mean_loglik(summary([1.0], [0.0]), [1.0]))

    def test_negative_variance_rejected(self):
        with pytest.raises(ValueError):
            summary([0.0], [-1.0])


def test_pool_law_of_total_variance():
    rng = np.random.default_rng(0)
    m = rng.standard_normal((30, 5, 2))
    v = rng.random((30, 5, 2))
    p = pool(m, v)
    assert_allclose(p.mean, m.mean(axis=0), atol=1e-12)
    # direct second-moment form: E[y^2] - E[y]^2 with E[y^2] = mean(v + m^2)
    assert_allclose(p.var, np.mean(v + m**2, axis=0) - m.mean(axis=0) ** 2, atol=1e-8)
    with pytest.raises(ValueError):
        pool(np.zeros((0, 5, 1)), np.zeros((0, 5, 1)))


@settings(max_examples=30, deadline=None)
@given(
    arrays(np.float64, (6, 4, 1), elements=st.floats(-10, 10)),
    arrays(np.float64, (6, 4, 1), elements=st.floats(0.01, 5)),
    st.permutations(range(6)),
)
def test_metrics_invariant_to_record_order(m, v, perm):
    y = np.linspace(-1, 1, 4)
    a, b = pool(m, v), pool(m[list(perm)], v[list(perm)])
    assert rmse(a, y) == pytest.approx(rmse(b, y), rel=1e-12, abs=1e-12)
    assert mean_loglik(a, y) == pytest.approx(mean_loglik(b, y), rel=1e-12, abs=1e-12)


def test_degenerate_chain_predicts_zero():
    chain = linear_chain(a=0.0, q=1e-300, r=1e-300, n_records=3)
    x = np.random.default_rng(1).standard_normal((20, 1))
    pred = posterior_predictive(chain, x, "one_step")
    assert_allclose(pred.mean, 0.0, atol=1e-100)
    assert_allclose(pred.var, 0.0, atol=1e-100)


def test_one_step_exact_and_sampled_agree():
    chain = linear_chain(n_records=2)
    x = np.linspace(-2, 2, 9)[:, None]
    exact = posterior_predictive(chain, x, "one_step")
    assert_allclose(exact.mean, 0.8 * x[:-1])
    assert_allclose(exact.var, 1.5)
    sampled = posterior_predictive(chain, x, "one_step", S=20_000, rng=np.random.default_rng(2))
    assert np.all(np.abs(sampled.mean - exact.mean) < 4 * np.sqrt(1.5 / 40_000))
    assert_allclose(sampled.var, 1.5, rtol=0.05)
    state = posterior_predictive(chain, x, "one_step", output="state")
    assert_allclose(state.var, 0.5)


def test_free_run_variance_grows_for_contractive_model():
    chain = linear_chain(a=0.5, q=0.3, r=0.1)
    pred = posterior_predictive(chain, np.zeros((6, 1)), "free_run", S=40_000, rng=np.random.default_rng(3), output="state")
    # exact state variances: 0, 0.3, 0.375, ...
    exact = np.cumsum(0.3 * 0.25 ** np.arange(5))
    assert_allclose(pred.var[1:, 0], exact, rtol=0.05)
    assert np.all(np.diff(pred.var[:4, 0]) > 0)


def test_simulate_predictive_per_record_start():
    chain = linear_chain(a=1.0, q=1e-300, r=1e-300, n_records=2)
    pred = simulate_predictive(chain, 4, S=3, rng=np.random.default_rng(0), x0=np.array([[1.0], [3.0]]), output="state")
    assert_allclose(pred.mean, 2.0)
    assert_allclose(pred.var, 1.0)  # spread between the two records


def test_empty_chain_rejected():
    chain = linear_chain()[0:0]
    with pytest.raises(ValueError, match="empty"):
        posterior_predictive(chain, np.zeros((3, 1)))


def test_forecast_of_constant_system_is_constant():
    chain = linear_chain(a=1.0, q=1e-4, r=1e-2)
    y = np.full((15, 1), 2.5)
    pred = forecast_k_step(chain, y, 4, N_f=2000, rng=np.random.default_rng(4))
    assert_allclose(pred.mean, 2.5, atol=0.02)
    assert np.ptp(pred.mean) < 0.01


def test_forecast_matches_kalman_predictive():
    a, q, r = 0.8, 0.5, 1.0
    chain = linear_chain(a, q, r, n_records=40)
    mdl = chain.model_at(0)
    y = mdl.simulate(25, np.random.default_rng(5)).observations
    km, kv = kalman_predict(y, a, q, r, 3)
    pred = forecast_k_step(chain, y, 3, N_f=2000, rng=np.random.default_rng(6))
    se_m = np.sqrt(kv / (40 * 2000)) * 3  # correlated filter noise: generous SE
    assert np.all(np.abs(pred.mean[:, 0] - km) < 3 * se_m + 0.02)
    assert_allclose(pred.var[:, 0], kv, rtol=0.05)


def test_one_step_forecast_with_informative_observations():
    # sharp likelihood: few effective particles, so SEs are measured (about 0.02 at this N_f)
    y = np.array([[0.1], [0.4], [-0.3], [1.2]])
    fc = forecast_k_step(linear_chain(r=1e-2), y, 1, N_f=40_000, rng=np.random.default_rng(7))
    km, kv = kalman_predict(y, 0.8, 0.5, 1e-2, 1)
    assert abs(fc.mean[0, 0] - km[0]) < 0.06
    assert abs(fc.var[0, 0] - kv[0]) < 0.06


def test_rolling_forecast_shape_and_alignment():
    chain = linear_chain(a=1.0, q=0.1, r=1e-2)
    y = np.r_[np.zeros(5), np.ones(5)][:, None]
    pred = rolling_forecast(chain, y, 2, N_f=1000, rng=np.random.default_rng(8))
    assert len(pred) == 8
    # entry i predicts y[i + 2] from data up to i, so the level shift shows from entry 5
    assert np.all(np.abs(pred.mean[:5]) < 0.15)
    assert np.all(np.abs(pred.mean[5:] - 1) < 0.3)
    with pytest.raises(ValueError):
        rolling_forecast(chain, y[:2], 2, N_f=10)


def test_write_predictive_csv(tmp_path):
    p = summary([0.5, 1.5], [4.0, 1.0])
    path = tmp_path / "pred.csv"
    write_predictive_csv(path, p, [10, 11])
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["t", "mean", "var", "lo95", "hi95"]
    assert float(rows[1][3]) == pytest.approx(0.5 - 1.959963984540054 * 2)
    assert float(rows[2][0]) == 11.0
