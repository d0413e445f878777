import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from condpca.errors import ConfigurationError, DataError
from condpca.mewma import (
    ChartConfig,
    fit_chart_config,
    mewma_update,
    run_chart,
    run_length,
    simulate_arl,
    t2_statistic,
)


def brute_force_t2(X, kappa, mu0, gamma):
    """Direct recursion with an explicit inverse, no reinitialisation."""
    Gw_inv = np.linalg.inv(kappa / (2 - kappa) * np.asarray(gamma))
    om = np.zeros(len(mu0))
    out = []
    for x in np.atleast_2d(X):
        om = (1 - kappa) * om + kappa * (x - mu0)
        out.append(om @ Gw_inv @ om)
    return np.array(out)


def test_update_examples():
    np.testing.assert_allclose(mewma_update([0.0, 0.0], [1.0, 2.0], 0.2), [0.2, 0.4])
    np.testing.assert_allclose(mewma_update([1.0, -1.0], [0.0, 0.0], 0.25), [0.75, -0.75])
    np.testing.assert_array_equal(mewma_update([3.0], [7.0], 1.0), [7.0])


def test_t2_examples():
    cfg = ChartConfig(kappa=1.0, mu0=np.zeros(2), gamma=np.eye(2))
    assert t2_statistic([0.6, 0.6], cfg) == pytest.approx(0.72, abs=1e-14)
    cfg = ChartConfig(kappa=0.2, mu0=np.zeros(2), gamma=np.eye(2))
    # Gamma_omega = I / 9
    assert t2_statistic([0.2, 0.4], cfg) == pytest.approx(1.8, abs=1e-13)
    cfg = ChartConfig(kappa=1.0, mu0=np.zeros(2), gamma=[[2.0, 1.0], [1.0, 2.0]])
    assert t2_statistic([1.0, 1.0], cfg) == pytest.approx(2.0 / 3.0, abs=1e-14)


def test_kappa_one_is_hotelling(backend, rng):
    A = rng.normal(size=(3, 3))
    G = A @ A.T + np.eye(3)
    mu = rng.normal(size=3)
    X = rng.normal(size=(200, 3)) * 2 + mu
    cfg = ChartConfig(kappa=1.0, mu0=mu, gamma=G, reinitialize_on_alarm=False)
    expect = np.einsum("ij,jk,ik->i", X - mu, np.linalg.inv(G), X - mu)
    np.testing.assert_allclose(run_chart(X, cfg).t2, expect, rtol=1e-10)


def test_matches_brute_force(backend, rng):
    A = rng.normal(size=(2, 2))
    G = A @ A.T + 0.5 * np.eye(2)
    X = rng.normal(size=(300, 2))
    cfg = ChartConfig(kappa=0.3, mu0=[0.1, -0.2], gamma=G, reinitialize_on_alarm=False)
    np.testing.assert_allclose(run_chart(X, cfg).t2,
                               brute_force_t2(X, 0.3, cfg.mu0, G), rtol=1e-10)


def test_spike_response(backend):
    # kappa (2 - kappa) a^2 = 0.36 * 100^2, then geometric decay by (1 - kappa)^2
    X = np.zeros((30, 1))
    X[10] = 100.0
    cfg = ChartConfig(kappa=0.2, mu0=[0.0], gamma=[[1.0]], reinitialize_on_alarm=False)
    t2 = run_chart(X, cfg).t2
    assert (t2[:10] == 0).all()
    assert t2[10] == pytest.approx(3600.0, rel=1e-12)
    np.testing.assert_allclose(t2[10:], 3600.0 * 0.64 ** np.arange(20), rtol=1e-10)


def test_reinitialisation_after_alarm(backend):
    X = np.zeros((6, 1))
    X[1] = 100.0
    cfg = ChartConfig(kappa=0.2, mu0=[0.0], gamma=[[1.0]], h4=10.0)
    res = run_chart(X, cfg)
    np.testing.assert_array_equal(res.alarms, [1])
    assert (res.t2[2:] == 0).all()
    # reset mask blocks the restart
    res = run_chart(X, cfg, reset=np.zeros(6, dtype=bool))
    np.testing.assert_array_equal(res.alarms, [1, 2, 3, 4, 5])


def test_run_length_cases(backend):
    cfg = ChartConfig(kappa=0.5, mu0=[0.0], gamma=[[1.0]], h4=1.0)
    assert run_length([[10.0], [0.0]], cfg) == (1, False)
    assert run_length(np.zeros((7, 1)), cfg) == (7, True)
    with pytest.raises(DataError):
        run_length(np.zeros((0, 1)), cfg)


def test_singular_gamma_and_bad_rows():
    with pytest.raises(ConfigurationError):
        ChartConfig(kappa=0.2, mu0=np.zeros(2), gamma=[[1.0, 1.0], [1.0, 1.0]])
    cfg = ChartConfig(kappa=0.2, mu0=np.zeros(2), gamma=[[1.0, 1.0], [1.0, 1.0]],
                      allow_singular=True)
    assert cfg.whitener.shape == (1, 2)
    # pseudo-inverse statistic: direction (1, 1) only
    assert t2_statistic([1.0, -1.0], cfg) == pytest.approx(0.0, abs=1e-12)
    cfg = ChartConfig(kappa=0.2, mu0=np.zeros(2), gamma=np.eye(2))
    with pytest.raises(DataError, match="row 1"):
        run_chart([[0.0, 0.0], [np.nan, 0.0]], cfg)
    for kappa in (0.0, 1.5):
        with pytest.raises(ConfigurationError):
            ChartConfig(kappa=kappa, mu0=[0.0], gamma=[[1.0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.05, 1.0))
def test_affine_invariance(seed, kappa):
    r = np.random.default_rng(seed)
    X = r.normal(size=(60, 3))
    B = r.normal(size=(3, 3)) + 3 * np.eye(3)
    c = r.normal(size=3)
    a = run_chart(X, fit_chart_config(X, kappa)).t2
    Y = X @ B.T + c
    b = run_chart(Y, fit_chart_config(Y, kappa)).t2
    np.testing.assert_allclose(a, b, rtol=1e-7, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.5, 20.0), st.floats(0.5, 20.0))
def test_first_alarm_monotone_in_h4(seed, h_lo, h_hi):
    h_lo, h_hi = sorted((h_lo, h_hi))
    X = np.random.default_rng(seed).normal(size=(200, 2))
    base = ChartConfig(kappa=0.2, mu0=np.zeros(2), gamma=np.eye(2))
    assert run_length(X, base.with_h4(h_lo)).length <= run_length(X, base.with_h4(h_hi)).length


def test_centring_commutes(rng):
    X = rng.normal(size=(100, 2)) + [5.0, -3.0]
    cfg = fit_chart_config(X, 0.2)
    centred = ChartConfig(0.2, np.zeros(2), cfg.gamma)
    np.testing.assert_allclose(run_chart(X, cfg).t2, run_chart(X - cfg.mu0, centred).t2,
                               rtol=1e-12)


def test_round_trip_dict():
    cfg = ChartConfig(kappa=0.2, mu0=[1.0, 2.0], gamma=[[1.0, 0.2], [0.2, 2.0]], h4=12.5)
    back = ChartConfig.from_dict(cfg.to_dict())
    np.testing.assert_array_equal(back.whitener, cfg.whitener)
    assert back.h4 == 12.5
    assert ChartConfig.from_dict(cfg.with_h4(np.inf).to_dict()).h4 == np.inf


def test_simulate_arl_kappa_one_geometric(backend):
    # kappa = 1 on iid data: run lengths are geometric with p = P(chi2_1 > 2.0)
    from scipy import stats

    h4 = 2.0
    cfg = ChartConfig(kappa=1.0, mu0=[0.0], gamma=[[1.0]], h4=h4)
    est = simulate_arl(cfg, reps=20000, seed=3)
    expect = 1.0 / stats.chi2.sf(h4, 1)
    assert abs(est.arl - expect) < 4 * est.se
    assert est.censored_fraction == 0.0
