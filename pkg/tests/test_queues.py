import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from thzris.queues import (ArrivalConfig, QueueState, RiskParams, derive_eta, drift_bound_check,
                           evar_estimate, evar_sliding, lyapunov, sample_arrivals, update_queues,
                           upsilon, var_estimate)

P = RiskParams()
queue_vals = st.floats(0.0, 1e3, allow_nan=False)


def test_eta_default():
    assert derive_eta(2.0, 0.05, 50.0) == pytest.approx(5.1, abs=1e-12)
    assert P.eta == pytest.approx(5.1, abs=1e-12)


def test_eta_bracket_vanishes():
    # gamma (kappa + 1) = epsilon
    assert derive_eta(1.5, 0.05, 29.0) == pytest.approx(1.5 ** 2, abs=1e-12)


def test_eta_infeasible_rejected():
    assert derive_eta(1.0, 0.01, 10.0) == pytest.approx(-0.78, abs=1e-12)
    with pytest.raises(ValueError):
        RiskParams(gamma=0.01, kappa=10.0, epsilon=1.0)


@pytest.mark.parametrize("kw", [dict(gamma=0.0), dict(gamma=1.0), dict(epsilon=0.0),
                                dict(alpha=1.0), dict(v_tradeoff=-1.0)])
def test_risk_params_validation(kw):
    with pytest.raises(ValueError):
        RiskParams(**kw)


def test_arrivals_zero_rate():
    a = np.stack([sample_arrivals(ArrivalConfig((0.0, 0.0)), np.random.default_rng(i)) for i in range(50)])
    assert (a == 0).all()


def test_arrivals_moments():
    rng = np.random.default_rng(5)
    a = np.concatenate([sample_arrivals(ArrivalConfig.uniform(1.0, 1000), rng) for _ in range(1000)])
    assert abs(a.mean() - 1.0) <= 0.01
    assert abs(a.var() - 1.0) <= 0.02


def test_arrivals_zero_probability():
    rng = np.random.default_rng(6)
    a = np.concatenate([sample_arrivals(ArrivalConfig.uniform(2.5, 1000), rng) for _ in range(1000)])
    assert abs((a == 0).mean() / math.exp(-2.5) - 1) <= 0.05


def test_arrival_config_rejects_negative():
    with pytest.raises(ValueError):
        ArrivalConfig((1.0, -0.5))


def test_queue_update_examples():
    s, q_t = update_queues(QueueState([5.0]), [3.5], [2], P)
    assert s.q[0] == pytest.approx(3.5) and q_t == 5.0
    s, _ = update_queues(QueueState([1.0]), [10.0], [0], P)
    assert s.q[0] == 0.0


def test_virtual_queue_examples():
    s, _ = update_queues(QueueState([4.0], z1=2.0, z2=0.0), [0.0], [0], P)
    assert s.z1 == pytest.approx(4.0)
    assert s.z2 == pytest.approx(10.9)


def test_virtual_queues_use_pre_update_max():
    s, q_t = update_queues(QueueState([1.0, 3.0]), [0.0, 3.0], [9, 0], P)
    assert q_t == 3.0
    assert s.z1 == pytest.approx(1.0)


def test_queue_update_rejects_negative():
    with pytest.raises(ValueError):
        update_queues(QueueState([1.0]), [-1.0], [0], P)
    with pytest.raises(ValueError):
        update_queues(QueueState([1.0]), [0.0], [-1], P)


@given(hnp.arrays(float, 3, elements=queue_vals), hnp.arrays(float, 3, elements=queue_vals),
       hnp.arrays(np.int64, 3, elements=st.integers(0, 50)), queue_vals, queue_vals)
def test_queues_stay_nonnegative(q, served, arrivals, z1, z2):
    s, _ = update_queues(QueueState(q, z1, z2), served, arrivals, P)
    assert (s.q >= 0).all() and s.z1 >= 0 and s.z2 >= 0


def test_lyapunov_example():
    assert lyapunov(QueueState([1.0, 2.0], z1=1.0, z2=2.0)) == pytest.approx(5.0)


def test_upsilon_example():
    assert upsilon(2, 10.0, P) == pytest.approx(115.005, abs=1e-9)


def test_drift_empty_system():
    before = QueueState.empty(2)
    after, _ = update_queues(before, [0.0, 0.0], [0, 0], P)
    rep = drift_bound_check(before, after, [0.0, 0.0], [0, 0], np.full((2, 2), 10.0), P)
    assert rep.lhs == 0.0 and rep.ok and rep.upsilon > 0


def test_drift_dimension_mismatch():
    before = QueueState.empty(2)
    with pytest.raises(ValueError):
        drift_bound_check(before, before, [0.0], [0, 0], np.ones((2, 2)), P)


@given(hnp.arrays(float, 3, elements=st.floats(0, 3)), st.floats(0, 3), st.floats(0, 3),
       hnp.arrays(float, (2, 3), elements=st.floats(5, 50)), st.integers(0, 2))
def test_drift_bound_small_queues(q, z1, z2, rates, user):
    # inside the region where the bound's constant dominates the square terms
    before = QueueState(q, z1, z2)
    x = np.zeros((2, 3))
    x[0, user] = 1
    served = (x * rates).sum(axis=0)
    arrivals = np.array([1, 0, 2])
    after, _ = update_queues(before, served, arrivals, P)
    assert drift_bound_check(before, after, served, arrivals, rates, P).ok


def test_evar_examples():
    assert evar_estimate([5.0] * 7, 0.01) == pytest.approx(-5.0, abs=1e-12)
    assert evar_estimate([0.0, 0.0, 0.0], 0.3) == 0.0
    assert evar_estimate([0.0, 10.0], 0.1) == pytest.approx(math.log((1 + math.exp(-1)) / 2) / 0.1)
    assert evar_estimate([0.0, 10.0], 0.1) == pytest.approx(-3.799, abs=1e-3)


def test_evar_rejects_empty():
    with pytest.raises(ValueError):
        evar_estimate([], 0.1)


@given(hnp.arrays(float, st.integers(1, 50), elements=st.floats(0, 1e4)), st.floats(1e-4, 0.99))
def test_evar_bounds(x, gamma):
    phi = evar_estimate(x, gamma)
    tol = 1e-9 * max(1.0, float(x.max()))
    assert -x.max() - tol <= phi <= -x.min() + tol


@given(st.floats(0, 1e6), st.floats(1e-4, 0.99), st.integers(1, 20))
def test_evar_constant(c, gamma, n):
    assert evar_estimate(np.full(n, c), gamma) == pytest.approx(-c, abs=1e-12 * max(1.0, c))


@given(hnp.arrays(float, st.integers(1, 60), elements=st.floats(0, 500)), st.integers(1, 25),
       st.floats(1e-3, 0.5))
def test_evar_sliding_matches_direct(x, window, gamma):
    got = evar_sliding(x, gamma, window)
    want = [evar_estimate(x[max(0, i - window + 1):i + 1], gamma) for i in range(len(x))]
    np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-9)


def test_var_examples():
    assert var_estimate(np.arange(1, 101), 0.05) == 95
    assert var_estimate([3.3] * 9, 0.2) == 3.3
    assert var_estimate([0.0, 10.0], 0.5) == 0.0


def test_var_rejects_empty():
    with pytest.raises(ValueError):
        var_estimate([], 0.05)
