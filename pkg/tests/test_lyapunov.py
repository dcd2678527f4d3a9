import math

import pytest
from hypothesis import given, strategies as st

from edgesplit.cost import CostBreakdown
from edgesplit.lyapunov import (
    LyapunovConfig, QueueState, adaptive_v, dpp_reward, drift_bound, drift_estimate, immediate_cost, lyapunov,
    performance_bound, queue_update, stability_bound,
)

nonneg = st.floats(0, 1e6, allow_nan=False)


def cb(T=0.0, E=0.0, acc=0.0):
    return CostBreakdown(0.0, 0.0, 0.0, T, E, acc, 0)


def test_queue_update_cases():
    assert queue_update(5, 2, 1, 1.0) == 4
    assert queue_update(0, 3, 2, 1.0) == 2
    assert queue_update(1, 0.5, 0, 1.0) == 0.5


def test_queue_update_rejects_negative():
    with pytest.raises(ValueError):
        queue_update(-1, 1, 0)


@given(nonneg, nonneg, st.integers(0, 1000), st.floats(0.01, 10))
def test_queue_update_properties(Q, mu, A, dt):
    q = queue_update(Q, mu, A, dt)
    assert q >= 0
    assert queue_update(Q + 1, mu, A, dt) >= q
    assert queue_update(Q, mu, A + 1, dt) >= q
    assert queue_update(Q, mu + 1, A, dt) <= q


def test_lyapunov_values():
    assert (lyapunov(0), lyapunov(4), lyapunov(10)) == (0, 8, 50)


def test_drift_cases():
    assert drift_estimate(10, 3, 5) == -20
    assert drift_estimate(0, 3, 99) == 0
    assert drift_estimate(50, 8.5, 8) == 25
    assert drift_bound(10, 3, 5, 100) == 80


@given(st.floats(0.001, 1e4), st.floats(0, 100), st.floats(1e-6, 100))
def test_drift_sign(Q, lam, extra):
    assert drift_estimate(Q, lam, lam + extra) < 0
    assert drift_estimate(Q, lam + extra, lam) > 0


def test_adaptive_v_cases():
    cfg = LyapunovConfig()
    assert adaptive_v(0, cfg) == 10.0
    assert adaptive_v(10, cfg) == pytest.approx(0.1 + 9.9 * math.exp(-1), abs=1e-12)
    assert round(adaptive_v(10, cfg), 4) == 3.7420
    assert adaptive_v(1000, cfg) == pytest.approx(0.1, abs=1e-6)
    assert LyapunovConfig(V_fixed=2.5).V(123) == 2.5


@given(st.floats(0, 1e3), st.floats(0.001, 10))
def test_adaptive_v_decreasing_and_bounded(Q, dQ):
    cfg = LyapunovConfig()
    a, b = adaptive_v(Q, cfg), adaptive_v(Q + dQ, cfg)
    assert cfg.V_min <= b <= a <= cfg.V_max
    if adaptive_v(Q, cfg) - cfg.V_min > 1e-9:
        assert b < a


def test_config_validation():
    with pytest.raises(ValueError):
        LyapunovConfig(V_min=5, V_max=1)
    with pytest.raises(ValueError):
        LyapunovConfig(Q_ref=0)


def test_reward_cases():
    assert dpp_reward(-20, 0.1, 1) == pytest.approx(19.9)
    assert dpp_reward(0, 0, 5) == 0
    assert dpp_reward(25, 1, 2) == -51


@given(st.floats(-1e3, 1e3), st.floats(0, 1e3), st.floats(0, 10), st.floats(0.1, 10))
def test_reward_linear_in_g(drift, g, V, c):
    base = dpp_reward(drift, 0.0, V)
    assert dpp_reward(drift, c * g, V) - base == pytest.approx(c * (dpp_reward(drift, g, V) - base), abs=1e-6)


def test_immediate_cost_cases():
    assert immediate_cost(cb(T=0.087), 1, 0, 0) == pytest.approx(0.087)
    assert immediate_cost(cb(T=1, E=2, acc=3), 0, 0, 0) == 0
    assert immediate_cost(cb(T=0.1, E=2.5, acc=0.25), 1, 1, 1) == pytest.approx(2.85)


def test_theory_bounds():
    assert stability_bound(1.0, 2.0, 0.5, 100) == pytest.approx(204)
    assert stability_bound(1.0, 2.0, 0.0, 100) == math.inf
    assert performance_bound(10, 2.0, 100) == pytest.approx(12)


def test_queue_state_window():
    qs = QueueState()
    for q in range(30):
        qs.push(float(q))
    assert len(qs.window) == 20 and qs.Q == 29.0
