import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from inrl.agent import (
    AgentConfig, ControlDirective, Phase, ReportRejected, RewardParams, SLAPathSelector,
    check_reports, closed_form_probability, compute_reward, initial_state, on_report,
    select_path, sla_update, updates_to_converge,
)
from inrl.arith import ConstrainedBackend
from inrl.telemetry import HopRecord, SegmentMetrics, TelemetryReport

R_IDLE = 0.9954172629595402  # reward at Q=0, D=0 with defaults (mpmath)
P_AFTER_ONE = [0.748854315739885, 0.251145684260115]


def rep(path, q=0, d=0, probe=False, domain=1):
    return TelemetryReport(domain, path, probe, 0, [HopRecord(1, q, d)], 0)


def test_reward_anchors():
    p = RewardParams()
    assert compute_reward(SegmentMetrics(20, 500), p) == pytest.approx(0.5, abs=1e-12)
    assert compute_reward(SegmentMetrics(0, 0), p) == pytest.approx(R_IDLE, abs=1e-15)
    assert compute_reward(SegmentMetrics(1e6, 1e9), p) == pytest.approx(0.0, abs=1e-12)


def test_reward_params_validation():
    with pytest.raises(ValueError):
        RewardParams(beta1=0.6, beta2=0.6)
    with pytest.raises(ValueError):
        RewardParams(c_q=0)


def test_config_validation():
    AgentConfig(alpha=1.0)
    for bad in ({"alpha": 0}, {"alpha": 1.2}, {"p_conv": 1.0}, {"window": 0},
                {"aggregation": "mean"}, {"backend": "gpu"}):
        with pytest.raises(ValueError):
            AgentConfig(**bad)


def test_one_update_oracle():
    out = sla_update([0.5, 0.5], 0, R_IDLE, 0.5)
    assert out == pytest.approx(P_AFTER_ONE, abs=1e-15)


def test_update_rejects_bad_input():
    with pytest.raises(IndexError):
        sla_update([0.5, 0.5], 2, 0.5, 0.5)
    with pytest.raises(ValueError):
        sla_update([0.5, 0.5], 0, 1.5, 0.5)
    with pytest.raises(ValueError):
        sla_update([0.5, 0.5], 0, 0.5, 0.0)


@given(st.lists(st.tuples(st.integers(0, 3), st.floats(0, 1), st.floats(0.01, 1)), max_size=50))
def test_update_stays_on_simplex(steps):
    p = [0.25] * 4
    for sel, r, a in steps:
        p = sla_update(p, sel, r, a)
        assert abs(sum(p) - 1) <= 1e-9
        assert all(0 <= x <= 1 for x in p)


def test_zero_reward_is_inaction():
    assert sla_update([0.3, 0.7], 0, 0.0, 0.9) == [0.3, 0.7]


def test_closed_form_and_steps():
    assert closed_form_probability(0, 0.5, 1.0) == 0.5
    assert updates_to_converge(0.5, 1.0) == 3  # 0.5 -> 0.75 -> 0.875 -> 0.9375
    assert updates_to_converge(0.1, 1.0) == 16


def test_select_path_distribution():
    rng = random.Random(1)
    counts = np.bincount([select_path([0.2, 0.8], rng) for _ in range(5000)], minlength=2)
    assert 0.17 < counts[0] / 5000 < 0.23


def test_initial_state():
    s = initial_state(AgentConfig(), 3)
    assert s.phase is Phase.LEARNING and s.probs == pytest.approx([1 / 3] * 3) and s.ema == [0.5] * 3
    with pytest.raises(ValueError):
        initial_state(AgentConfig(), 1)
    with pytest.raises(ValueError):
        initial_state(AgentConfig(p_conv=0.3), 3)


def _converge(cfg, good=1):
    st = initial_state(cfg, 2)
    rng = random.Random(0)
    for _ in range(100):
        st, d = on_report(st, cfg, rep(good), rng)
        if st.phase is Phase.STEERING:
            return st, d
    raise AssertionError("did not converge")


def test_learning_then_steering():
    cfg = AgentConfig()
    st, d = _converge(cfg)
    assert st.learned_path == 1 and d == ControlDirective(1, 1)
    assert st.n_updates == updates_to_converge(0.5, R_IDLE)
    # data reports while steering pin the learned path and do not learn
    probs = list(st.probs)
    st2, d2 = on_report(st, cfg, rep(0), random.Random(0))
    assert d2.path_index == 1 and st2.probs == probs


def test_probe_in_learning_updates_only_ema():
    cfg = AgentConfig()
    st = initial_state(cfg, 2)
    st2, d = on_report(st, cfg, rep(1, 60, 6000, probe=True), random.Random(0))
    assert d is None and st2.probs == st.probs
    assert st2.ema[1] == pytest.approx(0.5 * (1 - 0.125))


def test_reexploration_after_window_degraded_probes():
    cfg = AgentConfig()
    st, _ = _converge(cfg)
    rng = random.Random(0)
    # Learned path degrades: its EMA must fall under theta_low, then W probes in a row.
    directives = []
    for _ in range(40):
        st, _ = on_report(st, cfg, rep(1, 64, 6400), rng)
        st, d = on_report(st, cfg, rep(0, probe=True), rng)
        directives.append(d)
        if st.phase is Phase.LEARNING:
            break
    assert st.phase is Phase.LEARNING
    assert st.probs == [0.5, 0.5] and st.learned_path is None
    assert directives[-1] is not None and directives[-2] is None


def test_streak_resets_on_healthy_probe():
    cfg = AgentConfig(window=2)
    st, _ = _converge(cfg)
    st.ema = [0.9, 0.3]  # learned path 1 degraded
    rng = random.Random(0)
    st, _ = on_report(st, cfg, rep(0, probe=True), rng)
    assert st.degradation_streak == 1
    st.ema = [0.1, 0.95]
    st, _ = on_report(st, cfg, rep(0, 60, 6000, probe=True), rng)
    assert st.degradation_streak == 0 and st.phase is Phase.STEERING


def test_reports_rejected():
    cfg = AgentConfig()
    st = initial_state(cfg, 2)
    with pytest.raises(ReportRejected):
        on_report(st, cfg, rep(2), random.Random(0))
    with pytest.raises(ReportRejected):
        on_report(st, cfg, rep(0, domain=2), random.Random(0))


def test_directive_wire():
    d = ControlDirective(3, 1, True)
    assert d.to_bytes() == b"\x00\x00\x00\x03\x01\x01"
    assert ControlDirective.from_bytes(d.to_bytes()) == d
    with pytest.raises(ValueError):
        ControlDirective.from_bytes(b"\x00")
    with pytest.raises(ValueError):
        ControlDirective.from_bytes(b"\x00\x00\x00\x03\x01\x02")


def test_check_reports():
    out = check_reports([[1, 0, 3, 40.5]])
    assert out[0].path_index == 1 and out[0].records[0] == HopRecord(0, 3, 40.5)
    for bad in ([[0, 0, 1]], [[0.5, 0, 1, 1]], [[0, 0, -1, 1]]):
        with pytest.raises(ValueError):
            check_reports(bad)
    with pytest.raises(ValueError):
        check_reports([[2, 0, 0, 0]], n_paths=2)


def test_estimator_api():
    est = SLAPathSelector(random_state=0)
    assert clone(est).get_params() == est.get_params()
    est.fit(np.array([[1, 0, 0, 0]] * 5))
    assert est.phase_ is Phase.STEERING and est.learned_path_ == 1
    assert list(est.predict(np.zeros((4, 1)))) == [1, 1, 1, 1]
    assert est.predict_proba().sum() == pytest.approx(1)
    assert est.predict_proba(np.zeros((3, 1))).shape == (3, 2)
    assert est.convergence_updates_ == [3]
    est.partial_fit([rep(0, domain=9)])
    assert est.n_rejected_ == 1


def test_estimator_deterministic_and_config_round_trip():
    X = np.array([[k % 2, 0, k % 5, 10 * k] for k in range(30)])
    a = SLAPathSelector(random_state=3, alpha=0.2).fit(X)
    b = SLAPathSelector(random_state=3, alpha=0.2).fit(X)
    assert a.probabilities() == b.probabilities()
    cfg = a.to_config()
    assert SLAPathSelector.from_config(cfg).to_config() == cfg


def test_constrained_estimator_converges_to_same_path():
    X = np.array([[1, 0, 0, 0]] * 6)
    ex = SLAPathSelector(random_state=0).fit(X)
    co = SLAPathSelector(random_state=0, backend="constrained").fit(X)
    assert ex.learned_path_ == co.learned_path_ == 1
    assert isinstance(co.backend_, ConstrainedBackend)
