"""Acceptance criteria, each at its stated tolerance."""

import random
import statistics

import numpy as np
import pytest

from inrl import harness
from inrl.agent import RewardParams, closed_form_probability, compute_reward, sla_update
from inrl.arith import ONE, ConstrainedBackend, ExactBackend, build_sigmoid_table, sigmoid_exact
from inrl.config import PACKAGE_SCENARIOS, load_experiment, load_scenario
from inrl.telemetry import (
    MAX_HOPS, HopRecord, IntHeader, Packet, extract_and_clone, packet_from_wire, packet_to_wire,
    parse_header, serialize_header,
)

SHIFT_US = 500_000
N_ADAPT_SEEDS = 20


# -- shared experiment runs -----------------------------------------------------------

@pytest.fixture(scope="module")
def sweep_runs(tmp_path_factory):
    spec = load_experiment(PACKAGE_SCENARIOS / "shift_experiment.yaml")
    out = {}
    for backend in ("exact", "constrained"):
        d = tmp_path_factory.mktemp(f"sweep-{backend}")
        out[backend] = harness.run_alpha_sweep(spec, d, backend=backend, jobs=4)
    return out


@pytest.fixture(scope="module")
def adaptation_runs():
    scen = load_scenario(PACKAGE_SCENARIOS / "poc_shift.yaml")
    assert scen.agent.alpha == 0.5
    out = {}
    for backend in ("exact", "constrained"):
        rows = []
        for seed in range(N_ADAPT_SEEDS):
            tr = harness.simulate(scen, seed, backend=backend, sample_interval_us=None)
            rows.append((tr, harness.analyze_adaptation(tr, SHIFT_US)))
        out[backend] = rows
    return out


# -- 1 ----------------------------------------------------------------------------

def test_criterion_1_simplex_invariant():
    rng = np.random.default_rng(1)
    n_steps = 10**6
    sel = rng.integers(0, 4, n_steps)
    rew = rng.random(n_steps)
    alp = rng.uniform(0.01, 1.0, n_steps)
    width = rng.integers(2, 5, n_steps // 1000 + 1)

    ex = ExactBackend()
    co = ConstrainedBackend()
    worst_ex = worst_co = 0.0
    p = q = None
    for k in range(n_steps):
        if k % 1000 == 0:
            n = int(width[k // 1000])
            p, q = ex.uniform(n), co.uniform(n)
        i = int(sel[k]) % len(p)
        p = sla_update(p, i, float(rew[k]), float(alp[k]), ex)
        q = sla_update(q, i, co.from_float(float(rew[k])), float(alp[k]), co)
        s = abs(sum(p) - 1.0)
        if s > worst_ex:
            worst_ex = s
        if min(p) < 0 or max(p) > 1:
            pytest.fail(f"exact probability left [0, 1] at step {k}: {p}")
        d = abs(sum(q) - ONE) / ONE
        if d > worst_co:
            worst_co = d
        if min(q) < 0 or max(q) > ONE:
            pytest.fail(f"constrained probability left [0, 1] at step {k}: {q}")
    print(f"max |sum p - 1|: exact {worst_ex:.3g}, constrained {worst_co:.3g}")
    assert worst_ex <= 1e-9
    assert worst_co <= 2 ** -12


# -- 2 ----------------------------------------------------------------------------

@pytest.mark.parametrize("alpha", [0.1, 0.25, 0.5, 0.9])
@pytest.mark.parametrize("reward", [0.25, 0.5, 1.0])
def test_criterion_2_closed_form_oracle(alpha, reward):
    p = [0.5, 0.5]
    for t in range(1, 51):
        p = sla_update(p, 0, reward, alpha)
        assert abs(p[0] - closed_form_probability(t, alpha, reward)) <= 1e-9


# -- 3 ----------------------------------------------------------------------------

def test_criterion_3_reward_anchors_and_table():
    params = RewardParams(beta1=0.5, beta2=0.5)
    from inrl.telemetry import SegmentMetrics
    assert abs(compute_reward(SegmentMetrics(params.tau_q, params.tau_d), params) - 0.5) <= 1e-9
    for tau, c in ((params.tau_q, params.c_q), (params.tau_d, params.c_d)):
        table = build_sigmoid_table(tau, c, 64)
        grid = np.linspace(tau - 12 / c, tau + 12 / c, 1000)
        err = max(abs(table.lookup(m).value - sigmoid_exact(m, tau, c)) for m in grid)
        print(f"tau={tau} c={c}: max table error {err:.5f}")
        assert err <= 0.05


# -- 4 ----------------------------------------------------------------------------

def test_criterion_4_convergence_trend(sweep_runs):
    res = sweep_runs["exact"]
    assert res.alphas == [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
    assert all(len(res.by_alpha(a)) == 10 for a in res.alphas)
    means = [res.mean_ms(a) for a in res.alphas]
    rho, p = res.spearman()
    print("mean convergence ms:", [round(m, 3) for m in means], f"rho={rho:.3f} p={p:.2g}")
    assert not any(np.isnan(means))
    assert res.mean_ms(0.1) > res.mean_ms(0.5)
    assert rho < 0 and p < 0.05
    assert abs(res.mean_ms(0.9) - res.mean_ms(0.5)) / res.mean_ms(0.5) < 0.5


# -- 5 ----------------------------------------------------------------------------

def test_criterion_5_adaptation(adaptation_runs):
    rows = [a for _, a in adaptation_runs["exact"]]
    n = len(rows)
    pre = sum(a.converged_before and a.path_before == 1 for a in rows)
    switched = sum(a.converged_after and a.path_after == 0 and a.packets_to_switch <= 2000
                   for a in rows)
    worst = max(max(a.switches_stable_before, a.switches_stable_after) for a in rows)
    print(f"pre-shift on clean path {pre}/{n}; switched within 2000 packets {switched}/{n}; "
          f"packets to switch {[a.packets_to_switch for a in rows]}; max stable-window switches {worst}")
    assert pre >= 0.95 * n
    assert switched >= 0.90 * n
    assert worst <= 1


# -- 6 ----------------------------------------------------------------------------

def test_criterion_6_telemetry_round_trip():
    rng = random.Random(6)
    for _ in range(10**4):
        recs = [HopRecord(rng.getrandbits(32), rng.getrandbits(32), rng.getrandbits(32))
                for _ in range(rng.randint(0, MAX_HOPS))]
        h = IntHeader(rng.randint(0, 255), rng.random() < 0.5, rng.getrandbits(32), recs)
        assert parse_header(serialize_header(h)) == h

        payload = rng.randbytes(rng.randint(0, 64))
        pkt = Packet(1, payload=payload)
        pkt.int_header = IntHeader(h.path_index, h.is_probe, h.packet_seq, recs or [HopRecord(1, 0, 0)])
        back = packet_from_wire(packet_to_wire(pkt), has_int=True)
        stripped, report = extract_and_clone(back, 0)
        assert stripped.payload == payload and packet_to_wire(stripped) == payload
        assert report.records == pkt.int_header.records

    scen = load_scenario(PACKAGE_SCENARIOS / "poc_shift.yaml")
    tr = harness.simulate(scen, 0, horizon_us=600_000, record_hops=True, record_reports=True,
                          sample_interval_us=None)
    checked = 0
    for r in tr.reports:
        for hop in r.records:
            assert tr.hop_log[(r.packet_seq, r.is_probe, hop.switch_id)] == \
                (hop.queue_length, hop.dequeue_delay)
            checked += 1
    print(f"hop records cross-checked: {checked}")
    assert checked > 1000


# -- 7 ----------------------------------------------------------------------------

def test_criterion_7_overhead_bound(tmp_path):
    spec = load_experiment(PACKAGE_SCENARIOS / "steady_compare.yaml")
    assert len(spec.seeds) >= 6
    res = harness.run_throughput_compare(spec, tmp_path)
    print(f"baseline {res.baseline_mean:.1f} pps, agent {res.sla_mean:.1f} pps, "
          f"delta {res.relative_delta:+.4%}")
    assert res.sla_mean >= 0.95 * res.baseline_mean
    assert (tmp_path / "compare.csv").read_text().splitlines()[-1].startswith("mean,")


# -- 8 ----------------------------------------------------------------------------

def test_criterion_8_determinism(tmp_path):
    exp = load_experiment(PACKAGE_SCENARIOS / "shift_experiment.yaml")
    cmp = load_experiment(PACKAGE_SCENARIOS / "shift_compare.yaml")
    outputs = []
    for k in range(2):
        d = tmp_path / str(k)
        harness.run_timeseries(exp, out_dir=d)
        harness.run_alpha_sweep(exp, d, jobs=2 if k else 1)
        harness.run_throughput_compare(cmp, d)
        outputs.append({p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))})
    assert sorted(outputs[0]) == ["agent.csv", "compare.csv", "summary.csv", "sweep.csv",
                                  "sweep_runs.csv", "timeseries.csv"]
    assert outputs[0] == outputs[1]


# -- 9 ----------------------------------------------------------------------------

def test_criterion_9_backend_decision_invariance(sweep_runs, adaptation_runs):
    ex, co = sweep_runs["exact"].runs, sweep_runs["constrained"].runs
    assert [(r.alpha, r.seed) for r in ex] == [(r.alpha, r.seed) for r in co]
    sweep_diff = [(a.alpha, a.seed) for a, b in zip(ex, co) if a.learned_path != b.learned_path]
    final_ex = [tr.final_learned_path for tr, _ in adaptation_runs["exact"]]
    final_co = [tr.final_learned_path for tr, _ in adaptation_runs["constrained"]]
    print(f"sweep mismatches {sweep_diff}; final paths exact {final_ex} constrained {final_co}")
    assert not sweep_diff
    assert None not in final_ex
    assert final_ex == final_co
    mean_gap = statistics.fmean(abs(sweep_runs["exact"].mean_ms(a) - sweep_runs["constrained"].mean_ms(a))
                                for a in sweep_runs["exact"].alphas)
    print(f"mean |convergence gap| between backends {mean_gap:.3f} ms")
