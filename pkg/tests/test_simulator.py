import pytest

from inrl.agent import AgentConfig
from inrl.simulator import Port, ScenarioEvent, Simulation, SimulationError, measure_dequeue, run
from inrl.telemetry import Packet, PacketKind, embed_header
from inrl.topology import Link, build_poc_topology
from inrl.traffic import TrafficSpec

MAIN = TrafficSpec(rate_pps=5000, start_us=1000)


@pytest.fixture(scope="module")
def poc():
    return build_poc_topology()


def test_measure_dequeue_idle_queue():
    port = Port(Link(1, 2))
    p = Packet(1)
    p.enqueue_times[1] = 100
    port.queue.append(p)
    assert measure_dequeue(port, p, 100) == (1, 0)


def test_second_packet_waits_one_service_time(poc):
    topo, domains = poc
    sim = Simulation(topo, domains, [AgentConfig()], [], (), 0, 10_000, record_hops=True)
    for seq in (0, 1):
        p = Packet(seq + 1, PacketKind.DATA, "main", 101, 102, 1000, 0)
        p.path_index = 0
        embed_header(p, 0, False, seq)
        sim.enqueue(sim.ports[(2, 3)], p, 0)
    sim.run()
    service = round(1e6 / 10_000)
    assert sim.trace.hop_log[(0, False, 2)] == (1, 0)
    assert sim.trace.hop_log[(1, False, 2)] == (1, service)


def test_full_queue_drops_arrival(poc):
    topo, domains = poc
    sim = Simulation(topo, domains, [None], [], (), 0, 1000)
    port = sim.ports[(1, 2)]
    for k in range(70):
        sim.enqueue(port, Packet(k, PacketKind.DATA, "x", 101, 102, 0, 0), 0)
    # one in service plus 64 waiting; then the queue is full
    assert port.drops == 70 - 65 and len(port.queue) == 64
    assert [p.id for p in port.queue][:2] == [1, 2]


def test_zero_traffic(poc):
    topo, domains = poc
    tr = run(topo, domains, [AgentConfig()], [], (), 0, 50_000)
    assert tr.main.injected == 0 and not tr.deliveries
    assert all(row[1:5] == (0, 0, 0, 0) for row in tr.timeseries)
    assert tr.goodput_pps() == 0.0


def test_conservation_and_determinism(poc):
    topo, domains = poc
    ev = [ScenarioEvent(0, "background_start", path=0, rate_pps=15_000)]
    a = run(topo, domains, [AgentConfig()], [MAIN], ev, 3, 200_000)
    b = run(topo, domains, [AgentConfig()], [MAIN], ev, 3, 200_000)
    m = a.main
    assert m.injected == m.delivered + m.dropped + m.in_flight
    assert m.in_flight >= 0
    assert a.timeseries == b.timeseries and a.agent_rows == b.agent_rows
    assert a.summary() == b.summary()
    c = run(topo, domains, [AgentConfig()], [MAIN], ev, 4, 200_000)
    assert c.agent_rows != a.agent_rows


def test_near_capacity_flow_converges(poc):
    topo, domains = poc
    spec = TrafficSpec(rate_pps=9000)
    tr = run(topo, domains, [AgentConfig()], [spec], (), 0, 5_000_000, stop_on_convergence=True)
    assert tr.convergence_events and tr.convergence_time_us() is not None


def test_telemetry_matches_bookkeeping(poc):
    topo, domains = poc
    ev = [ScenarioEvent(0, "background_start", path=0, rate_pps=12_000)]
    tr = run(topo, domains, [AgentConfig()], [MAIN], ev, 1, 300_000,
             record_hops=True, record_reports=True)
    assert len(tr.reports) > 100
    checked = 0
    for r in tr.reports:
        assert [h.switch_id for h in r.records] == list(domains[0].segment(r.path_index).nodes[1:])
        for h in r.records:
            assert tr.hop_log[(r.packet_seq, r.is_probe, h.switch_id)] == (h.queue_length, h.dequeue_delay)
            checked += 1
    assert checked == 2 * len(tr.reports)
    assert any(h.dequeue_delay > 0 for r in tr.reports for h in r.records)


def test_closed_loop_register_semantics(poc):
    topo, domains = poc
    ev = [ScenarioEvent(0, "background_start", path=0, rate_pps=15_000)]
    tr = run(topo, domains, [AgentConfig()], [MAIN], ev, 0, 150_000, record_deliveries=True)
    changes = tr.register_log
    assert changes
    ingress = 200  # host port service plus propagation to S1

    def register_at(t):
        cur = 0
        for tc, p in changes:
            if tc <= t:
                cur = p
        return cur

    checked = 0
    for flow, _id, created, _now, path in tr.deliveries:
        t = created + ingress
        if flow != "main" or any(tc == t for tc, _ in changes):
            continue
        assert path == register_at(t)
        checked += 1
    assert checked > 100


def test_probes_are_consumed_at_sink(poc):
    topo, domains = poc
    tr = run(topo, domains, [AgentConfig(probe_interval=10)], [MAIN], (), 0, 100_000)
    assert tr.counters["probes_sent"] > 0
    assert tr.counters["probes_reported"] + tr.counters.get("probe_dropped", 0) <= tr.counters["probes_sent"]
    assert "probe_delivered" not in tr.counters


def test_capacity_event(poc):
    topo, domains = poc
    ev = [ScenarioEvent(10_000, "capacity", link=("S1", "S2"), multiplier=0.25)]
    tr = run(topo, domains, [None], [TrafficSpec(rate_pps=5000)], ev, 0, 100_000,
             static_path=0)
    assert tr.main.dropped > 0
    assert tr.goodput_pps() < 3500


def test_input_validation(poc):
    topo, domains = poc
    with pytest.raises(SimulationError):
        run(topo, domains, [None], [TrafficSpec(src="nowhere")], (), 0, 1000)
    with pytest.raises(SimulationError):
        run(topo, domains, [None], [TrafficSpec(src="h_d", dst="h_s")], (), 0, 1000)
    with pytest.raises(SimulationError):
        run(topo, domains, [None], [], (), 0, 0)
    with pytest.raises(SimulationError):
        run(topo, domains, [None], [], [ScenarioEvent(0, "capacity", link=("S1", "S3"))], 0, 1000)
    with pytest.raises(SimulationError):
        run(topo, domains, [None], [], (), 0, 1000, static_path=2)
