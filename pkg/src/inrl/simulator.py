"""Deterministic discrete-event packet simulator with the telemetry/agent loop wired in.

Times are integer microseconds. Events are ordered by (time, insertion
sequence), so identical inputs and seed always replay identically.
"""

from __future__ import annotations

import bisect
import heapq
import itertools
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

from .agent import AgentConfig, Phase, ReportRejected, SLAPathSelector
from .telemetry import (
    HEADER_BYTES,
    RECORD_BYTES,
    Packet,
    PacketKind,
    TelemetryCounters,
    aggregate,
    append_hop,
    embed_header,
    extract_and_clone,
)
from .topology import Domain, Link, Topology, validate_topology
from .traffic import Source, TrafficSpec, interval_us, traffic_source

ARRIVAL, FREE, TICK, SCENARIO, SAMPLE = range(5)
SCENARIO_KINDS = ("capacity", "background_start", "background_stop")


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioEvent:
    """Mid-run change: a link capacity multiplier, or background load on a path.

    Background load targets ``link`` if given, else the last link of segment
    ``path`` (0-based), and is consumed at that link's far end. Poisson
    arrivals by default: constant-rate background phase-locks with a
    constant-rate flow and can starve it deterministically.
    """

    time_us: int
    kind: str
    link: tuple[str, str] | None = None
    path: int | None = None
    multiplier: float = 1.0
    rate_pps: float = 0.0
    mode: str = "poisson"

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise SimulationError(f"unknown scenario event kind {self.kind!r}")
        if self.time_us < 0:
            raise SimulationError("scenario event time must be >= 0")
        if self.kind == "capacity" and (self.link is None or not self.multiplier > 0):
            raise SimulationError("capacity events need a link and a positive multiplier")
        if self.kind != "capacity" and self.link is None and self.path is None:
            raise SimulationError("background events need a link or a path")
        if self.kind == "background_start" and not self.rate_pps > 0:
            raise SimulationError("background_start needs rate_pps > 0")
        if self.mode not in ("cbr", "poisson"):
            raise SimulationError(f"background mode must be cbr or poisson, got {self.mode!r}")


@dataclass
class FlowStats:
    injected: int = 0
    delivered: int = 0
    dropped: int = 0
    delivered_bytes: int = 0
    first_sent_us: int | None = None
    last_delivered_us: int | None = None

    @property
    def in_flight(self) -> int:
        return self.injected - self.delivered - self.dropped


class Port:
    """Egress FIFO of one directed link."""

    __slots__ = ("link", "queue", "busy", "service_us", "multiplier", "drops")

    def __init__(self, link: Link):
        self.link = link
        self.queue: deque[Packet] = deque()
        self.busy = False
        self.multiplier = 1.0
        self.service_us = interval_us(link.capacity_pps)
        self.drops = 0

    @property
    def src(self) -> int:
        return self.link.src


def measure_dequeue(port: Port, packet: Packet, now: int) -> tuple[int, int]:
    """Queue occupancy (including ``packet``) and wait time of the head-of-line packet."""
    return len(port.queue), now - packet.enqueue_times[port.link.src]


@dataclass
class SimulationTrace:
    seed: object
    horizon_us: int
    n_paths: int
    agent_enabled: bool
    timeseries: list[tuple] = field(default_factory=list)
    agent_rows: list[tuple] = field(default_factory=list)
    deliveries: list[tuple] = field(default_factory=list)
    hop_log: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)
    flows: dict[str, FlowStats] = field(default_factory=dict)
    port_drops: dict[tuple[int, int], int] = field(default_factory=dict)
    convergence_events: list[tuple[int, int, int]] = field(default_factory=list)
    reexplore_events: list[int] = field(default_factory=list)
    register_log: list[tuple[int, int]] = field(default_factory=list)
    control_log: list[tuple[int, int, int]] = field(default_factory=list)  # sent, delivered, path
    data_sent_log: list[int] = field(default_factory=list)
    counters: dict[str, int] = field(default_factory=dict)
    first_data_us: int | None = None
    final_phase: str | None = None
    final_learned_path: int | None = None
    end_us: int = 0
    max_event_time_us: int = 0

    @property
    def main(self) -> FlowStats:
        return self.flows.get("main", FlowStats())

    def convergence_time_us(self) -> int | None:
        if not self.convergence_events or self.first_data_us is None:
            return None
        return self.convergence_events[0][0] - self.first_data_us

    def goodput_pps(self) -> float:
        start = self.first_data_us
        if start is None or self.end_us <= start:
            return 0.0
        return self.main.delivered * 1e6 / (self.end_us - start)

    def goodput_mbps(self) -> float:
        start = self.first_data_us
        if start is None or self.end_us <= start:
            return 0.0
        return self.main.delivered_bytes * 8 / (self.end_us - start)

    def path_switches(self) -> int:
        return len(self.register_log)

    def data_sent_between(self, t0: int, t1: int) -> int:
        return bisect.bisect_left(self.data_sent_log, t1) - bisect.bisect_left(self.data_sent_log, t0)

    def summary(self) -> dict:
        ct = self.convergence_time_us()
        m = self.main
        return {
            "horizon_us": self.horizon_us,
            "end_us": self.end_us,
            "agent_enabled": int(self.agent_enabled),
            "data_injected": m.injected,
            "data_delivered": m.delivered,
            "data_dropped": m.dropped,
            "data_in_flight": m.in_flight,
            "goodput_pps": self.goodput_pps(),
            "goodput_mbps": self.goodput_mbps(),
            "total_drops": sum(self.port_drops.values()),
            "convergence_time_us": "" if ct is None else ct,
            "convergence_updates": "" if not self.convergence_events else self.convergence_events[0][2],
            "convergences": len(self.convergence_events),
            "reexplorations": len(self.reexplore_events),
            "path_switches": self.path_switches(),
            "reports": self.counters.get("reports_delivered", 0),
            "telemetry_overflow": self.counters.get("telemetry_overflow", 0),
        }


class Simulation:
    def __init__(self, topology: Topology, domains: Sequence[Domain],
                 agent_configs: Sequence[AgentConfig | None], traffic: Sequence[TrafficSpec],
                 scenario_events: Sequence[ScenarioEvent] = (), seed=0, horizon_us: int = 1_000_000,
                 *, static_path: int = 0, sample_interval_us: int | None = 1000,
                 stop_on_convergence: bool = False, record_hops: bool = False,
                 record_reports: bool = False, record_deliveries: bool = False):
        if horizon_us <= 0:
            raise SimulationError("horizon must be > 0")
        check = validate_topology(topology, domains)
        if not check.ok:
            raise SimulationError("invalid topology: " + "; ".join(check.violations))
        if len(domains) != 1:
            raise SimulationError(f"exactly one domain is supported, got {len(domains)}")
        if len(agent_configs) != len(domains):
            raise SimulationError("one agent config (or None) per domain is required")
        self.topology = topology
        self.domain = domains[0]
        self.config = agent_configs[0]
        self.horizon = int(horizon_us)
        self.seed = seed
        self.static_path = static_path
        self.sample_interval = sample_interval_us
        self.stop_on_convergence = stop_on_convergence
        self.record_hops = record_hops
        self.record_reports = record_reports
        self.record_deliveries = record_deliveries
        if not 0 <= static_path < self.domain.n_paths:
            raise SimulationError(f"static_path {static_path} out of range")

        self.routes = topology.next_hops()
        self.ports = {(l.src, l.dst): Port(l) for l in topology.links}
        d = self.domain
        self.seg_next = [
            {s.nodes[k]: s.nodes[k + 1] for k in range(len(s.nodes) - 1)} for s in d.segments
        ]
        # Every segment node after the decision node records its egress hop.
        self.recorders = [frozenset(s.nodes[1:]) for s in d.segments]

        self.agent = None
        if self.config is not None:
            self.agent = SLAPathSelector.from_config(
                self.config, n_paths=d.n_paths, domain_id=d.id, random_state=self._subseed("agent"))
            self.agent._init()
        self.current_path = static_path
        self.data_count = 0
        self.int_seq = 0
        self.probe_rr = 0
        self.last_sent_path: int | None = None

        self.sources: list[tuple[Source, int, int]] = []
        names = {n.name: n.id for n in topology.nodes if n.name}
        for spec in traffic:
            try:
                src, dst = names[spec.src], names[spec.dst]
            except KeyError as e:
                raise SimulationError(f"traffic names unknown node {e.args[0]!r}") from None
            if src not in topology.source_hosts or dst not in topology.dest_hosts:
                raise SimulationError(f"flow {spec.name!r} must go from a source host to a destination host")
            self.sources.append((traffic_source(spec, self._subseed(spec.name)), src, dst))
        self.names = names
        self.scenario = sorted(scenario_events, key=lambda e: e.time_us)
        self.background: dict[tuple[int, int], Source] = {}

        self.heap: list = []
        self.seq = itertools.count()
        self.ids = itertools.count(1)
        self.counters = TelemetryCounters()
        self.latest_q = [0] * d.n_paths
        self.latest_d = [0] * d.n_paths
        self.trace = SimulationTrace(seed, self.horizon, d.n_paths, self.agent is not None)
        self._stop = False

    def _subseed(self, tag: str) -> int:
        return random.Random(f"{self.seed}:{tag}").getrandbits(32)

    def _push(self, t: int, kind: int, a=None, b=None):
        heapq.heappush(self.heap, (t, next(self.seq), kind, a, b))

    def _flow(self, name: str) -> FlowStats:
        f = self.trace.flows.get(name)
        if f is None:
            f = self.trace.flows[name] = FlowStats()
        return f

    def _bump(self, key: str, n: int = 1):
        c = self.trace.counters
        c[key] = c.get(key, 0) + n

    # -- packet movement -------------------------------------------------

    def enqueue(self, port: Port, pkt: Packet, now: int) -> bool:
        if len(port.queue) >= port.link.queue_capacity:
            port.drops += 1
            self._drop(pkt, now)
            return False
        pkt.enqueue_times[port.link.src] = now
        port.queue.append(pkt)
        if not port.busy:
            self._serve(port, now)
        return True

    def _drop(self, pkt: Packet, now: int):
        kind = pkt.kind
        if kind is PacketKind.DATA:
            self._flow(pkt.flow).dropped += 1
            for source, _src, _dst in self.sources:
                if source.spec.name == pkt.flow:
                    source.on_drop(now)
        elif kind is PacketKind.CONTROL:
            self.last_sent_path = None
            self._bump("control_dropped")
        else:
            self._bump(f"{kind.value}_dropped")

    def _serve(self, port: Port, now: int):
        port.busy = True
        q = port.queue
        while q:
            pkt = q[0]
            qlen, delay = measure_dequeue(port, pkt, now)
            q.popleft()
            if pkt.int_header is not None and self._egress_int(port, pkt, qlen, delay, now):
                continue
            self._push(now + port.service_us, FREE, port)
            self._push(now + port.service_us + port.link.prop_delay_us, ARRIVAL, port.link.dst, pkt)
            return
        port.busy = False

    def _egress_int(self, port: Port, pkt: Packet, qlen: int, delay: int, now: int) -> bool:
        """Hop recording and sink processing at dequeue; True if the packet is consumed."""
        node = port.link.src
        h = pkt.int_header
        if node in self.recorders[h.path_index]:
            n_before = h.hop_count
            append_hop(h, node, qlen, delay, self.counters)
            if self.record_hops and h.hop_count > n_before:
                self.trace.hop_log[(h.packet_seq, h.is_probe, node)] = (qlen, delay)
        if node != self.domain.endpoint_node:
            return False
        _, report = extract_and_clone(pkt, now, self.domain.id, self.counters)
        rp = Packet(next(self.ids), PacketKind.REPORT, "report", node, self.domain.collector_node,
                    HEADER_BYTES + RECORD_BYTES * len(report.records), now)
        rp.report = report
        self._bump("reports_sent")
        self.forward(node, rp, now)
        if pkt.kind is PacketKind.PROBE:
            self._bump("probes_reported")
            return True
        return False

    def forward(self, node: int, pkt: Packet, now: int) -> list[tuple[int, Packet]]:
        """Route ``pkt`` out of ``node``; returns the (next node, packet) pairs enqueued."""
        if pkt.path_index is not None:
            nxt = self.seg_next[pkt.path_index].get(node)
        else:
            nxt = None
        if nxt is None:
            nxt = self.routes[node].get(pkt.dst)
        port = self.ports.get((node, nxt)) if nxt is not None else None
        if port is None:
            self._bump("misrouted")
            self._drop(pkt, now)
            return []
        return [(nxt, pkt)] if self.enqueue(port, pkt, now) else []

    def _arrive(self, node: int, pkt: Packet, now: int):
        d = self.domain
        kind = pkt.kind
        if node == pkt.dst:
            self._deliver(node, pkt, now)
            return
        if node == d.decision_node and kind is PacketKind.DATA and pkt.path_index is None \
                and pkt.src in self.topology.source_hosts:
            self._ingress_decision(pkt, now)
            return
        self.forward(node, pkt, now)

    def _ingress_decision(self, pkt: Packet, now: int):
        d = self.domain
        path = self.current_path
        pkt.path_index = path
        if self.agent is None:
            self.forward(d.decision_node, pkt, now)
            return
        embed_header(pkt, path, False, self._next_int_seq())
        self.data_count += 1
        probe = None
        if self.data_count % self.config.probe_interval == 0:
            alts = [i for i in range(d.n_paths) if i != path]
            alt = alts[self.probe_rr % len(alts)]
            self.probe_rr += 1
            probe = Packet(next(self.ids), PacketKind.PROBE, "probe", pkt.src, pkt.dst,
                           pkt.payload_size, now)
            probe.path_index = alt
            embed_header(probe, alt, True, self._next_int_seq())
            self._bump("probes_sent")
        self.forward(d.decision_node, pkt, now)
        if probe is not None:
            self.forward(d.decision_node, probe, now)

    def _next_int_seq(self) -> int:
        s = self.int_seq
        self.int_seq = (s + 1) % 2**32
        return s

    def _deliver(self, node: int, pkt: Packet, now: int):
        kind = pkt.kind
        if kind is PacketKind.DATA:
            f = self._flow(pkt.flow)
            f.delivered += 1
            f.delivered_bytes += pkt.payload_size
            f.last_delivered_us = now
            if self.record_deliveries:
                self.trace.deliveries.append((pkt.flow, pkt.id, pkt.created_at, now, pkt.path_index))
            for source, _src, _dst in self.sources:
                if source.spec.name == pkt.flow:
                    source.on_delivered(now)
        elif kind is PacketKind.REPORT:
            self._bump("reports_delivered")
            self._collect(pkt.report, now)
        elif kind is PacketKind.CONTROL:
            self._bump("control_delivered")
            new = pkt.directive.path_index
            self.trace.control_log.append((pkt.created_at, now, new))
            if new != self.current_path:
                self.current_path = new
                self.trace.register_log.append((now, new))
        else:
            self._bump(f"{kind.value}_delivered")

    def _collect(self, report, now: int):
        agent = self.agent
        if agent is None:
            return
        m = aggregate(report, self.config.aggregation)
        self.latest_q[report.path_index] = m.queue
        self.latest_d[report.path_index] = m.delay
        if self.record_reports:
            self.trace.reports.append(report)
        before = agent.state_.phase
        try:
            directive = agent.step(report)
        except ReportRejected:
            self._bump("reports_rejected")
            return
        st = agent.state_
        if before is Phase.LEARNING and st.phase is Phase.STEERING:
            self.trace.convergence_events.append((now, st.learned_path, st.n_updates))
            if self.stop_on_convergence:
                self._stop = True
        elif before is Phase.STEERING and st.phase is Phase.LEARNING:
            self.trace.reexplore_events.append(now)
        self.trace.agent_rows.append(
            (now, report.path_index, int(report.is_probe), st.phase.value,
             *agent.probabilities(), *agent.ema_values(),
             "" if directive is None else directive.path_index))
        if directive is not None and directive.path_index != self.last_sent_path:
            self._send_control(directive, now)

    def _send_control(self, directive, now: int):
        d = self.domain
        cp = Packet(next(self.ids), PacketKind.CONTROL, "control", d.collector_node,
                    d.decision_node, 6, now)
        cp.directive = directive
        self.last_sent_path = directive.path_index
        self._bump("control_sent")
        self.forward(d.collector_node, cp, now)

    # -- sources and scenario ------------------------------------------------

    def _tick(self, entry, now: int):
        source, src, dst = entry
        spec = source.spec
        if src is None:
            pkt = Packet(next(self.ids), PacketKind.DATA, spec.name, dst[0], dst[1],
                         spec.payload_bytes, now)
            self._flow(spec.name).injected += 1
            self.enqueue(self.ports[dst], pkt, now)
        else:
            pkt = Packet(next(self.ids), PacketKind.DATA, spec.name, src, dst, spec.payload_bytes, now)
            f = self._flow(spec.name)
            f.injected += 1
            if f.first_sent_us is None:
                f.first_sent_us = now
            if spec.name == "main":
                if self.trace.first_data_us is None:
                    self.trace.first_data_us = now
                self.trace.data_sent_log.append(now)
            self.forward(src, pkt, now)
        if source.stopped:
            return
        nxt = source.next_tick(now)
        if nxt is not None:
            self._push(nxt, TICK, entry)

    def _scenario_link(self, ev: ScenarioEvent) -> tuple[int, int]:
        if ev.link is not None:
            key = (self.names.get(ev.link[0]), self.names.get(ev.link[1]))
        else:
            if not 0 <= ev.path < self.domain.n_paths:
                raise SimulationError(f"scenario path {ev.path} out of range")
            nodes = self.domain.segments[ev.path].nodes
            key = (nodes[-2], nodes[-1])
        if key not in self.ports:
            raise SimulationError(f"scenario link {ev.link or ev.path} does not exist")
        return key

    def _scenario(self, ev: ScenarioEvent, now: int):
        key = self._scenario_link(ev)
        port = self.ports[key]
        if ev.kind == "capacity":
            port.multiplier = ev.multiplier
            port.service_us = interval_us(port.link.capacity_pps * ev.multiplier)
        elif ev.kind == "background_start":
            old = self.background.pop(key, None)
            if old is not None:
                old.stopped = True
            spec = TrafficSpec(mode=ev.mode, rate_pps=ev.rate_pps, start_us=now,
                               name=f"background:{key[0]}-{key[1]}")
            src = traffic_source(spec, self._subseed(spec.name))
            self.background[key] = src
            self._push(now, TICK, (src, None, key))
        else:
            old = self.background.pop(key, None)
            if old is not None:
                old.stopped = True

    def _sample(self, now: int):
        self.trace.timeseries.append(
            (now, *self.latest_q, *self.latest_d, self.current_path))
        nxt = now + self.sample_interval
        if nxt < self.horizon:
            self._push(nxt, SAMPLE)

    # -- main loop -------------------------------------------------------

    def run(self) -> SimulationTrace:
        for entry in self.sources:
            t = entry[0].first_tick()
            if t is not None:
                self._push(t, TICK, entry)
        for ev in self.scenario:
            self._scenario_link(ev)
            if ev.time_us < self.horizon:
                self._push(ev.time_us, SCENARIO, ev)
        if self.sample_interval:
            self._push(0, SAMPLE)

        heap = self.heap
        pop = heapq.heappop
        last = 0
        while heap and not self._stop:
            t, _, kind, a, b = heap[0]
            if t >= self.horizon:
                break
            pop(heap)
            if t < last:
                raise SimulationError("causality violated")
            last = t
            if kind == ARRIVAL:
                self._arrive(a, b, t)
            elif kind == FREE:
                a.busy = False
                if a.queue:
                    self._serve(a, t)
            elif kind == TICK:
                if not a[0].stopped:
                    self._tick(a, t)
            elif kind == SCENARIO:
                self._scenario(a, t)
            elif kind == SAMPLE:
                self._sample(t)
        tr = self.trace
        tr.end_us = last if self._stop else self.horizon
        tr.max_event_time_us = last
        tr.port_drops = {k: p.drops for k, p in self.ports.items() if p.drops}
        tr.counters["telemetry_overflow"] = self.counters.overflow
        tr.counters["telemetry_passthrough"] = self.counters.passthrough
        if self.agent is not None:
            tr.final_phase = self.agent.state_.phase.value
            tr.final_learned_path = self.agent.state_.learned_path
        return tr


def run(topology: Topology, domains: Sequence[Domain], agent_configs, traffic, scenario_events=(),
        seed=0, horizon_us: int = 1_000_000, **options) -> SimulationTrace:
    return Simulation(topology, domains, agent_configs, traffic, scenario_events, seed,
                      horizon_us, **options).run()
