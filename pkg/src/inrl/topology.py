"""Network graph, domains and candidate path segments."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping


class Role(str, Enum):
    HOST = "host"
    SWITCH = "switch"


@dataclass(frozen=True)
class Node:
    id: int
    role: Role
    name: str = ""

    @property
    def label(self) -> str:
        return self.name or str(self.id)


@dataclass(frozen=True)
class LinkParams:
    capacity_pps: float = 10_000.0
    prop_delay_us: int = 100
    queue_capacity: int = 64


@dataclass(frozen=True)
class Link:
    """Directed link; a bidirectional cable is two of these."""

    src: int
    dst: int
    capacity_pps: float = 10_000.0
    prop_delay_us: int = 100
    queue_capacity: int = 64


@dataclass(frozen=True)
class Topology:
    nodes: tuple[Node, ...]
    links: tuple[Link, ...]
    source_hosts: frozenset[int] = frozenset()
    dest_hosts: frozenset[int] = frozenset()
    _by_id: dict = field(init=False, repr=False, compare=False)
    _by_name: dict = field(init=False, repr=False, compare=False)
    _links: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_by_id", {n.id: n for n in self.nodes})
        object.__setattr__(self, "_by_name", {n.name: n for n in self.nodes if n.name})
        object.__setattr__(self, "_links", {(l.src, l.dst): l for l in self.links})

    @property
    def hosts(self) -> frozenset[int]:
        return frozenset(n.id for n in self.nodes if n.role is Role.HOST)

    @property
    def switches(self) -> frozenset[int]:
        return frozenset(n.id for n in self.nodes if n.role is Role.SWITCH)

    def node(self, node_id: int) -> Node:
        return self._by_id[node_id]

    def has_node(self, node_id: int) -> bool:
        return node_id in self._by_id

    def id_of(self, name: str) -> int:
        return self._by_name[name].id

    def link(self, src: int, dst: int) -> Link:
        return self._links[(src, dst)]

    def has_link(self, src: int, dst: int) -> bool:
        return (src, dst) in self._links

    def neighbors(self, node_id: int) -> list[int]:
        return sorted(dst for (src, dst) in self._links if src == node_id)

    def next_hops(self) -> dict[int, dict[int, int]]:
        """Static shortest-hop routes as ``table[node][dst] -> next node``.

        Ties go to the lowest node id so the table is deterministic.
        """
        adj = {n.id: self.neighbors(n.id) for n in self.nodes}
        rev: dict[int, list[int]] = {n: [] for n in adj}
        for u, vs in adj.items():
            for v in vs:
                rev[v].append(u)
        table: dict[int, dict[int, int]] = {n.id: {} for n in self.nodes}
        for dst in adj:
            # BFS on the reversed graph from dst.
            dist = {dst: 0}
            frontier = deque([dst])
            while frontier:
                v = frontier.popleft()
                for u in sorted(rev[v]):
                    if u not in dist:
                        dist[u] = dist[v] + 1
                        frontier.append(u)
            for u in adj:
                if u == dst or u not in dist:
                    continue
                best = [v for v in adj[u] if dist.get(v) == dist[u] - 1]
                table[u][dst] = min(best)
        return table


@dataclass(frozen=True)
class PathSegment:
    """Candidate route through a domain.

    ``index`` is the 1-based segment number (p_1, p_2, ...); packet headers and
    reports carry the 0-based ``index - 1``.
    """

    nodes: tuple[int, ...]
    index: int

    @property
    def position(self) -> int:
        return self.index - 1


@dataclass(frozen=True)
class Domain:
    id: int
    decision_node: int
    endpoint_node: int
    collector_node: int
    segments: tuple[PathSegment, ...]

    @property
    def n_paths(self) -> int:
        return len(self.segments)

    @property
    def node_set(self) -> frozenset[int]:
        return frozenset(n for s in self.segments for n in s.nodes)

    def segment(self, path_index: int) -> PathSegment:
        """Segment by 0-based path index."""
        return self.segments[path_index]


@dataclass
class ValidationResult:
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_topology(topology: Topology, domains: Iterable[Domain]) -> ValidationResult:
    """Check every structural invariant; collect all violations, do not stop at the first."""
    v: list[str] = []
    seen: dict[int, Role] = {}
    for n in topology.nodes:
        if not 0 <= n.id < 2**32:
            v.append(f"node id {n.id} out of 32-bit range")
        if n.id in seen:
            if seen[n.id] is not n.role:
                v.append(f"node {n.id} is both host and switch")
            else:
                v.append(f"duplicate node id {n.id}")
        seen[n.id] = n.role

    pairs = set()
    for l in topology.links:
        tag = f"link {l.src}->{l.dst}"
        for end in (l.src, l.dst):
            if end not in seen:
                v.append(f"{tag}: endpoint {end} not in nodes")
        if (l.src, l.dst) in pairs:
            v.append(f"{tag}: duplicate link")
        pairs.add((l.src, l.dst))
        if not l.capacity_pps > 0:
            v.append(f"{tag}: capacity must be > 0")
        if l.queue_capacity < 1:
            v.append(f"{tag}: queue capacity must be >= 1")
        if l.prop_delay_us < 0:
            v.append(f"{tag}: propagation delay must be >= 0")

    hosts = {i for i, r in seen.items() if r is Role.HOST}
    for name, group in (("source", topology.source_hosts), ("destination", topology.dest_hosts)):
        for h in sorted(group):
            if h not in hosts:
                v.append(f"{name} host {h} is not a host node")

    domain_ids = set()
    for d in domains:
        tag = f"domain {d.id}"
        if d.id in domain_ids:
            v.append(f"{tag}: duplicate domain id")
        domain_ids.add(d.id)
        for what, nid in (("decision node", d.decision_node), ("endpoint node", d.endpoint_node),
                          ("collector node", d.collector_node)):
            if seen.get(nid) is not Role.SWITCH:
                v.append(f"{tag}: {what} {nid} is not a switch")
        if not topology.has_link(d.endpoint_node, d.collector_node):
            v.append(f"{tag}: collector {d.collector_node} not adjacent to endpoint {d.endpoint_node}")
        if len(d.segments) < 2:
            v.append(f"{tag}: I_k < 2 (got {len(d.segments)} segment(s))")
        indices = [s.index for s in d.segments]
        if indices != list(range(1, len(d.segments) + 1)):
            v.append(f"{tag}: segment indices {indices} are not 1..{len(d.segments)} in order")
        for s in d.segments:
            stag = f"{tag} segment {s.index}"
            if len(s.nodes) < 2:
                v.append(f"{stag}: fewer than two nodes")
                continue
            if s.nodes[0] != d.decision_node:
                v.append(f"{stag}: segment start mismatch ({s.nodes[0]} != {d.decision_node})")
            if s.nodes[-1] != d.endpoint_node:
                v.append(f"{stag}: segment endpoint mismatch ({s.nodes[-1]} != {d.endpoint_node})")
            for a, b in zip(s.nodes, s.nodes[1:]):
                if not topology.has_link(a, b):
                    v.append(f"{stag}: missing link {a}->{b}")
            for n in s.nodes[1:-1]:
                if seen.get(n) is not Role.SWITCH:
                    v.append(f"{stag}: interior node {n} is not a switch")
            if len(set(s.nodes)) != len(s.nodes):
                v.append(f"{stag}: repeated node")
    return ValidationResult(v)


POC_NAMES = {"S1": 1, "S2": 2, "S3": 3, "S4": 4, "S5": 5, "h_s": 101, "h_d": 102}

POC_CABLES = [
    ("h_s", "S1"), ("S1", "S2"), ("S2", "S3"), ("S1", "S4"),
    ("S4", "S3"), ("S3", "h_d"), ("S3", "S5"), ("S5", "S1"),
]


def bidirectional(cables: Iterable[tuple[int, int]], params: LinkParams,
                  overrides: Mapping[tuple[int, int], LinkParams] | None = None) -> list[Link]:
    overrides = overrides or {}
    links = []
    for a, b in cables:
        for src, dst in ((a, b), (b, a)):
            p = overrides.get((src, dst), params)
            links.append(Link(src, dst, p.capacity_pps, p.prop_delay_us, p.queue_capacity))
    return links


def build_poc_topology(params: LinkParams | None = None,
                       overrides: Mapping[tuple[str, str], LinkParams] | None = None
                       ) -> tuple[Topology, list[Domain]]:
    """Five switches and two hosts: S1 decides, S3 is the sink, S5 collects.

    S5 also links back to S1 so control packets have an in-band route.
    """
    params = params or LinkParams()
    ids = POC_NAMES
    nodes = tuple(
        Node(i, Role.HOST if name.startswith("h") else Role.SWITCH, name)
        for name, i in ids.items()
    )
    ov = {(ids[a], ids[b]): p for (a, b), p in (overrides or {}).items()}
    links = bidirectional([(ids[a], ids[b]) for a, b in POC_CABLES], params, ov)
    topo = Topology(nodes, tuple(links), frozenset({ids["h_s"]}), frozenset({ids["h_d"]}))
    domain = Domain(
        id=1,
        decision_node=ids["S1"],
        endpoint_node=ids["S3"],
        collector_node=ids["S5"],
        segments=(
            PathSegment((ids["S1"], ids["S2"], ids["S3"]), 1),
            PathSegment((ids["S1"], ids["S4"], ids["S3"]), 2),
        ),
    )
    return topo, [domain]
