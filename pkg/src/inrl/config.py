"""YAML scenario and experiment files.

Scenario schema (all keys optional except ``traffic``)::

    name: str
    horizon_us: int                  # default 1_000_000
    sample_interval_us: int          # timeseries sampling period, default 1000
    static_path: int                 # 0-based path used when the agent is disabled
    topology:
      preset: poc                    # or give nodes/links/source_hosts/dest_hosts
      link_defaults: {capacity_pps, prop_delay_us, queue_capacity}
      nodes: [{id, name, role: host|switch}]
      links: [{src, dst, bidirectional, capacity_pps, prop_delay_us, queue_capacity}]
      source_hosts: [name]
      dest_hosts: [name]
    domains: [{id, decision, endpoint, collector, segments: [[name, ...], ...]}]
    agent:
      enabled: bool
      alpha, p_conv, probe_interval, ema_gamma, theta_low, delta_improve, window,
      backend, bucket_count, aggregation
      reward: {beta1, beta2, tau_q, tau_d, c_q, c_d}
    traffic: [{name, src, dst, mode, rate_pps, payload_bytes, start_us, stop_us, ...}]
    scenario: [{time_us, kind, link: [a, b] | path: int, multiplier, rate_pps}]

Node references in links, domains and traffic are names.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .agent import AgentConfig, RewardParams
from .simulator import ScenarioEvent, SimulationError
from .topology import (
    Domain,
    Link,
    LinkParams,
    Node,
    PathSegment,
    Role,
    Topology,
    bidirectional,
    build_poc_topology,
)
from .traffic import TrafficSpec

PACKAGE_SCENARIOS = Path(__file__).parent / "scenarios"


class ConfigError(ValueError):
    pass


@dataclass
class Scenario:
    name: str
    topology: Topology
    domains: list[Domain]
    agent: AgentConfig | None
    traffic: list[TrafficSpec]
    events: list[ScenarioEvent] = field(default_factory=list)
    horizon_us: int = 1_000_000
    sample_interval_us: int = 1000
    static_path: int = 0
    source: Path | None = None

    def with_agent(self, **changes) -> "Scenario":
        if self.agent is None:
            raise ConfigError("scenario has no agent")
        return dataclasses.replace(self, agent=dataclasses.replace(self.agent, **changes))


def _read_yaml(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _only(d: dict, allowed, where: str):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {extra}")


def _dc_kwargs(cls, d: dict, where: str, skip=()) -> dict:
    names = {f.name for f in dataclasses.fields(cls)} - set(skip)
    _only(d, names | set(skip), where)
    return {k: v for k, v in d.items() if k in names}


def _link_params(d: dict | None, base: LinkParams = LinkParams()) -> LinkParams:
    d = d or {}
    _only(d, ("capacity_pps", "prop_delay_us", "queue_capacity"), "link parameters")
    return dataclasses.replace(base, **d)


def _topology(d: dict | None) -> tuple[Topology, list[Domain] | None]:
    d = d or {"preset": "poc"}
    _only(d, ("preset", "link_defaults", "nodes", "links", "source_hosts", "dest_hosts"), "topology")
    defaults = _link_params(d.get("link_defaults"))
    if d.get("preset") == "poc":
        return build_poc_topology(defaults)
    if "preset" in d:
        raise ConfigError(f"unknown topology preset {d['preset']!r}")
    try:
        nodes = tuple(Node(int(n["id"]), Role(n.get("role", "switch")), n.get("name", ""))
                      for n in d["nodes"])
    except (KeyError, ValueError, TypeError) as e:
        raise ConfigError(f"topology.nodes: {e}") from None
    names = {n.name: n.id for n in nodes if n.name}

    def ref(x):
        if isinstance(x, int):
            return x
        if x not in names:
            raise ConfigError(f"unknown node {x!r}")
        return names[x]

    links = []
    for ld in d.get("links", []):
        _only(ld, ("src", "dst", "bidirectional", "capacity_pps", "prop_delay_us", "queue_capacity"),
              "topology.links[]")
        params = _link_params({k: v for k, v in ld.items() if k not in ("src", "dst", "bidirectional")},
                              defaults)
        pair = [(ref(ld["src"]), ref(ld["dst"]))]
        if ld.get("bidirectional", True):
            links += bidirectional(pair, params)
        else:
            links.append(Link(pair[0][0], pair[0][1], params.capacity_pps, params.prop_delay_us,
                              params.queue_capacity))
    topo = Topology(nodes, tuple(links),
                    frozenset(ref(h) for h in d.get("source_hosts", [])),
                    frozenset(ref(h) for h in d.get("dest_hosts", [])))
    return topo, None


def _domains(items, topo: Topology) -> list[Domain]:
    def ref(x):
        if isinstance(x, int):
            return x
        try:
            return topo.id_of(x)
        except KeyError:
            raise ConfigError(f"unknown node {x!r}") from None

    out = []
    for k, dd in enumerate(items):
        _only(dd, ("id", "decision", "endpoint", "collector", "segments"), "domains[]")
        try:
            segs = tuple(PathSegment(tuple(ref(n) for n in s), i + 1)
                         for i, s in enumerate(dd["segments"]))
            out.append(Domain(int(dd.get("id", k + 1)), ref(dd["decision"]), ref(dd["endpoint"]),
                              ref(dd["collector"]), segs))
        except KeyError as e:
            raise ConfigError(f"domains[{k}]: missing key {e.args[0]!r}") from None
    return out


def _agent(d: dict | None) -> AgentConfig | None:
    d = dict(d or {})
    if not d.pop("enabled", True):
        return None
    reward = d.pop("reward", None) or {}
    try:
        rp = RewardParams(**_dc_kwargs(RewardParams, reward, "agent.reward"))
        return AgentConfig(reward=rp, **_dc_kwargs(AgentConfig, d, "agent", skip=("reward",)))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"agent: {e}") from None


def scenario_from_dict(data: dict, source: Path | None = None) -> Scenario:
    _only(data, ("name", "horizon_us", "sample_interval_us", "static_path", "topology", "domains",
                 "agent", "traffic", "scenario"), "scenario")
    topo, preset_domains = _topology(data.get("topology"))
    if data.get("domains") is not None:
        domains = _domains(data["domains"], topo)
    elif preset_domains is not None:
        domains = preset_domains
    else:
        raise ConfigError("domains are required unless topology.preset is used")
    traffic = []
    for k, td in enumerate(data.get("traffic") or []):
        try:
            traffic.append(TrafficSpec(**_dc_kwargs(TrafficSpec, td, f"traffic[{k}]")))
        except (TypeError, ValueError) as e:
            raise ConfigError(f"traffic[{k}]: {e}") from None
    names = [t.name for t in traffic]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate traffic names {names}")
    events = []
    for k, ed in enumerate(data.get("scenario") or []):
        ed = dict(ed)
        if "link" in ed and ed["link"] is not None:
            ed["link"] = tuple(ed["link"])
        try:
            events.append(ScenarioEvent(**_dc_kwargs(ScenarioEvent, ed, f"scenario[{k}]")))
        except (TypeError, SimulationError) as e:
            raise ConfigError(f"scenario[{k}]: {e}") from None
    horizon = int(data.get("horizon_us", 1_000_000))
    if horizon <= 0:
        raise ConfigError("horizon_us must be > 0")
    for ev in events:
        if ev.time_us > horizon:
            raise ConfigError(f"scenario event at {ev.time_us} us is beyond the horizon {horizon} us")
    return Scenario(
        name=str(data.get("name", source.stem if source else "scenario")),
        topology=topo, domains=domains, agent=_agent(data.get("agent")), traffic=traffic,
        events=events, horizon_us=horizon,
        sample_interval_us=int(data.get("sample_interval_us", 1000)),
        static_path=int(data.get("static_path", 0)), source=source,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    return scenario_from_dict(_read_yaml(path), path)


@dataclass
class ExperimentSpec:
    """Experiment file: which scenario, which seeds, what to sweep, where to write."""

    name: str
    scenario: Path
    seeds: list[int]
    sweep: dict[str, list[float]] = field(default_factory=dict)
    outputs: Path = Path("out")
    sweep_horizon_us: int | None = None
    compare_static_path: int = 0
    backend: str | None = None
    source: Path | None = None

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        for name, values in self.sweep.items():
            if name != "alpha":
                raise ConfigError(f"unsupported sweep parameter {name!r} (only alpha)")
            for v in values:
                if not 0 < v <= 1:
                    raise ConfigError(f"sweep value alpha={v} outside (0, 1]")


def load_experiment(path) -> ExperimentSpec:
    path = Path(path)
    data = _read_yaml(path)
    _only(data, ("name", "scenario", "seeds", "sweep", "outputs", "sweep_horizon_us",
                 "compare_static_path", "backend"), "experiment")
    if "scenario" not in data:
        raise ConfigError(f"{path}: experiment needs a scenario")
    scen = Path(data["scenario"])
    if not scen.is_absolute():
        scen = path.parent / scen
    seeds = data.get("seeds", [0])
    if isinstance(seeds, dict):
        seeds = list(range(int(seeds.get("start", 0)), int(seeds.get("start", 0)) + int(seeds["count"])))
    outputs = Path(data.get("outputs", "out"))
    return ExperimentSpec(
        name=str(data.get("name", path.stem)), scenario=scen, seeds=[int(s) for s in seeds],
        sweep={k: [float(x) for x in v] for k, v in (data.get("sweep") or {}).items()},
        outputs=outputs, sweep_horizon_us=data.get("sweep_horizon_us"),
        compare_static_path=int(data.get("compare_static_path", 0)),
        backend=data.get("backend"), source=path,
    )


def dump_defaults() -> dict[str, Any]:
    """Every agent default, as it would appear under ``agent:`` in a scenario."""
    cfg = dataclasses.asdict(AgentConfig())
    return {"enabled": True, **cfg}
