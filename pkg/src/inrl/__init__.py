"""Learning-automata path selection driven by in-band telemetry, with a packet-level simulator."""

from .agent import AgentConfig, ControlDirective, Phase, RewardParams, SLAPathSelector
from .arith import ConstrainedBackend, ExactBackend, FixedPoint, SigmoidLookup, get_backend
from .config import load_experiment, load_scenario
from .simulator import Simulation, SimulationTrace, run
from .topology import Domain, PathSegment, Topology, build_poc_topology, validate_topology

__version__ = "0.1.0"

__all__ = [
    "AgentConfig", "ControlDirective", "Phase", "RewardParams", "SLAPathSelector",
    "ConstrainedBackend", "ExactBackend", "FixedPoint", "SigmoidLookup", "get_backend",
    "load_experiment", "load_scenario", "Simulation", "SimulationTrace", "run",
    "Domain", "PathSegment", "Topology", "build_poc_topology", "validate_topology",
]
