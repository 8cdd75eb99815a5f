"""Learning-automaton path selector driven by telemetry reports.

The functional core (``initial_state`` / ``on_report``) is wrapped by
:class:`SLAPathSelector`, a scikit-learn style estimator whose ``partial_fit``
consumes reports and whose ``predict_proba`` exposes the path distribution.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_array, check_is_fitted

from .arith import DEFAULT_BUCKETS, ExactBackend, get_backend
from .telemetry import HopRecord, SegmentMetrics, TelemetryReport, aggregate


class ReportRejected(ValueError):
    """Report names an unknown domain or path; agent state is left untouched."""


class Phase(str, Enum):
    LEARNING = "learning"
    STEERING = "optimized_steering"


@dataclass(frozen=True)
class RewardParams:
    beta1: float = 0.5
    beta2: float = 0.5
    tau_q: float = 20.0
    tau_d: float = 500.0
    c_q: float = 0.3
    c_d: float = 0.01

    def __post_init__(self):
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if abs(self.beta1 + self.beta2 - 1.0) > 1e-12:
            raise ValueError(f"beta1 + beta2 must equal 1, got {self.beta1 + self.beta2}")
        if not (self.c_q > 0 and self.c_d > 0):
            raise ValueError("steepness coefficients must be positive")


@dataclass(frozen=True)
class AgentConfig:
    alpha: float = 0.5
    p_conv: float = 0.9
    probe_interval: int = 100
    ema_gamma: float = 0.125
    theta_low: float = 0.4
    delta_improve: float = 0.1
    window: int = 3
    reward: RewardParams = field(default_factory=RewardParams)
    backend: str = "exact"
    bucket_count: int = DEFAULT_BUCKETS
    aggregation: str = "sum"

    def __post_init__(self):
        # alpha = 1 is admitted so the sweep can include its upper end.
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if not 0.0 < self.p_conv < 1.0:
            raise ValueError(f"p_conv must be in (0, 1), got {self.p_conv}")
        if not 0.0 < self.ema_gamma < 1.0:
            raise ValueError(f"ema_gamma must be in (0, 1), got {self.ema_gamma}")
        if self.probe_interval < 1 or self.window < 1:
            raise ValueError("probe_interval and window must be >= 1")
        if self.aggregation not in ("sum", "max"):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")
        get_backend(self.backend, self.bucket_count)


@dataclass(frozen=True)
class ControlDirective:
    """Collector -> decision node control message."""

    domain_id: int
    path_index: int
    probe: bool = False

    _WIRE = struct.Struct(">IBB")

    def to_bytes(self) -> bytes:
        return self._WIRE.pack(self.domain_id, self.path_index, 1 if self.probe else 0)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ControlDirective":
        if len(data) != cls._WIRE.size:
            raise ValueError(f"control directive is {cls._WIRE.size} bytes, got {len(data)}")
        domain_id, path_index, flags = cls._WIRE.unpack(data)
        if flags & ~1:
            raise ValueError(f"unknown directive flag bits {flags:#04x}")
        return cls(domain_id, path_index, bool(flags & 1))


@dataclass
class AgentState:
    phase: Phase
    probs: list
    ema: list
    learned_path: int | None = None
    probes_since_switch: int = 0
    degradation_streak: int = 0
    n_updates: int = 0
    domain_id: int = 1

    def copy(self) -> "AgentState":
        return replace(self, probs=list(self.probs), ema=list(self.ema))


def _backend_for(config: AgentConfig, backend=None):
    return backend if backend is not None else get_backend(config.backend, config.bucket_count)


def compute_reward(metrics: SegmentMetrics, params: RewardParams, backend=None) -> float:
    """Weighted sigmoid scores of segment queue and delay, as a real in [0, 1]."""
    be = backend or ExactBackend()
    return be.to_float(be.reward(metrics.queue, metrics.delay, params))


def sla_update(probs: Sequence, selected: int, reward, alpha: float, backend=None) -> list:
    """One reward-weighted update toward ``selected``.

    Values are native to the backend: floats for exact, raw Q16.16 ints for
    constrained.
    """
    be = backend or ExactBackend()
    if not 0 <= selected < len(probs):
        raise IndexError(f"selected path {selected} out of range for {len(probs)} paths")
    if not 0 <= be.to_float(reward) <= 1:
        raise ValueError(f"reward must be in [0, 1], got {be.to_float(reward)}")
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    return be.update(probs, selected, reward, alpha)


def select_path(probs: Sequence, rng, backend=None) -> int:
    """Draw a path index with probability proportional to ``probs``.

    ``rng`` is anything with a ``random()`` method returning a float in [0, 1).
    """
    be = backend or ExactBackend()
    return be.select(probs, rng.random())


def initial_state(config: AgentConfig, n_paths: int, domain_id: int = 1, backend=None) -> AgentState:
    if n_paths < 2:
        raise ValueError(f"need at least two paths, got {n_paths}")
    if not config.p_conv > 1.0 / n_paths:
        raise ValueError(f"p_conv {config.p_conv} must exceed 1/{n_paths}")
    be = _backend_for(config, backend)
    return AgentState(
        phase=Phase.LEARNING,
        probs=be.uniform(n_paths),
        ema=[be.from_float(0.5)] * n_paths,
        domain_id=domain_id,
    )


def _argmax(values: Sequence) -> int:
    best = 0
    for i, v in enumerate(values):
        if v > values[best]:
            best = i
    return best


def on_report(state: AgentState, config: AgentConfig, report: TelemetryReport, rng,
              backend=None) -> tuple[AgentState, ControlDirective | None]:
    """Process one telemetry report; return the new state and an optional directive."""
    n = len(state.probs)
    if report.domain_id != state.domain_id:
        raise ReportRejected(f"report for domain {report.domain_id}, agent owns {state.domain_id}")
    if not 0 <= report.path_index < n:
        raise ReportRejected(f"unknown path index {report.path_index} (have {n} paths)")
    be = _backend_for(config, backend)
    metrics = aggregate(report, config.aggregation)
    r = be.reward(metrics.queue, metrics.delay, config.reward)

    new = state.copy()
    i = report.path_index
    new.ema[i] = be.ema_step(new.ema[i], r, config.ema_gamma)

    if report.is_probe:
        new.probes_since_switch += 1
        if new.phase is not Phase.STEERING:
            return new, None
        lp = new.learned_path
        own = be.to_float(new.ema[lp])
        alt = max(be.to_float(e) for j, e in enumerate(new.ema) if j != lp)
        if own < config.theta_low or alt > own + config.delta_improve:
            new.degradation_streak += 1
        else:
            new.degradation_streak = 0
        if new.degradation_streak >= config.window:
            new.phase = Phase.LEARNING
            new.probs = be.uniform(n)
            new.learned_path = None
            new.degradation_streak = 0
            new.probes_since_switch = 0
            return new, ControlDirective(new.domain_id, be.select(new.probs, rng.random()))
        return new, None

    if new.phase is Phase.STEERING:
        return new, ControlDirective(new.domain_id, new.learned_path)

    new.probs = be.update(new.probs, i, r, config.alpha)
    new.n_updates += 1
    top = _argmax(new.probs)
    if be.to_float(new.probs[top]) >= config.p_conv:
        new.phase = Phase.STEERING
        new.learned_path = top
        new.degradation_streak = 0
        new.probes_since_switch = 0
        return new, ControlDirective(new.domain_id, top)
    return new, ControlDirective(new.domain_id, be.select(new.probs, rng.random()))


def check_reports(X, n_paths: int | None = None, domain_id: int = 1) -> list[TelemetryReport]:
    """Coerce ``X`` into telemetry reports.

    Accepts a sequence of :class:`TelemetryReport` or an array-like of rows
    ``(path_index, is_probe, queue, delay)``; array rows become single-record
    reports whose aggregate is ``(queue, delay)``.
    """
    if isinstance(X, TelemetryReport):
        return [X]
    if isinstance(X, (list, tuple)) and X and all(isinstance(r, TelemetryReport) for r in X):
        return list(X)
    arr = check_array(X, dtype=np.float64, ensure_min_samples=1)
    if arr.shape[1] != 4:
        raise ValueError(f"expected 4 columns (path_index, is_probe, queue, delay), got {arr.shape[1]}")
    if np.any(arr[:, 2:] < 0):
        raise ValueError("queue and delay must be non-negative")
    if np.any(arr[:, 0] != np.floor(arr[:, 0])) or np.any(arr[:, 0] < 0):
        raise ValueError("path_index must be a non-negative integer")
    if n_paths is not None and np.any(arr[:, 0] >= n_paths):
        raise ValueError(f"path_index must be < {n_paths}")
    out = []
    for k, (p, probe, q, d) in enumerate(arr):
        q = int(q) if float(q).is_integer() else float(q)
        d = int(d) if float(d).is_integer() else float(d)
        out.append(TelemetryReport(domain_id, int(p), bool(probe), k, [HopRecord(0, q, d)], 0))
    return out


class SLAPathSelector(BaseEstimator):
    """Online path selector learning a distribution over candidate segments.

    Parameters mirror :class:`AgentConfig`; reward parameters are flattened so
    ``get_params``/``set_params`` and grid utilities see all of them.

    Attributes
    ----------
    state_ : AgentState
    n_reports_ : int
    n_rejected_ : int
    last_directive_ : ControlDirective or None
    """

    def __init__(self, n_paths=2, alpha=0.5, p_conv=0.9, probe_interval=100, ema_gamma=0.125,
                 theta_low=0.4, delta_improve=0.1, window=3, beta1=0.5, beta2=0.5,
                 tau_q=20.0, tau_d=500.0, c_q=0.3, c_d=0.01, backend="exact",
                 bucket_count=DEFAULT_BUCKETS, aggregation="sum", domain_id=1,
                 random_state=None):
        self.n_paths = n_paths
        self.alpha = alpha
        self.p_conv = p_conv
        self.probe_interval = probe_interval
        self.ema_gamma = ema_gamma
        self.theta_low = theta_low
        self.delta_improve = delta_improve
        self.window = window
        self.beta1 = beta1
        self.beta2 = beta2
        self.tau_q = tau_q
        self.tau_d = tau_d
        self.c_q = c_q
        self.c_d = c_d
        self.backend = backend
        self.bucket_count = bucket_count
        self.aggregation = aggregation
        self.domain_id = domain_id
        self.random_state = random_state

    @classmethod
    def from_config(cls, config: AgentConfig, **kwargs) -> "SLAPathSelector":
        r = config.reward
        return cls(alpha=config.alpha, p_conv=config.p_conv, probe_interval=config.probe_interval,
                   ema_gamma=config.ema_gamma, theta_low=config.theta_low,
                   delta_improve=config.delta_improve, window=config.window,
                   beta1=r.beta1, beta2=r.beta2, tau_q=r.tau_q, tau_d=r.tau_d, c_q=r.c_q,
                   c_d=r.c_d, backend=config.backend, bucket_count=config.bucket_count,
                   aggregation=config.aggregation, **kwargs)

    def to_config(self) -> AgentConfig:
        return AgentConfig(
            alpha=self.alpha, p_conv=self.p_conv, probe_interval=self.probe_interval,
            ema_gamma=self.ema_gamma, theta_low=self.theta_low, delta_improve=self.delta_improve,
            window=self.window,
            reward=RewardParams(self.beta1, self.beta2, self.tau_q, self.tau_d, self.c_q, self.c_d),
            backend=self.backend, bucket_count=self.bucket_count, aggregation=self.aggregation,
        )

    def _init(self):
        self.config_ = self.to_config()
        self.backend_ = get_backend(self.backend, self.bucket_count)
        self.rng_ = check_random_state(self.random_state)
        self.state_ = initial_state(self.config_, self.n_paths, self.domain_id, self.backend_)
        self.n_reports_ = 0
        self.n_rejected_ = 0
        self.last_directive_ = None
        self.convergence_updates_ = []
        return self

    def fit(self, X, y=None):
        """Start from the uniform distribution and consume every report in ``X``."""
        self._init()
        return self.partial_fit(X)

    def partial_fit(self, X, y=None):
        if not hasattr(self, "state_"):
            self._init()
        for report in check_reports(X, self.n_paths, self.domain_id):
            try:
                self.step(report)
            except ReportRejected:
                self.n_rejected_ += 1
        return self

    def step(self, report: TelemetryReport) -> ControlDirective | None:
        """Consume one report without input coercion; used by the simulator."""
        before = self.state_.phase
        self.state_, directive = on_report(self.state_, self.config_, report, self.rng_,
                                           self.backend_)
        self.n_reports_ += 1
        if before is Phase.LEARNING and self.state_.phase is Phase.STEERING:
            self.convergence_updates_.append(self.state_.n_updates)
        if directive is not None:
            self.last_directive_ = directive
        return directive

    @property
    def phase_(self) -> Phase:
        check_is_fitted(self, "state_")
        return self.state_.phase

    @property
    def learned_path_(self) -> int | None:
        check_is_fitted(self, "state_")
        return self.state_.learned_path

    def probabilities(self) -> list[float]:
        check_is_fitted(self, "state_")
        return [self.backend_.to_float(p) for p in self.state_.probs]

    def ema_values(self) -> list[float]:
        check_is_fitted(self, "state_")
        return [self.backend_.to_float(e) for e in self.state_.ema]

    def predict_proba(self, X=None):
        """Current distribution, one row per sample in ``X`` (a single row if None)."""
        p = np.asarray(self.probabilities())
        if X is None:
            return p
        return np.tile(p, (len(X), 1))

    def predict(self, X):
        """Paths for the next ``len(X)`` packets under the current policy, without learning."""
        check_is_fitted(self, "state_")
        if self.state_.phase is Phase.STEERING:
            return np.full(len(X), self.state_.learned_path, dtype=int)
        return np.array([self.backend_.select(self.state_.probs, self.rng_.random())
                         for _ in range(len(X))], dtype=int)


def closed_form_probability(t: int, alpha: float, reward: float, n_paths: int = 2) -> float:
    """Probability of a path selected ``t`` times in a row from uniform under constant reward."""
    return 1.0 - (1.0 - 1.0 / n_paths) * (1.0 - alpha * reward) ** t


def updates_to_converge(alpha: float, reward: float, p_conv: float = 0.9, n_paths: int = 2) -> int:
    """Smallest t with the closed-form probability at or above ``p_conv``."""
    return math.ceil(math.log((1 - p_conv) / (1 - 1.0 / n_paths)) / math.log(1 - alpha * reward))
