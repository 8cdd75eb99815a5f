"""Packet sources: constant rate, Poisson, exponential on/off, and loss-responsive AIMD."""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterator

US_PER_S = 1_000_000
MODES = ("cbr", "poisson", "onoff", "responsive")


@dataclass(frozen=True)
class TrafficSpec:
    src: str = "h_s"
    dst: str = "h_d"
    mode: str = "cbr"
    rate_pps: float = 5000.0
    payload_bytes: int = 1000
    start_us: int = 0
    stop_us: int | None = None
    # on/off
    mean_on_us: float = 10_000.0
    mean_off_us: float = 10_000.0
    # responsive
    min_rate_pps: float = 100.0
    max_rate_pps: float = 1e9
    increase_pps: float = 200.0
    increase_every: int = 10
    backoff_guard_us: int = 2000
    name: str = "main"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown traffic mode {self.mode!r}; expected one of {MODES}")
        if not self.rate_pps > 0:
            raise ValueError(f"rate_pps must be positive, got {self.rate_pps}")
        if self.payload_bytes < 0 or self.start_us < 0:
            raise ValueError("payload_bytes and start_us must be non-negative")
        if self.stop_us is not None and self.stop_us < self.start_us:
            raise ValueError("stop_us precedes start_us")
        if self.mode == "onoff" and not (self.mean_on_us > 0 and self.mean_off_us > 0):
            raise ValueError("on/off means must be positive")
        if self.mode == "responsive" and self.increase_every < 1:
            raise ValueError("increase_every must be >= 1")


def interval_us(rate_pps: float) -> int:
    return max(1, round(US_PER_S / rate_pps))


class Source:
    """Tick generator for one flow. ``next_tick`` returns the next send time or None."""

    stopped = False

    def __init__(self, spec: TrafficSpec, seed):
        self.spec = spec
        self.rng = random.Random(f"{seed}:{spec.name}")
        self.rate = float(spec.rate_pps)
        self.sent = 0

    def first_tick(self) -> int | None:
        return self._bounded(self.spec.start_us)

    def next_tick(self, now: int) -> int | None:
        self.sent += 1
        return self._bounded(now + interval_us(self.rate))

    def _bounded(self, t: int | None) -> int | None:
        if t is None or (self.spec.stop_us is not None and t >= self.spec.stop_us):
            return None
        return t

    def on_drop(self, now: int) -> None:
        pass

    def on_delivered(self, now: int) -> None:
        pass

    def ticks(self, horizon_us: int) -> Iterator[int]:
        """Open-loop tick times before ``horizon_us`` (no loss/delivery feedback)."""
        t = self.first_tick()
        while t is not None and t < horizon_us:
            yield t
            t = self.next_tick(t)


class PoissonSource(Source):
    def next_tick(self, now):
        self.sent += 1
        return self._bounded(now + max(1, round(self.rng.expovariate(self.rate / US_PER_S))))


class OnOffSource(Source):
    def __init__(self, spec, seed):
        super().__init__(spec, seed)
        self.on_until = None

    def first_tick(self):
        start = self.spec.start_us
        self.on_until = start + self._draw(self.spec.mean_on_us)
        return self._bounded(start)

    def _draw(self, mean):
        return max(1, round(self.rng.expovariate(1.0 / mean)))

    def next_tick(self, now):
        self.sent += 1
        t = now + interval_us(self.rate)
        while t >= self.on_until:
            # Skip the off period, then open a new on period.
            t = self.on_until + self._draw(self.spec.mean_off_us)
            self.on_until = t + self._draw(self.spec.mean_on_us)
        return self._bounded(t)


class ResponsiveSource(Source):
    """Halves its rate on loss (at most once per guard interval), adds rate per delivered batch."""

    def __init__(self, spec, seed):
        super().__init__(spec, seed)
        self.last_cut = -(10**18)
        self.delivered = 0

    def on_drop(self, now):
        if now - self.last_cut >= self.spec.backoff_guard_us:
            self.rate = max(self.spec.min_rate_pps, self.rate / 2.0)
            self.last_cut = now

    def on_delivered(self, now):
        self.delivered += 1
        if self.delivered % self.spec.increase_every == 0:
            self.rate = min(self.spec.max_rate_pps, self.rate + self.spec.increase_pps)


def traffic_source(spec: TrafficSpec, seed) -> Source:
    cls = {"cbr": Source, "poisson": PoissonSource, "onoff": OnOffSource,
           "responsive": ResponsiveSource}[spec.mode]
    return cls(spec, seed)
