"""Exact and register-constrained arithmetic for the path-selection agent.

The constrained backend keeps every learned quantity in unsigned Q16.16
registers, multiplies only by shift-and-add, and evaluates the reward
sigmoid through a precomputed range table.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

FRAC_BITS = 16
ONE = 1 << FRAC_BITS
RAW_MAX = (1 << 32) - 1
MAX_SHIFT = 16
DEFAULT_BUCKETS = 64
# Half-width of the tabulated metric range, in units of 1/C.
TABLE_SPAN = 8.0


@dataclass(frozen=True, order=True)
class FixedPoint:
    """Unsigned Q16.16 register value: ``value = raw / 2**16``."""

    raw: int

    def __post_init__(self):
        if not 0 <= self.raw <= RAW_MAX:
            raise ValueError(f"raw value {self.raw} does not fit in 32 bits")

    @classmethod
    def from_float(cls, x: float) -> "FixedPoint":
        return cls(to_raw(x))

    @property
    def value(self) -> float:
        return self.raw / ONE

    def __float__(self) -> float:
        return self.value


def to_raw(x: float) -> int:
    """Round to nearest Q16.16, saturating at the register bounds."""
    if x <= 0:
        return 0
    return min(int(math.floor(x * ONE + 0.5)), RAW_MAX)


def sigmoid_exact(m: float, tau: float, c: float) -> float:
    """Decreasing logistic score 1 - 1/(1 + exp(-c (m - tau))), in [0, 1]."""
    if not c > 0:
        raise ValueError(f"steepness must be positive, got {c}")
    z = c * (m - tau)
    if z >= 0:
        e = math.exp(-z)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(z))


@dataclass(frozen=True)
class SigmoidTable:
    """Range-match table approximating :func:`sigmoid_exact`.

    Bucket ``j`` covers ``[lo + j*width, lo + (j+1)*width)``; metric values
    outside ``[lo, hi)`` clamp to the first or last bucket.
    """

    tau: float
    c: float
    bucket_count: int
    lo: float
    width: float
    outputs: tuple[int, ...]

    @property
    def hi(self) -> float:
        return self.lo + self.width * self.bucket_count

    @property
    def upper_bounds(self) -> list[float]:
        bounds = [self.lo + (j + 1) * self.width for j in range(self.bucket_count)]
        bounds[-1] = math.inf
        return bounds

    def index(self, m: float) -> int:
        j = math.floor((m - self.lo) / self.width)
        if j < 0:
            return 0
        if j >= self.bucket_count:
            return self.bucket_count - 1
        return j

    def lookup_raw(self, m: float) -> int:
        return self.outputs[self.index(m)]

    def lookup(self, m: float) -> FixedPoint:
        return FixedPoint(self.lookup_raw(m))

    def to_text(self) -> str:
        """Two columns per line: range upper bound and Q16.16 raw output."""
        lines = ["# upper_bound raw_q16_16"]
        for ub, out in zip(self.upper_bounds, self.outputs):
            lines.append(f"{ub!r} {out}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, tau: float, c: float) -> "SigmoidTable":
        rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        bounds = [float(r[0]) for r in rows]
        outputs = tuple(int(r[1]) for r in rows)
        width = bounds[1] - bounds[0]
        return cls(tau, c, len(rows), bounds[0] - width, width, outputs)


def build_sigmoid_table(tau: float, c: float, bucket_count: int = DEFAULT_BUCKETS) -> SigmoidTable:
    if bucket_count < 2:
        raise ValueError(f"bucket_count must be >= 2, got {bucket_count}")
    if not c > 0:
        raise ValueError(f"steepness must be positive, got {c}")
    lo = tau - TABLE_SPAN / c
    width = 2 * TABLE_SPAN / c / bucket_count
    outputs = tuple(
        min(to_raw(sigmoid_exact(lo + (j + 0.5) * width, tau, c)), ONE)
        for j in range(bucket_count)
    )
    return SigmoidTable(tau, c, bucket_count, lo, width, outputs)


@lru_cache(maxsize=None)
def _table(tau: float, c: float, bucket_count: int) -> SigmoidTable:
    return build_sigmoid_table(tau, c, bucket_count)


def _shift_candidates(max_shift: int = MAX_SHIFT):
    # Single shifts first so an exact single shift wins ties against pairs.
    cands = [(2.0 ** -a, a, None) for a in range(max_shift + 1)]
    cands += [(2.0 ** -a + 2.0 ** -b, a, b)
              for a in range(1, max_shift + 1) for b in range(a + 1, max_shift + 1)]
    return cands


_CANDIDATES = _shift_candidates()
_SORTED = sorted(_CANDIDATES, key=lambda t: (t[0], t[2] is not None, t[1]))
_SORTED_VALUES = [t[0] for t in _SORTED]


@lru_cache(maxsize=65536)
def shift_pair(factor: float) -> tuple[int, int | None]:
    """Shifts (a, b) minimising |2^-a + 2^-b - factor|; ``b`` may be None."""
    if not 0 < factor <= 1:
        raise ValueError(f"factor must be in (0, 1], got {factor}")
    k = bisect.bisect_left(_SORTED_VALUES, factor)
    best = None
    for j in (k - 1, k, k + 1):
        if 0 <= j < len(_SORTED):
            v, a, b = _SORTED[j]
            err = abs(v - factor)
            if best is None or err < best[0]:
                best = (err, a, b)
    return best[1], best[2]


def shifted_factor(factor: float) -> float:
    a, b = shift_pair(factor)
    return 2.0 ** -a + (2.0 ** -b if b is not None else 0.0)


def shift_mul_raw(raw: int, factor: float) -> int:
    if factor == 0:
        return 0
    a, b = shift_pair(factor)
    out = raw >> a
    if b is not None:
        out += raw >> b
    return out


def shift_mul(x: FixedPoint, alpha: float) -> FixedPoint:
    """x * alpha using at most two right shifts of x."""
    return FixedPoint(shift_mul_raw(x.raw, alpha))


class ExactBackend:
    """Double-precision reference arithmetic."""

    name = "exact"
    sum_tolerance = 1e-9

    def __init__(self, bucket_count: int = DEFAULT_BUCKETS):
        self.bucket_count = bucket_count

    def from_float(self, x: float) -> float:
        return float(x)

    def to_float(self, v) -> float:
        return float(v)

    def uniform(self, n: int) -> list[float]:
        return [1.0 / n] * n

    def score(self, m: float, tau: float, c: float) -> float:
        return sigmoid_exact(m, tau, c)

    def reward(self, queue: float, delay: float, params) -> float:
        return (params.beta1 * sigmoid_exact(queue, params.tau_q, params.c_q)
                + params.beta2 * sigmoid_exact(delay, params.tau_d, params.c_d))

    def update(self, probs: Sequence[float], selected: int, reward: float, alpha: float) -> list[float]:
        k = alpha * reward
        if k == 0:
            return list(probs)
        out = [p - k * p for p in probs]
        p = probs[selected]
        out[selected] = p + k * (1.0 - p)
        s = sum(out)
        if abs(s - 1.0) > self.sum_tolerance:
            out = [q / s for q in out]
        return [min(max(q, 0.0), 1.0) for q in out]

    def ema_step(self, ema: float, reward: float, gamma: float) -> float:
        return gamma * reward + (1.0 - gamma) * ema

    def select(self, probs: Sequence[float], u: float) -> int:
        acc = 0.0
        last = 0
        for i, p in enumerate(probs):
            if p > 0:
                last = i
            acc += p
            if u < acc:
                return i
        return last


class ConstrainedBackend:
    """Q16.16 registers, shift-and-add multiplies, table-lookup sigmoid."""

    name = "constrained"
    sum_tolerance = 2.0 ** -12
    _tol_raw = ONE >> 12

    def __init__(self, bucket_count: int = DEFAULT_BUCKETS):
        self.bucket_count = bucket_count

    def from_float(self, x: float) -> int:
        return to_raw(x)

    def to_float(self, v: int) -> float:
        return v / ONE

    def uniform(self, n: int) -> list[int]:
        base = ONE // n
        out = [base] * n
        out[0] += ONE - base * n
        return out

    def score(self, m: float, tau: float, c: float) -> int:
        return _table(float(tau), float(c), self.bucket_count).lookup_raw(m)

    def reward(self, queue: float, delay: float, params) -> int:
        fq = self.score(queue, params.tau_q, params.c_q)
        fd = self.score(delay, params.tau_d, params.c_d)
        return min(shift_mul_raw(fq, params.beta1) + shift_mul_raw(fd, params.beta2), ONE)

    def update(self, probs: Sequence[int], selected: int, reward: int, alpha: float) -> list[int]:
        if reward == 0:
            return list(probs)
        factor = alpha * reward / ONE
        a, b = shift_pair(min(factor, 1.0))

        def mul(x: int) -> int:
            return (x >> a) + ((x >> b) if b is not None else 0)

        out = [p - mul(p) for p in probs]
        p = probs[selected]
        out[selected] = p + mul(ONE - p)
        drift = sum(out) - ONE
        if abs(drift) > self._tol_raw:
            # Residual goes to the selected register, the one just written.
            out[selected] = min(max(out[selected] - drift, 0), ONE)
        return out

    def ema_step(self, ema: int, reward: int, gamma: float) -> int:
        if reward >= ema:
            return ema + shift_mul_raw(reward - ema, gamma)
        return ema - shift_mul_raw(ema - reward, gamma)

    def select(self, probs: Sequence[int], u: float) -> int:
        total = sum(probs)
        target = int(u * total)
        acc = 0
        last = 0
        for i, p in enumerate(probs):
            if p > 0:
                last = i
            acc += p
            if target < acc:
                return i
        return last


BACKENDS = {"exact": ExactBackend, "constrained": ConstrainedBackend}


def get_backend(name: str, bucket_count: int = DEFAULT_BUCKETS):
    try:
        return BACKENDS[name](bucket_count)
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; expected one of {sorted(BACKENDS)}") from None


def backend_gap(values: Iterable[float], *, tau: float = 50.0, c: float = 0.2,
                bucket_count: int = DEFAULT_BUCKETS, alpha: float = 0.5,
                gamma: float = 0.125) -> dict[str, float]:
    """Largest absolute disagreement between the backends per primitive.

    ``sigmoid`` evaluates every value as a metric. ``multiply`` measures the
    shift decomposition of ``alpha`` on the values inside [0, 1]; truncation
    of the register LSB is excluded, so powers of two give exactly zero.
    ``ema`` runs one EMA step per consecutive pair of unit-interval values.
    """
    values = list(values)
    exact, con = ExactBackend(bucket_count), ConstrainedBackend(bucket_count)
    unit = [v for v in values if 0.0 <= v <= 1.0]

    sig = max((abs(exact.score(m, tau, c) - con.to_float(con.score(m, tau, c))) for m in values),
              default=0.0)
    approx = shifted_factor(alpha)
    mul = max((abs(to_raw(x) / ONE * approx - to_raw(x) / ONE * alpha) for x in unit), default=0.0)
    ema = 0.0
    for e, r in zip(unit, unit[1:]):
        got = con.to_float(con.ema_step(to_raw(e), to_raw(r), gamma))
        want = exact.ema_step(to_raw(e) / ONE, to_raw(r) / ONE, gamma)
        ema = max(ema, abs(got - want))
    return {"sigmoid": sig, "multiply": mul, "ema": ema}


class SigmoidLookup(TransformerMixin, BaseEstimator):
    """Transformer form of the sigmoid table: ``fit`` builds it, ``transform`` looks up.

    Output is the real value of each Q16.16 entry, one column per input column.
    """

    def __init__(self, tau: float = 20.0, steepness: float = 0.3, bucket_count: int = DEFAULT_BUCKETS):
        self.tau = tau
        self.steepness = steepness
        self.bucket_count = bucket_count

    def fit(self, X=None, y=None):
        self.table_ = build_sigmoid_table(self.tau, self.steepness, self.bucket_count)
        return self

    def transform(self, X):
        check_is_fitted(self, "table_")
        X = check_array(X, ensure_2d=False, dtype=np.float64)
        lookup = np.vectorize(lambda m: self.table_.lookup_raw(m) / ONE, otypes=[np.float64])
        return lookup(X)
