"""Experiment runners: time series, learning-rate sweep, throughput comparison.

Every output is a CSV with a header row whose column names carry their unit.
"""

from __future__ import annotations

import csv
import dataclasses
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from scipy import stats

from .config import ExperimentSpec, Scenario, load_scenario
from .simulator import SimulationTrace, run

DEFAULT_ALPHAS = tuple(round(0.1 * k, 1) for k in range(1, 11))


def simulate(scenario: Scenario, seed, *, backend: str | None = None, horizon_us: int | None = None,
             agent: bool = True, static_path: int | None = None, **options) -> SimulationTrace:
    """Run one scenario; ``agent=False`` gives static forwarding on ``static_path``."""
    cfg = scenario.agent if agent else None
    if cfg is not None and backend is not None:
        cfg = dataclasses.replace(cfg, backend=backend)
    options.setdefault("sample_interval_us", scenario.sample_interval_us)
    return run(scenario.topology, scenario.domains, [cfg], scenario.traffic, scenario.events, seed,
               horizon_us or scenario.horizon_us,
               static_path=scenario.static_path if static_path is None else static_path, **options)


def _write_csv(path: Path, header: Sequence[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return path


def write_trace(trace: SimulationTrace, out_dir: Path) -> dict[str, Path]:
    n = trace.n_paths
    ts_header = (["time_us"] + [f"queue_p{i}_pkts" for i in range(n)]
                 + [f"delay_p{i}_us" for i in range(n)] + ["selected_path"])
    agent_header = (["time_us", "report_path", "is_probe", "phase"]
                    + [f"prob_p{i}" for i in range(n)] + [f"ema_p{i}" for i in range(n)]
                    + ["directive_path"])
    summary = trace.summary()
    return {
        "timeseries": _write_csv(out_dir / "timeseries.csv", ts_header, trace.timeseries),
        "agent": _write_csv(out_dir / "agent.csv", agent_header, trace.agent_rows),
        "summary": _write_csv(out_dir / "summary.csv", list(summary), [list(summary.values())]),
    }


def _spec_scenario(spec: ExperimentSpec) -> Scenario:
    return load_scenario(spec.scenario)


def run_timeseries(spec: ExperimentSpec, seed=None, out_dir: Path | None = None,
                   backend: str | None = None, horizon_us: int | None = None):
    """One run of the experiment's scenario; writes timeseries.csv, agent.csv, summary.csv."""
    scenario = _spec_scenario(spec)
    seed = spec.seeds[0] if seed is None else seed
    trace = simulate(scenario, seed, backend=backend or spec.backend, horizon_us=horizon_us)
    paths = write_trace(trace, Path(out_dir or spec.outputs))
    return trace, paths


@dataclass
class SweepRun:
    alpha: float
    seed: int
    convergence_us: int | None
    updates: int | None
    learned_path: int | None

    @property
    def censored(self) -> bool:
        return self.convergence_us is None


def _sweep_job(args) -> SweepRun:
    scenario, alpha, seed, backend, horizon = args
    trace = simulate(scenario.with_agent(alpha=alpha), seed, backend=backend, horizon_us=horizon,
                     stop_on_convergence=True, sample_interval_us=None)
    if trace.convergence_events:
        _, path, updates = trace.convergence_events[0]
        return SweepRun(alpha, seed, trace.convergence_time_us(), updates, path)
    return SweepRun(alpha, seed, None, None, None)


@dataclass
class SweepResult:
    runs: list[SweepRun]
    alphas: list[float]

    def by_alpha(self, alpha: float) -> list[SweepRun]:
        return [r for r in self.runs if r.alpha == alpha]

    def mean_ms(self, alpha: float) -> float:
        vals = [r.convergence_us / 1000 for r in self.by_alpha(alpha) if not r.censored]
        return statistics.fmean(vals) if vals else math.nan

    def std_ms(self, alpha: float) -> float:
        vals = [r.convergence_us / 1000 for r in self.by_alpha(alpha) if not r.censored]
        return statistics.stdev(vals) if len(vals) > 1 else 0.0

    def spearman(self) -> tuple[float, float]:
        """Rank correlation of alpha with mean convergence time across the grid."""
        means = [self.mean_ms(a) for a in self.alphas]
        res = stats.spearmanr(self.alphas, means)
        return float(res.statistic), float(res.pvalue)


def run_alpha_sweep(spec: ExperimentSpec, out_dir: Path | None = None, backend: str | None = None,
                    horizon_us: int | None = None, jobs: int = 1) -> SweepResult:
    """Convergence time per learning rate; writes sweep.csv and sweep_runs.csv.

    Runs that never reach the convergence threshold within the horizon are
    kept and flagged as censored.
    """
    scenario = _spec_scenario(spec)
    alphas = spec.sweep.get("alpha", list(DEFAULT_ALPHAS))
    horizon = horizon_us or spec.sweep_horizon_us or scenario.horizon_us
    backend = backend or spec.backend
    jobs_args = [(scenario, a, s, backend, horizon) for a in alphas for s in spec.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            runs = list(ex.map(_sweep_job, jobs_args))
    else:
        runs = [_sweep_job(a) for a in jobs_args]
    result = SweepResult(runs, list(alphas))

    out = Path(out_dir or spec.outputs)
    rows = []
    for a in alphas:
        rs = result.by_alpha(a)
        conv = [r for r in rs if not r.censored]
        per_seed = ";".join("censored" if r.censored else repr(r.convergence_us / 1000) for r in rs)
        rows.append([a, len(rs), len(rs) - len(conv), result.mean_ms(a), result.std_ms(a),
                     statistics.fmean([r.updates for r in conv]) if conv else math.nan, per_seed])
    _write_csv(out / "sweep.csv",
               ["alpha", "n_seeds", "n_censored", "mean_convergence_ms", "std_convergence_ms",
                "mean_updates", "per_seed_convergence_ms"], rows)
    _write_csv(out / "sweep_runs.csv",
               ["alpha", "seed", "censored", "convergence_us", "updates", "learned_path"],
               [[r.alpha, r.seed, int(r.censored), "" if r.censored else r.convergence_us,
                 "" if r.censored else r.updates, "" if r.learned_path is None else r.learned_path]
                for r in runs])
    return result


@dataclass
class CompareResult:
    seeds: list[int]
    baseline_pps: list[float]
    sla_pps: list[float]

    @property
    def baseline_mean(self) -> float:
        return statistics.fmean(self.baseline_pps)

    @property
    def sla_mean(self) -> float:
        return statistics.fmean(self.sla_pps)

    @property
    def relative_delta(self) -> float:
        """(SLA - baseline) / baseline; negative means overhead."""
        if self.baseline_mean == 0:
            return 0.0
        return (self.sla_mean - self.baseline_mean) / self.baseline_mean


def run_throughput_compare(spec: ExperimentSpec, out_dir: Path | None = None,
                           backend: str | None = None, horizon_us: int | None = None) -> CompareResult:
    """Goodput of static forwarding on ``compare_static_path`` versus the agent, per seed."""
    scenario = _spec_scenario(spec)
    backend = backend or spec.backend
    base, sla = [], []
    for seed in spec.seeds:
        b = simulate(scenario, seed, agent=False, static_path=spec.compare_static_path,
                     horizon_us=horizon_us, sample_interval_us=None)
        s = simulate(scenario, seed, backend=backend, horizon_us=horizon_us, sample_interval_us=None)
        base.append(b.goodput_pps())
        sla.append(s.goodput_pps())
    res = CompareResult(list(spec.seeds), base, sla)

    def rel(b, s):
        return (s - b) / b if b else 0.0

    rows = [["run", seed, b, s, rel(b, s)] for seed, b, s in zip(res.seeds, base, sla)]
    rows.append(["mean", "", res.baseline_mean, res.sla_mean, res.relative_delta])
    _write_csv(Path(out_dir or spec.outputs) / "compare.csv",
               ["row", "seed", "baseline_goodput_pps", "sla_goodput_pps", "relative_delta"], rows)
    return res


@dataclass
class Adaptation:
    """How one congestion-shift run behaved around the shift."""

    converged_before: bool
    path_before: int | None
    converged_after: bool
    path_after: int | None
    packets_to_switch: int | None
    switches_stable_before: int
    switches_stable_after: int
    reexplorations_before: int


def _window_start(trace: SimulationTrace, t_conv: int) -> int:
    """First instant the decision node is guaranteed to hold the converged directive."""
    sent_after = [d for s, d, _ in trace.control_log if s >= t_conv]
    if sent_after:
        return sent_after[0]
    before = [d for s, d, _ in trace.control_log if s < t_conv]
    return max([t_conv] + before)


def _switches(trace: SimulationTrace, t0: int, t1: int) -> int:
    # A change exactly at t0 is the one that installs the converged path.
    return sum(1 for t, _ in trace.register_log if t0 < t < t1)


def analyze_adaptation(trace: SimulationTrace, shift_us: int) -> Adaptation:
    end = trace.end_us
    before = [e for e in trace.convergence_events if e[0] < shift_us]
    after = [e for e in trace.convergence_events if e[0] >= shift_us]
    # State at the shift: the last convergence before it, unless a re-exploration followed.
    last_re = max([t for t in trace.reexplore_events if t < shift_us], default=-1)
    steady_before = bool(before) and before[-1][0] > last_re
    path_before = before[-1][1] if steady_before else None
    path_after = None
    packets = None
    sw_after = 0
    if after:
        # First post-shift convergence onto a different path than the pre-shift one.
        moved = [e for e in after if e[1] != path_before]
        if moved:
            t, path_after, _ = moved[0]
            packets = trace.data_sent_between(shift_us, t)
            next_re = min([x for x in trace.reexplore_events if x > t], default=end)
            sw_after = _switches(trace, _window_start(trace, t), min(next_re, end))
    sw_before = 0
    if before:
        sw_before = _switches(trace, _window_start(trace, before[0][0]), shift_us)
    return Adaptation(
        converged_before=steady_before, path_before=path_before,
        converged_after=path_after is not None, path_after=path_after,
        packets_to_switch=packets, switches_stable_before=sw_before,
        switches_stable_after=sw_after,
        reexplorations_before=sum(1 for t in trace.reexplore_events if t < shift_us),
    )
