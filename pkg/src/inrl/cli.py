"""Command-line entry point: ``inrl {validate,run,sweep,compare,table}``.

Exit status is 0 on success, 1 when a file is missing or a configuration
fails validation, and 2 on usage errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from . import harness
from .arith import DEFAULT_BUCKETS, build_sigmoid_table
from .config import ConfigError, ExperimentSpec, load_experiment, load_scenario
from .simulator import SimulationError
from .topology import validate_topology


def _experiment(path: str, args) -> ExperimentSpec:
    """Accept an experiment file, or a bare scenario file wrapped as a one-seed experiment."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    data = yaml.safe_load(p.read_text())
    if isinstance(data, dict) and "scenario" in data and isinstance(data["scenario"], str):
        spec = load_experiment(p)
    else:
        load_scenario(p)
        spec = ExperimentSpec(name=p.stem, scenario=p, seeds=[0], source=p)
    if getattr(args, "seed", None) is not None:
        spec.seeds = [args.seed] if args.command == "run" else spec.seeds
    if args.out_dir is not None:
        spec.outputs = Path(args.out_dir)
    return spec


def cmd_validate(args) -> int:
    scenario = load_scenario(args.scenario)
    result = validate_topology(scenario.topology, scenario.domains)
    if not result.ok:
        for v in result.violations:
            print(f"invalid: {v}", file=sys.stderr)
        return 1
    n = sum(d.n_paths for d in scenario.domains)
    print(f"ok: {scenario.name}: {len(scenario.topology.nodes)} nodes, "
          f"{len(scenario.topology.links)} links, {len(scenario.domains)} domain(s), {n} paths")
    return 0


def cmd_run(args) -> int:
    spec = _experiment(args.spec, args)
    trace, paths = harness.run_timeseries(spec, spec.seeds[0], spec.outputs, args.backend, args.horizon_us)
    s = trace.summary()
    print(f"goodput {s['goodput_pps']:.1f} pps, convergence {s['convergence_time_us'] or 'none'} us, "
          f"{s['reexplorations']} re-exploration(s)")
    for p in paths.values():
        print(p)
    return 0


def cmd_sweep(args) -> int:
    spec = _experiment(args.spec, args)
    res = harness.run_alpha_sweep(spec, spec.outputs, args.backend, args.horizon_us, jobs=args.jobs)
    for a in res.alphas:
        censored = sum(r.censored for r in res.by_alpha(a))
        print(f"alpha={a:g} mean={res.mean_ms(a):.3f} ms censored={censored}")
    rho, p = res.spearman()
    print(f"spearman rho={rho:.4f} p={p:.3g}")
    print(Path(spec.outputs) / "sweep.csv")
    return 0


def cmd_compare(args) -> int:
    spec = _experiment(args.spec, args)
    res = harness.run_throughput_compare(spec, spec.outputs, args.backend, args.horizon_us)
    print(f"baseline {res.baseline_mean:.1f} pps, agent {res.sla_mean:.1f} pps, "
          f"relative delta {res.relative_delta:+.4f}")
    print(Path(spec.outputs) / "compare.csv")
    return 0


def cmd_table(args) -> int:
    table = build_sigmoid_table(args.tau, args.steepness, args.buckets)
    sys.stdout.write(table.to_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="inrl", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a scenario's topology and domains")
    v.add_argument("scenario")
    v.set_defaults(func=cmd_validate)

    def common(p, seed=True):
        p.add_argument("spec", help="experiment file (or a scenario file)")
        if seed:
            p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out-dir", default=None)
        p.add_argument("--backend", choices=("exact", "constrained"), default=None)
        p.add_argument("--horizon-us", type=int, default=None)

    r = sub.add_parser("run", help="one run; writes timeseries.csv, agent.csv, summary.csv")
    common(r)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="learning-rate sweep; writes sweep.csv")
    common(s, seed=False)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_sweep)

    c = sub.add_parser("compare", help="goodput with the agent versus static forwarding")
    common(c, seed=False)
    c.set_defaults(func=cmd_compare)

    t = sub.add_parser("table", help="lookup-table utilities")
    tsub = t.add_subparsers(dest="table_command", required=True)
    d = tsub.add_parser("dump-sigmoid", help="print bucket upper bounds and outputs")
    d.add_argument("--tau", type=float, required=True)
    d.add_argument("--steepness", type=float, required=True)
    d.add_argument("--buckets", type=int, default=DEFAULT_BUCKETS)
    d.set_defaults(func=cmd_table)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "horizon_us", None) is not None and args.horizon_us <= 0:
        parser.error("--horizon-us must be positive")
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ConfigError, SimulationError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
