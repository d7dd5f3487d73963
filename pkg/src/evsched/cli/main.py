#!/usr/bin/env python3
"""
Command-line interface for EV charging schedules

Generates synthetic instances, runs the Frank-Wolfe, projected-gradient,
ADMM and reference solvers, and writes result JSON plus plot-ready traces.
Exit codes: 0 converged, 1 input error, 2 iteration limit reached.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Type

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from ..core.admm_solver import AdmmConfig, AdmmSolver
from ..core.errors import EvschedError, InputError, MaxIterExceeded, ParseError, UnknownKind
from ..core.fleet import CostModel, Fleet, cost_from_name, load_base_load, load_fleet
from ..core.fw_scheduler import AggregationTree, FwOptions, schedule
from ..core.grid_model import FeederModel, load_network_loads, parse_feeder
from ..core.instances import INSTANCE_KINDS, ScenarioInputs, generate_instance, load_scenario, write_instance
from ..core.pgd_baseline import PgdConfig, pgd_schedule
from ..core.reference_oracle import OracleOptions, oracle_network, oracle_unconstrained
from ..core.reporting import (
    cost_comparison,
    load_curves_frame,
    network_summary,
    profiles_dict,
    schedule_summary,
    substation_load_kw,
    trace_stride,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_MAX_ITER = 2

NETWORK_FREE_SOLVERS = ("fw", "pgd", "oracle")
NETWORK_SOLVERS = ("admm", "oracle")


def _options(model: Type[BaseModel], params: Dict) -> BaseModel:
    """Build a solver options model from the parameters it understands."""
    known = {k: v for k, v in params.items() if k in model.model_fields and v is not None}
    ignored = sorted(set(params) - set(model.model_fields))
    if ignored:
        logger.warning("Ignoring parameters %s for %s", ignored, model.__name__)
    try:
        return model.model_validate(known)
    except ValidationError as e:
        raise ParseError(f"invalid {model.__name__} parameters: {e}") from e


def _tree(kind: Optional[str], fleet: Fleet, seed: int) -> Optional[AggregationTree]:
    if kind in (None, "none"):
        return None
    if kind == "star":
        return AggregationTree.star(fleet.ids)
    if kind == "chain":
        return AggregationTree.chain(fleet.ids)
    if kind == "random":
        return AggregationTree.random(fleet.ids, np.random.default_rng(seed))
    raise UnknownKind(f"unknown aggregation tree '{kind}'")


def _horizon(T: Optional[int], table: str) -> int:
    """Slot count from --T, or else the largest slot index in a t-indexed CSV."""
    if T is not None:
        return T
    try:
        slots = pd.read_csv(table, comment="#", usecols=["t"])["t"]
    except (OSError, ValueError) as e:
        raise ParseError(f"cannot infer the horizon from {table}: {e}") from e
    if slots.empty:
        raise ParseError(f"{table}: no slots to infer the horizon from")
    return int(slots.max())


class EvschedCLI:
    """
    CLI front end: runs solvers, prints summaries and writes artifacts.

    `out` is either a directory or a `.json` file. A file receives the result
    document itself and its parent directory holds the remaining artifacts.
    """

    def __init__(self, out: str = "results", fmt: str = "csv", trace_every: int = 1,
                 threads: int = 1, seed: int = 0, trace_path: Optional[str] = None):
        self.out = Path(out)
        self.result_file = self.out if self.out.suffix == ".json" else None
        self.out_dir = self.out.parent if self.result_file else self.out
        self.trace_path = Path(trace_path) if trace_path else None
        self.fmt = fmt
        self.trace_every = trace_every
        self.threads = threads
        self.seed = seed

    # Artifacts

    def write_json(self, name: str, payload: Dict, primary: bool = False) -> Path:
        """Write a JSON document; the primary document goes to --out when that names a file."""
        path = self.result_file if primary and self.result_file else self.out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2) + "\n")
        return path

    def write_table(self, stem: str, frame: pd.DataFrame, path: Optional[Path] = None) -> Path:
        """Write a table as CSV or JSON records, following --format or the suffix of `path`."""
        if path is None:
            path = self.out_dir / f"{stem}.{self.fmt}"
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.suffix == ".json":
            path.write_text(frame.to_json(orient="records", indent=2) + "\n")
        else:
            frame.to_csv(path, index=False)
        return path

    def write_trace(self, trace) -> Path:
        every = trace_stride(len(trace), self.trace_every)
        return self.write_table("trace", trace.to_frame(every), self.trace_path)

    # Display

    def display_schedule(self, summary: Dict, fleet: Fleet):
        """Display a network-free schedule summary"""
        titles = {"fw": "FRANK-WOLFE", "pgd": "PROJECTED GRADIENT", "oracle": "REFERENCE ORACLE"}
        print(f"\n⚡ {titles.get(summary['solver'], summary['solver'].upper())} SCHEDULE")
        print("=" * 60)
        print(f"EVs: {len(fleet)}   Slots: {fleet.T} x {fleet.slot_minutes:g} min")
        print(f"{'Cost':<12} {summary['cost']:.10g}")
        print(f"{'Iterations':<12} {summary['iterations']}")
        if summary.get("gap") is not None:
            print(f"{'Gap':<12} {summary['gap']:.3e}")
        total = np.asarray(summary["total_load"])
        if total.size:
            print(f"{'Total load':<12} {total.min():.2f} .. {total.max():.2f} (spread {np.ptp(total):.2f})")
        self.display_status(summary["converged"], summary.get("stop_reason", ""))

    def display_network(self, summary: Dict, feeder: FeederModel):
        """Display an ADMM result and the grid health report"""
        print("\n🔌 NETWORK-CONSTRAINED SCHEDULE (ADMM)")
        print("=" * 60)
        print(f"Buses: {feeder.n_buses}   EVs: {len(summary['profiles'])}")
        print(f"{'Objective':<12} {summary['objective']:.10g}")
        print(f"{'Iterations':<12} {summary['iterations']}")
        print(f"{'Threshold':<12} {summary['threshold']:.3e}")
        self.display_status(summary["converged"], "residuals below threshold")
        self.display_health(summary["health"])

    def display_health(self, health: Dict):
        """Display grid health messages"""
        print("\n🩺 GRID HEALTH")
        print("-" * 30)
        for message in health["messages"]:
            if message.startswith("VIOLATED"):
                print(f"⚠️  {message}")
            elif message.startswith("WARNING"):
                print(f"⚡ {message}")
            else:
                print(f"✅ {message}")

    def display_status(self, converged: bool, reason: str):
        if converged:
            print(f"✅ Converged ({reason})" if reason else "✅ Converged")
        else:
            print("⚠️  Iteration limit reached before convergence")

    # Solvers

    def run_network_free(self, solver: str, fleet: Fleet, d: np.ndarray, cost: CostModel,
                         params: Dict, tree: Optional[str] = None):
        """Run one network-free solver; returns (summary, result)."""
        if solver == "fw":
            result = schedule(fleet, d, cost, _options(FwOptions, params), tree=_tree(tree, fleet, self.seed))
        elif solver == "pgd":
            result = pgd_schedule(fleet, d, cost, _options(PgdConfig, params))
        elif solver == "oracle":
            report = oracle_unconstrained(fleet, d, cost, _options(OracleOptions, params))
            profiles = report.optimizer["profiles"]
            summary = {
                "solver": "oracle",
                "converged": report.certified,
                "iterations": report.iterations,
                "cost": report.value,
                "gap": report.certificate["gap"],
                "stop_reason": "certified" if report.certified else "uncertified",
                "certificate": report.certificate,
                "profiles": profiles_dict(fleet, profiles),
                "total_load": (d + profiles.sum(axis=0)).tolist(),
            }
            return summary, report
        else:
            raise UnknownKind(f"solver '{solver}' does not apply to network-free scenarios")
        summary = schedule_summary(solver, result, fleet, d)
        if solver == "pgd":
            summary["step"] = result.step
        return summary, result

    def run_network(self, solver: str, feeder: FeederModel, fleet: Fleet, d: np.ndarray,
                    qd: np.ndarray, params: Dict):
        """Run ADMM or the network oracle on p.u. inputs; returns (summary, result)."""
        if solver == "admm":
            config = _options(AdmmConfig, {**params, "threads": self.threads})
            result = AdmmSolver(feeder, fleet, d, qd, config).solve()
            summary = network_summary(result, fleet, feeder)
            summary["substation_kw"] = substation_load_kw(feeder, result.repaired.P).tolist()
            return summary, result
        if solver == "oracle":
            report = oracle_network(feeder, fleet, d, qd, _options(OracleOptions, params))
            summary = {
                "solver": "oracle",
                "converged": report.certified,
                "iterations": report.iterations,
                "objective": report.value,
                "certificate": report.certificate,
                "profiles": profiles_dict(fleet, report.optimizer["profiles"], feeder.base_kva),
                "substation_kw": substation_load_kw(feeder, report.optimizer["P"]).tolist(),
            }
            return summary, report
        raise UnknownKind(f"solver '{solver}' does not apply to network scenarios")

    def finish(self, summary: Dict, result) -> int:
        """Write result.json and the trace, then map convergence to an exit code."""
        path = self.write_json("result.json", summary, primary=True)
        print(f"\n💾 Result written to {path}")
        trace = getattr(result, "trace", None)
        if trace is not None:
            print(f"📈 Trace written to {self.write_trace(trace)}")
        if not summary["converged"]:
            if hasattr(result, "raise_for_status"):
                result.raise_for_status()
            raise MaxIterExceeded(f"{summary['solver']} did not certify its answer", result=result)
        return EXIT_OK

    # Commands

    def cmd_generate(self, kind: str) -> int:
        instance = generate_instance(kind, self.seed)
        written = write_instance(instance, self.out)
        print(f"\n🧪 Generated {kind} (seed {self.seed}): {len(instance.fleet_records)} EVs, T={instance.scenario.T}")
        for name, path in written.items():
            print(f"   • {name:<10} {path}")
        return EXIT_OK

    def cmd_run(self, scenario_path: str) -> int:
        inputs = load_scenario(scenario_path)
        scenario = inputs.scenario
        params = dict(scenario.parameters)
        if scenario.kind == "network":
            summary, result = self.run_network(
                scenario.solver, inputs.feeder, inputs.fleet, inputs.d, inputs.qd, params
            )
            if scenario.solver == "admm":
                self.display_network(summary, inputs.feeder)
        else:
            tree = params.pop("tree", None)
            summary, result = self.run_network_free(
                scenario.solver, inputs.fleet, inputs.base_load, inputs.cost, params, tree
            )
            self.display_schedule(summary, inputs.fleet)
        summary["provenance"] = scenario.provenance
        return self.finish(summary, result)

    def cmd_schedule(self, solver: str, args) -> int:
        T = _horizon(args.T, args.base_load)
        fleet = load_fleet(args.fleet, T, args.slot_minutes)
        d = load_base_load(args.base_load, T)
        cost = cost_from_name(args.cost, T, args.coeffs)
        if solver == "fw":
            params = {"max_iter": args.max_iter, "eps": args.eps, "gap_tol": args.gap_tol,
                      "step_rule": args.step_rule}
            summary, result = self.run_network_free("fw", fleet, d, cost, params, args.tree)
        else:
            params = {"max_iter": args.max_iter, "step_size": args.step, "tol": args.tol}
            summary, result = self.run_network_free("pgd", fleet, d, cost, params)
        self.display_schedule(summary, fleet)
        return self.finish(summary, result)

    def cmd_solve_network(self, args) -> int:
        feeder = parse_feeder(args.feeder)
        T = _horizon(args.T, args.loads)
        fleet = load_fleet(args.fleet, T, args.slot_minutes)
        d, qd = load_network_loads(args.loads, feeder, T)
        params = {"rho": args.rho, "max_iter": args.max_iter, "tol": args.tol, "stop_rule": args.stop_rule}
        summary, result = self.run_network("admm", feeder, fleet.scaled(1.0 / feeder.base_kva), d, qd, params)
        self.display_network(summary, feeder)
        return self.finish(summary, result)

    def cmd_validate_feeder(self, path: str) -> int:
        try:
            feeder = parse_feeder(path)
        except InputError as e:
            print(f"❌ Invalid feeder: {e}")
            return EXIT_INPUT
        counts = feeder.phase_counts()
        print(f"\n✅ {path}: {feeder.n_buses} buses, {int(feeder.has_gen.sum())} generators")
        print(f"   Phases: a={counts['a']} b={counts['b']} c={counts['c']}")
        print(f"   Base: {feeder.base_kva:g} kVA, feeder capacity {feeder.sf_max:g} p.u.")
        return EXIT_OK

    def cmd_compare(self, scenario_path: str, solvers: Sequence[str]) -> int:
        inputs = load_scenario(scenario_path)
        scenario = inputs.scenario
        allowed = NETWORK_SOLVERS if scenario.kind == "network" else NETWORK_FREE_SOLVERS
        unknown = [s for s in solvers if s not in allowed]
        if unknown:
            raise InputError(
                f"solvers {unknown} do not apply to {scenario.kind} scenarios (choose from {', '.join(allowed)})"
            )

        entries: Dict[str, Dict] = {}
        curves: Dict[str, List[float]] = {}
        for solver in solvers:
            params = dict(scenario.parameters) if solver == scenario.solver else {}
            summary = self._compare_one(inputs, solver, params)
            cost_key = "objective" if scenario.kind == "network" else "cost"
            entries[solver] = {
                "cost": summary[cost_key],
                "iterations": summary["iterations"],
                "converged": summary["converged"],
            }
            curves[solver] = summary["substation_kw"] if scenario.kind == "network" else summary["total_load"]

        report = {
            "scenario": scenario.kind,
            "provenance": scenario.provenance,
            "solvers": entries,
            **cost_comparison({name: entry["cost"] for name, entry in entries.items()}),
        }
        path = self.write_json("compare.json", report, primary=True)
        curves_path = self.write_table("load_curves", load_curves_frame(curves))

        print("\n📊 SOLVER COMPARISON")
        print("=" * 60)
        print(f"{'Solver':<8} {'Cost':>20} {'Iterations':>12} {'Converged':>10}")
        print("-" * 60)
        for name, entry in entries.items():
            print(f"{name:<8} {entry['cost']:>20.10g} {entry['iterations']:>12} {str(entry['converged']):>10}")
        print(f"\nMax relative cost gap: {report['max_relative_gap']:.3e}")
        print(f"💾 Report written to {path}, load curves to {curves_path}")

        if not all(entry["converged"] for entry in entries.values()):
            raise MaxIterExceeded("not every solver converged", result=report)
        return EXIT_OK

    def _compare_one(self, inputs: ScenarioInputs, solver: str, params: Dict) -> Dict:
        if inputs.scenario.kind == "network":
            summary, _ = self.run_network(solver, inputs.feeder, inputs.fleet, inputs.d, inputs.qd, params)
        else:
            tree = params.pop("tree", None)
            summary, _ = self.run_network_free(solver, inputs.fleet, inputs.base_load, inputs.cost, params, tree)
        return summary


class EvschedArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that rejects abbreviations and exits with the input-error code."""

    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _common_flags() -> argparse.ArgumentParser:
    common = EvschedArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="Random seed (default: 0)")
    common.add_argument("--threads", type=int, default=1, help="Worker threads for ADMM EV subproblems")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="Trace and load-curve format")
    common.add_argument("--trace", metavar="FILE", help="Trace file, CSV unless it ends in .json "
                        "(default: trace.<format> next to the result)")
    common.add_argument("--trace-every", type=int, default=1, help="Keep every n-th trace row")
    common.add_argument("--out", "-o", default="results",
                        help="Output directory, or a .json file for the result document (default: results)")
    common.add_argument("--verbose", "-v", action="store_true", help="Debug logging")
    return common


def _horizon_flags(parser: argparse.ArgumentParser, slot_minutes: float, table: str):
    parser.add_argument("--fleet", required=True, help="Fleet JSON file")
    parser.add_argument("--T", type=int, help=f"Number of slots (default: largest t in the {table})")
    parser.add_argument("--slot-minutes", type=float, default=slot_minutes, help="Slot length in minutes")


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = EvschedArgumentParser(description="evsched - decentralized EV charging schedulers")
    sub = parser.add_subparsers(dest="command", parser_class=EvschedArgumentParser)

    gen = sub.add_parser("generate", parents=[common], help="Write a synthetic instance")
    gen.add_argument("kind", choices=INSTANCE_KINDS, help="Instance kind")

    run = sub.add_parser("run", parents=[common], help="Run a scenario file")
    run.add_argument("scenario", help="Scenario JSON written by 'generate'")

    for name, help_text in (("schedule-fw", "Frank-Wolfe schedule"), ("schedule-pgd", "Projected-gradient schedule")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        _horizon_flags(p, 15.0, "base load")
        p.add_argument("--base-load", required=True, help="Base load CSV (t,p_kw)")
        p.add_argument("--cost", default="quadratic",
                       choices=("quadratic", "quadratic-valley", "convex-quadratic", "linear"),
                       help="Slot cost; quadratic and quadratic-valley both mean x^2/2 (default: quadratic)")
        p.add_argument("--coeffs", help="Cost coefficient CSV (t,a,b,c)")
        p.add_argument("--max-iter", type=int, help="Iteration limit")
        if name == "schedule-fw":
            p.add_argument("--eps", type=float, help="Relative cost-change tolerance")
            p.add_argument("--gap-tol", type=float, help="Duality gap tolerance")
            p.add_argument("--step-rule", choices=("open-loop", "line-search"), help="Step size rule")
            p.add_argument("--tree", choices=("none", "star", "chain", "random"), default="none",
                           help="Aggregation tree over the EVs")
        else:
            p.add_argument("--step", type=float, help="Gradient step size")
            p.add_argument("--tol", "--eps", dest="tol", type=float, help="Relative cost-change tolerance")

    net = sub.add_parser("solve-network", parents=[common], help="Network-constrained ADMM schedule")
    _horizon_flags(net, 60.0, "bus loads")
    net.add_argument("--feeder", required=True, help="Feeder JSON file")
    net.add_argument("--load", "--loads", dest="loads", required=True, help="Bus loads CSV (t,bus,phase,p_kw,q_kvar)")
    net.add_argument("--rho", type=float, help="ADMM penalty")
    net.add_argument("--max-iter", type=int, help="Iteration limit")
    net.add_argument("--tol", type=float, help="Residual tolerance per slot and sqrt(bus)")
    net.add_argument("--stop-rule", choices=("standard", "augmented"),
                     help="Primal residual used for stopping. standard (default) is ||Fx+Gz-b||^2; "
                          "augmented adds the scaled multiplier, ||Fx+Gz-b+w||^2, and levels off at "
                          "||w*||^2 when a limit binds, so it may never meet --tol")

    val = sub.add_parser("validate-feeder", parents=[common], help="Check a feeder file")
    val.add_argument("feeder", help="Feeder JSON file")

    cmp_ = sub.add_parser("compare", parents=[common], help="Compare solvers on a scenario")
    cmp_.add_argument("scenario", help="Scenario JSON file")
    cmp_.add_argument("--solvers", default="fw,pgd", help="Comma-separated subset of fw,pgd,oracle,admm")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main CLI entry point"""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_INPUT

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    cli = EvschedCLI(args.out, args.format, args.trace_every, args.threads, args.seed, args.trace)

    try:
        if args.command == "generate":
            return cli.cmd_generate(args.kind)
        if args.command == "run":
            return cli.cmd_run(args.scenario)
        if args.command == "schedule-fw":
            return cli.cmd_schedule("fw", args)
        if args.command == "schedule-pgd":
            return cli.cmd_schedule("pgd", args)
        if args.command == "solve-network":
            return cli.cmd_solve_network(args)
        if args.command == "validate-feeder":
            return cli.cmd_validate_feeder(args.feeder)
        return cli.cmd_compare(args.scenario, [s.strip() for s in args.solvers.split(",") if s.strip()])
    except MaxIterExceeded as e:
        print(f"⚠️  {e}", file=sys.stderr)
        return EXIT_MAX_ITER
    except InputError as e:
        print(f"❌ Input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except EvschedError as e:
        print(f"❌ Solver failure: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
