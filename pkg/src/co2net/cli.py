"""Command line entry point: route, fit-trends, solve, export, report.

Every subcommand takes the run configuration as its only positional argument.
Outputs land in the configured output directory and carry the config hash.

Exit codes: 0 success, 2 usage, 3 invalid input, 4 infeasible or unroutable,
5 solver limit reached, 6 I/O failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .costs import CostModelError, Trend, TrendFit
from .config import ConfigError, load_config
from .economics import regret_report
from .export import write_breakdown_csv, write_geojson, write_report_tables
from .graph import CandidateGraph
from .planning import InfeasibleError, PlanSolution, Planner, SolverLimitError
from .raster import InvalidLayerError, NoRouteError
from .scenarios import ScenarioError
from .solver import ModelError, Status

log = logging.getLogger("co2net")

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_INFEASIBLE, EXIT_LIMIT, EXIT_IO = 0, 2, 3, 4, 5, 6


class UsageError(Exception):
    pass


def _dump(path, doc):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _load_if_current(path, config_hash):
    path = Path(path)
    if not path.is_file():
        return None
    doc = json.loads(path.read_text())
    return doc if doc.get("config_hash") == config_hash else None


class Workspace:
    """Lazily built, file-cached artefacts of one run configuration."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.out = Path(cfg.output)
        self.hash = cfg.hash
        self._raster = self._graph = self._alias = self._scenarios = self._fit = None

    @property
    def raster(self):
        if self._raster is None:
            self._raster = self.cfg.raster()
        return self._raster

    def route(self, force=False):
        path = self.out / "graph.json"
        doc = None if force else _load_if_current(path, self.hash)
        if doc is not None:
            self._graph, self._alias = CandidateGraph.from_dict(doc), doc.get("alias", {})
            return self._graph
        graph, alias = self.cfg.build_graph(self.raster)
        scenarios = self.cfg.scenario_set(graph, alias)
        self.out.mkdir(parents=True, exist_ok=True)
        graph.write_json(path, scenarios, extra={"config_hash": self.hash, "alias": alias})
        self._graph, self._alias = graph, alias
        return graph

    @property
    def graph(self):
        if self._graph is None:
            self.route()
        return self._graph

    @property
    def scenarios(self):
        if self._scenarios is None:
            self._scenarios = self.cfg.scenario_set(self.graph, self._alias)
        return self._scenarios

    def fit_trends(self, force=False) -> TrendFit:
        path = self.out / "trends.json"
        doc = None if force else _load_if_current(path, self.hash)
        if doc is not None:
            self._fit = TrendFit([Trend.from_dict(t) for t in doc["trends"]], doc["max_rel_error"], doc["tol"])
            return self._fit
        fit = self.cfg.trend_fit(self.cfg.scenario_set())
        if not fit.tol_met:
            log.warning("trend fit misses tol %.4f (max relative error %.4f)", fit.tol, fit.max_rel_error)
        _dump(path, {"config_hash": self.hash, "trends": [t.to_dict() for t in fit],
                     "max_rel_error": fit.max_rel_error, "tol": fit.tol})
        with open(self.out / "trends.csv", "w", newline="") as fh:
            fh.write(f"# config_hash={self.hash}\n")
            w = csv.writer(fh)
            w.writerow(["trend", "slope_eur_per_mta_km", "intercept_eur_per_km", "q_min_mta", "q_max_mta"])
            for t in fit:
                w.writerow([t.index, f"{t.slope:.6f}", f"{t.intercept:.6f}", f"{t.q_min:.9f}", f"{t.q_max:.9f}"])
        self._fit = fit
        return fit

    @property
    def trends(self):
        if self._fit is None:
            self.fit_trends()
        return list(self._fit)

    def planner(self) -> Planner:
        return Planner(self.graph, self.trends, self.scenarios, self.cfg.horizon, self.cfg.solver,
                       relaxed_coupling=self.cfg.relaxed_coupling, om_no_overlap=self.cfg.om_no_overlap)

    # -- plans -----------------------------------------------------------------

    def plan_path(self, model, scenario=None) -> Path:
        name = model if scenario is None else f"{model}_{scenario}"
        return self.out / "plans" / f"{name}.json"

    def save_plan(self, plan, scenario=None):
        path = self.plan_path(plan.model, scenario)
        path.parent.mkdir(parents=True, exist_ok=True)
        plan.write_json(path, extra={"config_hash": self.hash})
        return path

    def load_plan(self, model, scenario=None):
        doc = _load_if_current(self.plan_path(model, scenario), self.hash)
        return None if doc is None else PlanSolution.from_dict(doc)

    def best_known(self, planner=None):
        """B_s for every scenario, cached beside the run."""
        path = self.out / "best_known.json"
        doc = _load_if_current(path, self.hash)
        if doc is not None and set(doc["values"]) == set(self.scenarios.ids):
            log.info("using cached best-known values from %s", path)
            return {s: doc["values"][s] for s in self.scenarios.ids}
        planner = planner or self.planner()
        ids = self.scenarios.ids
        plans = planner.solve_m1_batch(ids, self.cfg.workers)
        for s, plan in zip(ids, plans):
            self.save_plan(plan, s)
        values = {s: p.total(s) for s, p in zip(ids, plans)}
        _dump(path, {"config_hash": self.hash, "values": values})
        return values


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_route(ws: Workspace, args) -> int:
    graph = ws.route(force=True)
    kinds = [n.kind for n in graph.nodes.values()]
    print(f"config_hash,{ws.hash}")
    print("nodes,emitters,sinks,transport,arcs,total_length_km")
    print(f"{len(kinds)},{kinds.count('emitter')},{kinds.count('sink')},{kinds.count('transport')},"
          f"{len(graph.arcs)},{graph.total_length():.6f}")
    print(f"graph written to {ws.out / 'graph.json'}", file=sys.stderr)
    return EXIT_OK


def cmd_fit_trends(ws: Workspace, args) -> int:
    fit = ws.fit_trends(force=True)
    if not args.no_plots:
        from .plotting import plot_cost_curve
        flow_max = max(t.q_max for t in fit)
        plot_cost_curve(fit, ws.cfg.hydraulics, ws.cfg.costs, flow_max, ws.out / "cost_curve.png", ws.hash)
    print("trend,slope,intercept,q_min,q_max")
    for t in fit:
        print(f"{t.index},{t.slope:.6f},{t.intercept:.6f},{t.q_min:.6f},{t.q_max:.6f}")
    print(f"max_rel_error,{fit.max_rel_error:.6f},tol,{fit.tol:.6f},met,{fit.tol_met}")
    return EXIT_OK


def _scenario_ids(ws, selector):
    if selector in (None, "all"):
        return ws.scenarios.ids
    ids = [s.strip() for s in selector.split(",")]
    for s in ids:
        if s not in ws.scenarios:
            raise ScenarioError(f"unknown scenario {s!r}")
    return ids


def _status_code(plans):
    return EXIT_LIMIT if any(p.status == Status.TIME_LIMIT.value for p in plans) else EXIT_OK


def _solve(ws, model, selector):
    planner = ws.planner()
    plans = []
    if model == "m1":
        for s in _scenario_ids(ws, selector):
            plan = planner.solve_m1(s)
            ws.save_plan(plan, s)
            plans.append(plan)
    elif model == "m2":
        step1 = planner.solve_m2_step1()
        ws.save_plan(step1)
        for s in _scenario_ids(ws, selector):
            plan = planner.solve_m2(s, step1)
            ws.save_plan(plan, s)
            plans.append(plan)
    else:
        best = ws.best_known(planner)
        start = None
        if best:
            worst = max(best, key=lambda s: (best[s], s))
            start = ws.load_plan("m1", worst)
        plan = planner.solve_min_max_regret(best, start=start)
        ws.save_plan(plan)
        plans.append(plan)
    return plans


def cmd_solve(ws: Workspace, args) -> int:
    if args.write_lp:
        planner = ws.planner()
        if args.model == "m1":
            pm = planner.build_m1(_scenario_ids(ws, args.scenario)[0])
        elif args.model == "regret":
            pm = planner.build_regret(ws.best_known(planner))
        else:
            raise UsageError("--write-lp supports m1 and regret")
        pm.model.write_lp(args.write_lp)
    plans = _solve(ws, args.model, args.scenario)
    breakdown = {}
    for p in plans:
        breakdown.update(p.breakdown)
    write_breakdown_csv(ws.out / f"breakdown_{args.model}.csv", breakdown, ws.hash)
    print(f"config_hash,{ws.hash}")
    print("model,scenario,total_mio_eur,status,gap")
    for p in plans:
        for s in p.scenarios:
            print(f"{args.model},{s},{p.total(s) / 1e6:.6f},{p.status},{p.gap if p.gap is not None else ''}")
    if args.model == "regret":
        p = plans[0]
        print(f"regret_x_mio_eur,{p.regret / 1e6:.6f}")
    code = _status_code(plans)
    if code == EXIT_LIMIT:
        print("solver limit reached; incumbent written with its gap", file=sys.stderr)
    return code


def _resolve_plan(ws, args):
    if args.plan:
        path = Path(args.plan)
        return PlanSolution.read_json(path), path.stem
    plan = ws.load_plan(args.model, args.scenario if args.model != "regret" else None)
    if plan is None:
        raise FileNotFoundError(f"no current {args.model} plan in {ws.out / 'plans'}; run solve first")
    stem = args.model if args.model == "regret" else f"{args.model}_{args.scenario}"
    return plan, stem


def _report_from_files(ws):
    values = {}
    regret = ws.load_plan("regret")
    for s in ws.scenarios.ids:
        m1, m2 = ws.load_plan("m1", s), ws.load_plan("m2", s)
        if m1 is None or m2 is None or regret is None:
            return None
        values[s] = (m1.total(s), m2.total(s), regret.total(s))
    return regret_report(values)


def cmd_export(ws: Workspace, args) -> int:
    if args.model in ("m1", "m2") and not args.plan and not args.scenario:
        raise UsageError("--scenario is required for m1/m2 plans")
    plan, stem = _resolve_plan(ws, args)
    out = Path(args.dest) if args.dest else ws.out / "export"
    out.mkdir(parents=True, exist_ok=True)
    if args.format == "geojson":
        paths = write_geojson(ws.graph, plan, out, stem, ws.hash)
    else:
        paths = [out / f"{stem}_breakdown.csv"]
        write_breakdown_csv(paths[0], plan.breakdown, ws.hash)
        report = _report_from_files(ws)
        if report is not None:
            paths += list(write_report_tables(report, out, ws.hash))
    for p in paths:
        print(p)
    return EXIT_OK


def cmd_report(ws: Workspace, args) -> int:
    planner = ws.planner()
    ids = ws.scenarios.ids
    best = ws.best_known(planner)
    m1 = {s: ws.load_plan("m1", s) or planner.solve_m1(s) for s in ids}
    step1 = planner.solve_m2_step1()
    m2 = {}
    for s in ids:
        m2[s] = planner.solve_m2(s, step1)
        ws.save_plan(m2[s], s)
    worst = max(best, key=lambda s: (best[s], s))
    regret = planner.solve_min_max_regret(best, start=m1[worst])
    ws.save_plan(regret)
    report = regret_report({s: (m1[s].total(s), m2[s].total(s), regret.total(s)) for s in ids})
    totals, table = write_report_tables(report, ws.out, ws.hash)
    write_breakdown_csv(ws.out / "breakdown_regret.csv", regret.breakdown, ws.hash)
    write_geojson(ws.graph, regret, ws.out / "export", "regret", ws.hash)
    if not args.no_plots:
        from .plotting import plot_cost_curve, plot_network, plot_regret
        fig_dir = ws.out / "figures"
        fig_dir.mkdir(parents=True, exist_ok=True)
        flow_max = max(t.q_max for t in ws.trends)
        plot_cost_curve(ws._fit, ws.cfg.hydraulics, ws.cfg.costs, flow_max, fig_dir / "cost_curve.png", ws.hash)
        plot_network(ws.graph, fig_dir / "network_regret_t0.png", ws.raster, regret, None, ws.hash,
                     "regret plan, period 0")
        for s in ids:
            plot_network(ws.graph, fig_dir / f"network_regret_t1_{s}.png", ws.raster, regret, s, ws.hash,
                         f"regret plan, period 1, {s}")
        plot_regret(report, fig_dir / "regret.png", config_hash=ws.hash)
    print(f"config_hash,{ws.hash}")
    for path in (totals, table):
        for line in path.read_text().splitlines():
            if not line.startswith("#"):
                print(line)
    print(f"system_regret_mio_eur,{report.system_regret / 1e6:.3f}")
    return _status_code(list(m1.values()) + list(m2.values()) + [regret])


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="co2net", description="Two-period CO2 pipeline network planning.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="run configuration (YAML)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a configuration entry, e.g. solver.backend=scip")
        p.add_argument("--output", help="output directory (overrides the configuration)")
        return p

    common(sub.add_parser("route", help="rasterise, route and contract the candidate graph"))
    p = common(sub.add_parser("fit-trends", help="fit the piecewise-linear cost trends"))
    p.add_argument("--no-plots", action="store_true")
    p = common(sub.add_parser("solve", help="solve m1, m2 or the min-max regret model"))
    p.add_argument("--model", choices=("m1", "m2", "regret"), required=True)
    p.add_argument("--scenario", help="scenario id(s), comma separated, or 'all' (m1/m2)")
    p.add_argument("--write-lp", metavar="PATH", help="also write the model in LP format")
    p = common(sub.add_parser("export", help="export a solved plan"))
    p.add_argument("--format", choices=("geojson", "csv"), required=True)
    p.add_argument("--model", choices=("m1", "m2", "regret"), default="regret")
    p.add_argument("--scenario")
    p.add_argument("--plan", help="plan file (defaults to the current plan of --model)")
    p.add_argument("--dest", help="destination directory (default <output>/export)")
    p = common(sub.add_parser("report", help="solve all models and write tables and figures"))
    p.add_argument("--no-plots", action="store_true")
    return parser


COMMANDS = {"route": cmd_route, "fit-trends": cmd_fit_trends, "solve": cmd_solve, "export": cmd_export,
            "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.overrides, args.output)
        return COMMANDS[args.command](Workspace(cfg), args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"co2net: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NoRouteError as exc:
        print(f"co2net: unroutable: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except InfeasibleError as exc:
        sid = f" (scenario {exc.scenario})" if exc.scenario else ""
        print(f"co2net: infeasible{sid}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverLimitError as exc:
        print(f"co2net: solver limit: {exc}", file=sys.stderr)
        return EXIT_LIMIT
    except (ConfigError, ScenarioError, InvalidLayerError, CostModelError, ModelError, ValueError, KeyError) as exc:
        print(f"co2net: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"co2net: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
