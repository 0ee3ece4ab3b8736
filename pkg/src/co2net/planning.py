"""Two-period pipeline network design: perfect information (M1), successive
information (M2) and min-max regret over period-1 scenarios.

Node balance convention: for every node, outflow - inflow >= demand, where
emitters have positive demand and sinks negative (capacity). Nodes with zero
demand in a period (transport nodes, absent emitters) must balance exactly.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .economics import CostBreakdown, investment_cost, om_factor, period1_om_years
from .scenarios import HorizonParams, ScenarioSet
from .solver import LinExpr, Model, ModelError, SolverOptions, Status, quicksum, solve

log = logging.getLogger(__name__)

# model objectives are in Mio EUR to keep coefficients moderate
OBJ_SCALE = 1e-6

UPGRADE_NAMES = {1: "looping", 2: "pressure_increase"}


class PlanningError(RuntimeError):
    pass


class InfeasibleError(PlanningError):
    def __init__(self, message, scenario=None):
        super().__init__(message)
        self.scenario = scenario


class RecourseInfeasibleError(InfeasibleError):
    """Period-1 demand cannot be served on top of a frozen first stage."""


class SolverLimitError(PlanningError):
    pass


# ---------------------------------------------------------------------------
# decisions and solutions
# ---------------------------------------------------------------------------

@dataclass
class ArcRecourse:
    option: int  # 1 = looping / new line, 2 = pressure increase
    trend: int | None  # trend of the period-1 build, if any
    new_flow: float
    total_flow: float
    restructure: float

    @property
    def label(self) -> str:
        if self.option == 2:
            return "pressure_increase"
        return "looping" if self.trend is not None else "none"


@dataclass
class PlanSolution:
    model: str
    scenarios: list[str]
    first_stage: dict  # arc -> (trend, flow)
    second_stage: dict  # scenario -> {arc -> ArcRecourse}
    breakdown: dict  # scenario -> CostBreakdown
    objective: float | None = None
    regret: float | None = None
    status: str = Status.OPTIMAL.value
    gap: float | None = None
    backend: str = ""
    graph_signature: str = ""
    n_trends: int = 0
    extra: dict = field(default_factory=dict)

    def is_empty(self) -> bool:
        return not self.first_stage and not any(self.second_stage.values())

    def total(self, scenario) -> float:
        return self.breakdown[scenario].total

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "scenarios": list(self.scenarios),
            "status": self.status,
            "gap": self.gap,
            "backend": self.backend,
            "objective": self.objective,
            "regret": self.regret,
            "graph_signature": self.graph_signature,
            "n_trends": self.n_trends,
            "first_stage": [{"i": a[0], "j": a[1], "trend": c, "flow": q}
                            for a, (c, q) in sorted(self.first_stage.items())],
            "second_stage": {
                s: [{"i": a[0], "j": a[1], "option": r.option, "trend": r.trend, "new_flow": r.new_flow,
                     "total_flow": r.total_flow, "restructure": r.restructure, "upgrade_op": r.label}
                    for a, r in sorted(rec.items())]
                for s, rec in self.second_stage.items()},
            "breakdown": {s: b.to_dict() for s, b in self.breakdown.items()},
            "extra": self.extra,
        }

    @classmethod
    def from_dict(cls, d) -> "PlanSolution":
        first = {(e["i"], e["j"]): (int(e["trend"]), float(e["flow"])) for e in d["first_stage"]}
        second = {s: {(e["i"], e["j"]): ArcRecourse(int(e["option"]), e["trend"], float(e["new_flow"]),
                                                   float(e["total_flow"]), float(e["restructure"]))
                      for e in rec}
                  for s, rec in d["second_stage"].items()}
        bd = {}
        for s, b in d["breakdown"].items():
            b = dict(b)
            b.pop("regret", None)
            bd[s] = CostBreakdown(**b)
        return cls(d["model"], list(d["scenarios"]), first, second, bd, d.get("objective"), d.get("regret"),
                   d.get("status", "OPTIMAL"), d.get("gap"), d.get("backend", ""), d.get("graph_signature", ""),
                   int(d.get("n_trends", 0)), d.get("extra", {}))

    def write_json(self, path, extra=None) -> None:
        doc = self.to_dict()
        if extra:
            doc.update(extra)
        Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")

    @classmethod
    def read_json(cls, path) -> "PlanSolution":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# model construction
# ---------------------------------------------------------------------------

@dataclass
class FirstStage:
    b: dict  # (arc, c) -> Var
    p: dict
    arc_capex: dict  # arc -> LinExpr (EUR)
    capex: LinExpr  # I0 (EUR)


@dataclass
class SecondStage:
    u1: dict  # arc -> Var
    u2: dict
    b: dict  # (arc, c) -> Var
    p: dict
    f: dict  # arc -> Var
    r: dict
    capex: LinExpr  # I1_s (EUR)
    restructure: LinExpr  # R_s (EUR)


def _balance(model, graph, flow_of, demand, label):
    """outflow - inflow >= d per node; equality where d == 0."""
    out_arcs = {n: [] for n in graph.nodes}
    in_arcs = {n: [] for n in graph.nodes}
    for a in graph.arcs:
        out_arcs[a.i].append(a.key)
        in_arcs[a.j].append(a.key)
    for n in graph.nodes:
        expr = quicksum(flow_of(k) for k in out_arcs[n]) - quicksum(flow_of(k) for k in in_arcs[n])
        d = demand(n)
        model.add_constr(expr, "==" if d == 0 else ">=", d, name=f"bal_{label}[{n}]")


def build_first_stage(model: Model, graph, trends, demand0) -> FirstStage:
    """Period-0 design variables, trend windows and node balances.

    ``demand0`` maps node -> first-stage demand (missing nodes have zero).
    """
    b, p, arc_capex = {}, {}, {}
    for a in graph.arcs:
        k = a.key
        for t in trends:
            c = t.index
            b[k, c] = model.add_var(f"b[{a.i},{a.j},{c}]", binary=True)
            p[k, c] = model.add_var(f"p[{a.i},{a.j},{c}]", 0.0, t.q_max)
            model.add_constr(p[k, c] - t.q_min * b[k, c], ">=", 0, name=f"qmin[{a.i},{a.j},{c}]")
            model.add_constr(p[k, c] - t.q_max * b[k, c], "<=", 0, name=f"qmax[{a.i},{a.j},{c}]")
        model.add_constr(quicksum(b[k, t.index] for t in trends), "<=", 1, name=f"one[{a.i},{a.j}]")
        arc_capex[k] = quicksum((t.slope * p[k, t.index] + t.intercept * b[k, t.index]) * a.length
                                for t in trends)
    _balance(model, graph, lambda k: quicksum(p[k, t.index] for t in trends),
             lambda n: demand0.get(n, 0.0), "t0")
    return FirstStage(b, p, arc_capex, quicksum(arc_capex.values()))


def build_second_stage(model: Model, graph, trends, scenarios: ScenarioSet, horizon: HorizonParams,
                       first: FirstStage, scenario_ids=None, relaxed_coupling=False) -> dict:
    """Per-scenario upgrade choice, new builds, total flows and restructuring.

    With ``relaxed_coupling`` the selected option bounds the total flow from
    above instead of pinning it.
    """
    ids = list(scenario_ids if scenario_ids is not None else scenarios.ids)
    q_top = max(t.q_max for t in trends)
    f_ub = max(2 * q_top, horizon.o2_max * q_top)
    coupling = "<=" if relaxed_coupling else "=="
    out = {}
    for s in ids:
        u1, u2, bs, ps, f, r = {}, {}, {}, {}, {}, {}
        for a in graph.arcs:
            k = a.key
            tag = f"{a.i},{a.j},{s}"
            u1[k] = model.add_var(f"u1[{tag}]", binary=True)
            u2[k] = model.add_var(f"u2[{tag}]", binary=True)
            model.add_constr(u1[k] + u2[k], "==", 1, name=f"opt[{tag}]")
            for t in trends:
                c = t.index
                bs[k, c] = model.add_var(f"bs[{tag},{c}]", binary=True)
                ps[k, c] = model.add_var(f"ps[{tag},{c}]", 0.0, t.q_max)
                model.add_constr(ps[k, c] - t.q_min * bs[k, c], ">=", 0, name=f"qmin1[{tag},{c}]")
                model.add_constr(ps[k, c] - t.q_max * bs[k, c], "<=", 0, name=f"qmax1[{tag},{c}]")
            model.add_constr(quicksum(bs[k, t.index] for t in trends), "<=", 1, name=f"one1[{tag}]")
            f[k] = model.add_var(f"f[{tag}]", 0.0, f_ub)
            r_ub = horizon.o2_cost * max(t.slope * t.q_max + t.intercept for t in trends) * a.length
            r[k] = model.add_var(f"r[{tag}]", 0.0, r_ub)
            base = quicksum(first.p[k, t.index] for t in trends)
            model.add_indicator(u1[k], f[k] - base - quicksum(ps[k, t.index] for t in trends), coupling, 0,
                                name=f"loop[{tag}]")
            model.add_indicator(u2[k], f[k] - horizon.o2_max * base, coupling, 0, name=f"press[{tag}]")
            model.add_indicator(u2[k], r[k] - horizon.o2_cost * first.arc_capex[k], "==", 0,
                                name=f"restr[{tag}]")
        _balance(model, graph, lambda k, f=f: f[k], lambda n, s=s: scenarios.demand1(s, n), f"t1_{s}")
        capex = quicksum((t.slope * ps[a.key, t.index] + t.intercept * bs[a.key, t.index]) * a.length
                         for a in graph.arcs for t in trends)
        out[s] = SecondStage(u1, u2, bs, ps, f, r, capex, quicksum(r.values()))
    return out


def cost_weights(horizon: HorizonParams, om_no_overlap=False):
    """Coefficients of I0, I1_s and R_s in a scenario's total cost."""
    a0 = horizon.om * om_factor(horizon.tau, 1, horizon.n1)
    a1 = horizon.om * om_factor(horizon.tau, *period1_om_years(horizon, om_no_overlap))
    return 1.0 + a0 + a1, horizon.proration + a1, 1.0 + a1


class PlanningModel:
    """A built MILP together with handles to its decision variables."""

    def __init__(self, kind, graph, trends, scenarios, horizon, scenario_ids, *, first_stage_only=False,
                 relaxed_coupling=False, om_no_overlap=False, name=None):
        self.kind = kind
        self.graph = graph
        self.trends = list(trends)
        self.horizon = horizon
        self.scenario_ids = list(scenario_ids)
        self.om_no_overlap = om_no_overlap
        self.model = Model(name or kind)
        self.first = build_first_stage(self.model, graph, self.trends, scenarios.t0)
        self.second = {} if first_stage_only else build_second_stage(
            self.model, graph, self.trends, scenarios, horizon, self.first, self.scenario_ids, relaxed_coupling)
        self.x = None

    @property
    def graph_signature(self):
        return self.graph.signature()

    def total_expr(self, s) -> LinExpr:
        w0, w1, wr = cost_weights(self.horizon, self.om_no_overlap)
        st = self.second[s]
        return w0 * self.first.capex + w1 * st.capex + wr * st.restructure

    def fix_first_stage(self, first_stage: dict) -> None:
        """Freeze b and p to a given design (period-0 balances are dropped)."""
        for (k, c), var in self.first.b.items():
            built = first_stage.get(k)
            self.model.fix(var, 1.0 if built is not None and built[0] == c else 0.0)
        for (k, c), var in self.first.p.items():
            built = first_stage.get(k)
            self.model.fix(var, built[1] if built is not None and built[0] == c else 0.0)
        self.model.constraints = [c for c in self.model.constraints if not c.name.startswith("bal_t0[")]

    def decode(self, result):
        x = result.values
        first = {}
        for a in self.graph.arcs:
            k = a.key
            for t in self.trends:
                if x[self.first.b[k, t.index].index] > 0.5:
                    first[k] = (t.index, _clean(x[self.first.p[k, t.index].index], t))
        second = {}
        for s, st in self.second.items():
            rec = {}
            for a in self.graph.arcs:
                k = a.key
                # pressure increase on an unbuilt arc changes nothing
                option = 2 if x[st.u2[k].index] > 0.5 and k in first else 1
                trend, new_flow = None, 0.0
                for t in self.trends:
                    if x[st.b[k, t.index].index] > 0.5:
                        trend, new_flow = t.index, _clean(x[st.p[k, t.index].index], t)
                total = max(0.0, float(x[st.f[k].index]))
                restructure = max(0.0, float(x[st.r[k].index])) if option == 2 else 0.0
                if option == 2 or trend is not None or total > 1e-9:
                    rec[k] = ArcRecourse(option, trend, new_flow, total, restructure)
            second[s] = rec
        return first, second


def _clean(value, trend):
    return float(min(max(value, trend.q_min), trend.q_max))


def recompute_breakdown(graph, trends, horizon, first_stage, recourse, om_no_overlap=False, best=None):
    """Cost components from raw decisions, independent of the solver's objective."""
    lengths = {a.key: a.length for a in graph.arcs}
    by_index = {t.index: t for t in trends}
    i0 = investment_cost(first_stage, by_index, lengths)
    new = {k: (r.trend, r.new_flow) for k, r in recourse.items() if r.trend is not None}
    i1 = investment_cost(new, by_index, lengths)
    r_total = 0.0
    for k, rec in recourse.items():
        if rec.option == 2 and k in first_stage:
            r_total += horizon.o2_cost * investment_cost({k: first_stage[k]}, by_index, lengths)
    return CostBreakdown.compute(i0, i1, r_total, horizon, om_no_overlap, best)


def warm_start(plan: PlanSolution | None, pm: PlanningModel) -> None:
    """Hint ``plan`` as the incumbent of ``pm``; ignored by backends without warm start."""
    if plan is None or plan.is_empty():
        return
    if plan.graph_signature and plan.graph_signature != pm.graph_signature:
        raise ModelError("warm-start plan was computed on a different candidate graph")
    if plan.n_trends and plan.n_trends != len(pm.trends):
        raise ModelError("warm-start plan uses a different trend table")
    arc_keys = set(pm.graph.arc_keys)
    unknown = [k for k in plan.first_stage if k not in arc_keys]
    if unknown:
        raise ModelError(f"warm-start plan references unknown arcs {unknown[:3]}")
    hint = {}
    for (k, c), var in pm.first.b.items():
        built = plan.first_stage.get(k)
        on = built is not None and built[0] == c
        hint[var] = 1.0 if on else 0.0
        hint[pm.first.p[k, c]] = built[1] if on else 0.0
    for s, st in pm.second.items():
        rec = plan.second_stage.get(s)
        if rec is None:
            continue
        for k in st.u1:
            r = rec.get(k)
            option = r.option if r else 1
            hint[st.u1[k]] = 1.0 if option == 1 else 0.0
            hint[st.u2[k]] = 1.0 if option == 2 else 0.0
            hint[st.f[k]] = r.total_flow if r else 0.0
            hint[st.r[k]] = r.restructure if r else 0.0
            for t in pm.trends:
                on = r is not None and r.trend == t.index
                hint[st.b[k, t.index]] = 1.0 if on else 0.0
                hint[st.p[k, t.index]] = r.new_flow if on else 0.0
    if pm.x is not None and plan.regret is not None:
        hint[pm.x] = plan.regret * OBJ_SCALE
    pm.model.set_start(hint)


# ---------------------------------------------------------------------------
# solving
# ---------------------------------------------------------------------------

class Planner:
    """Solves M1, M2 and the min-max regret model on one graph and trend table."""

    def __init__(self, graph, trends, scenarios: ScenarioSet, horizon: HorizonParams = HorizonParams(),
                 options: SolverOptions | None = None, relaxed_coupling=False, om_no_overlap=False):
        self.graph = graph
        self.trends = list(trends)
        self.scenarios = scenarios
        self.horizon = horizon
        self.options = options or SolverOptions()
        self.relaxed_coupling = relaxed_coupling
        self.om_no_overlap = om_no_overlap

    def _model(self, kind, scenario_ids, **kw):
        return PlanningModel(kind, self.graph, self.trends, self.scenarios, self.horizon, scenario_ids,
                             relaxed_coupling=self.relaxed_coupling, om_no_overlap=self.om_no_overlap, **kw)

    def _run(self, pm, scenario=None):
        result = solve(pm.model, self.options)
        if result.status == Status.INFEASIBLE:
            raise InfeasibleError(f"{pm.kind}: model infeasible" + (f" for scenario {scenario}" if scenario else ""),
                                  scenario)
        if not result.has_solution:
            raise SolverLimitError(f"{pm.kind}: no incumbent ({result.status.value})")
        return result

    def _plan(self, kind, pm, result, scenario_ids, best=None, **extra):
        first, second = pm.decode(result)
        bd = {s: recompute_breakdown(self.graph, self.trends, self.horizon, first, second[s],
                                     self.om_no_overlap, (best or {}).get(s))
              for s in scenario_ids}
        return PlanSolution(kind, list(scenario_ids), first, second, bd,
                            objective=result.objective / OBJ_SCALE if result.objective is not None else None,
                            status=result.status.value, gap=result.gap, backend=result.backend,
                            graph_signature=self.graph.signature(), n_trends=len(self.trends), extra=dict(extra))

    # -- M1 ----------------------------------------------------------------

    def build_m1(self, s2) -> PlanningModel:
        pm = self._model("m1", [s2], name=f"m1_{s2}")
        pm.model.minimize(OBJ_SCALE * pm.total_expr(s2))
        return pm

    def solve_m1(self, s2) -> PlanSolution:
        """Coupled two-period optimum knowing that ``s2`` follows the initial scenario."""
        if s2 not in self.scenarios:
            raise ModelError(f"unknown scenario {s2!r}")
        pm = self.build_m1(s2)
        result = self._run(pm, s2)
        return self._plan("m1", pm, result, [s2])

    def solve_m1_batch(self, scenario_ids=None, workers=1) -> list[PlanSolution]:
        """Independent M1 solves, one model per worker."""
        ids = list(scenario_ids or self.scenarios.ids)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(self.solve_m1, ids))
        return [self.solve_m1(s) for s in ids]

    def best_known(self, scenario_ids=None, workers=1) -> dict:
        """z_M1 for every scenario, used as the regret reference B_s."""
        ids = list(scenario_ids or self.scenarios.ids)
        return {s: p.total(s) for s, p in zip(ids, self.solve_m1_batch(ids, workers))}

    # -- M2 ----------------------------------------------------------------

    def solve_m2_step1(self) -> PlanSolution:
        """Cheapest period-0 network for the initial scenario (investment only)."""
        pm = self._model("m2", [], first_stage_only=True, name="m2_t0")
        pm.model.minimize(OBJ_SCALE * pm.first.capex)
        result = self._run(pm, self.scenarios.initial)
        first, _ = pm.decode(result)
        return PlanSolution("m2_t0", [], first, {}, {}, objective=result.objective / OBJ_SCALE,
                            status=result.status.value, gap=result.gap, backend=result.backend,
                            graph_signature=self.graph.signature(), n_trends=len(self.trends))

    def recourse(self, first_stage: dict, scenario, best=None):
        """Optimal period-1 reaction to ``scenario`` with the first stage frozen."""
        pm = self._model("recourse", [scenario], name=f"recourse_{scenario}")
        pm.fix_first_stage(first_stage)
        pm.model.minimize(OBJ_SCALE * pm.total_expr(scenario))
        result = solve(pm.model, self.options)
        if result.status == Status.INFEASIBLE:
            raise RecourseInfeasibleError(f"scenario {scenario} cannot be served on the frozen first stage",
                                          scenario)
        if not result.has_solution:
            raise SolverLimitError(f"recourse for {scenario}: no incumbent ({result.status.value})")
        _, second = pm.decode(result)
        bd = recompute_breakdown(self.graph, self.trends, self.horizon, first_stage, second[scenario],
                                 self.om_no_overlap, best)
        return second[scenario], bd, result

    def solve_m2(self, s2, step1: PlanSolution | None = None) -> PlanSolution:
        """Build for the initial scenario, then react optimally once ``s2`` is known."""
        if s2 not in self.scenarios:
            raise ModelError(f"unknown scenario {s2!r}")
        step1 = step1 or self.solve_m2_step1()
        rec, bd, result = self.recourse(step1.first_stage, s2)
        w0, _, _ = cost_weights(self.horizon, self.om_no_overlap)
        z_t1 = bd.total - bd.i0 - bd.o0
        return PlanSolution("m2", [s2], dict(step1.first_stage), {s2: rec}, {s2: bd}, objective=bd.total,
                            status=result.status.value, gap=result.gap, backend=result.backend,
                            graph_signature=self.graph.signature(), n_trends=len(self.trends),
                            extra={"z_t0": step1.objective, "z_t1": z_t1})

    # -- regret ------------------------------------------------------------

    def build_regret(self, best: dict) -> PlanningModel:
        ids = self.scenarios.ids
        missing = [s for s in ids if s not in best]
        if missing:
            raise ModelError(f"missing best-known values B_s for {missing}")
        pm = self._model("regret", ids, name="regret")
        x = pm.model.add_var("x", 0.0)
        pm.x = x
        for s in ids:
            pm.model.add_constr(OBJ_SCALE * pm.total_expr(s) - x, "<=", OBJ_SCALE * best[s], name=f"regret[{s}]")
        pm.model.minimize(x)
        return pm

    def complete(self, first_stage: dict, best: dict | None = None) -> PlanSolution:
        """Evaluate a first stage against every scenario with optimal recourse."""
        ids = self.scenarios.ids
        second, bd = {}, {}
        for s in ids:
            second[s], bd[s], _ = self.recourse(first_stage, s, (best or {}).get(s))
        regret = None
        if best is not None:
            regret = max(0.0, max(bd[s].total - best[s] for s in ids))
        return PlanSolution("regret", ids, dict(first_stage), second, bd, objective=regret, regret=regret,
                            graph_signature=self.graph.signature(), n_trends=len(self.trends))

    def solve_min_max_regret(self, best: dict, start: PlanSolution | None = None) -> PlanSolution:
        """First stage minimising the worst regret over all scenarios.

        ``start`` (for example an M1 plan) is completed with optimal recourse for
        every scenario and passed to the backend as incumbent hint. Per-scenario
        costs of the returned plan come from re-optimising each scenario's
        recourse on the chosen first stage.
        """
        pm = self.build_regret(best)
        if start is not None and not start.is_empty():
            try:
                hint = self.complete(start.first_stage, best)
            except RecourseInfeasibleError:
                hint = start
            warm_start(hint, pm)
        result = self._run(pm)
        first, _ = pm.decode(result)
        polished = self.complete(first, best)
        x = result.objective / OBJ_SCALE
        return PlanSolution("regret", self.scenarios.ids, first, polished.second_stage, polished.breakdown,
                            objective=x, regret=x, status=result.status.value, gap=result.gap,
                            backend=result.backend, graph_signature=self.graph.signature(),
                            n_trends=len(self.trends),
                            extra={"best_known": dict(best), "polished_regret": polished.regret})
