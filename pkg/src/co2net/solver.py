"""A small MILP modelling layer with interchangeable solver backends.

Models are built once, independent of the backend. Indicator constraints are
passed natively to backends that support them and otherwise rewritten into
bounded big-M pairs by :func:`linearize_indicator`.
"""

from __future__ import annotations

import enum
import logging
import math
import os
import re
import sys
import time
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

INF = math.inf

BACKEND_PATH_ENV = "CO2NET_BACKEND_PATH"


class ModelError(ValueError):
    pass


class UnboundedIndicatorError(ModelError):
    pass


class Status(str, enum.Enum):
    OPTIMAL = "OPTIMAL"
    FEASIBLE = "FEASIBLE"
    INFEASIBLE = "INFEASIBLE"
    TIME_LIMIT = "TIME_LIMIT"
    ERROR = "ERROR"


class Var:
    __slots__ = ("index", "name", "lb", "ub", "integer")

    def __init__(self, index, name, lb, ub, integer):
        self.index, self.name, self.lb, self.ub, self.integer = index, name, lb, ub, integer

    def __repr__(self):
        return f"Var({self.name})"

    def _expr(self):
        return LinExpr({self.index: 1.0})

    def __add__(self, other):
        return self._expr() + other

    __radd__ = __add__

    def __sub__(self, other):
        return self._expr() - other

    def __rsub__(self, other):
        return (-1.0) * self._expr() + other

    def __mul__(self, k):
        return self._expr() * k

    __rmul__ = __mul__

    def __neg__(self):
        return self._expr() * -1.0


class LinExpr:
    __slots__ = ("terms", "const")

    def __init__(self, terms=None, const=0.0):
        self.terms = dict(terms or {})
        self.const = float(const)

    def copy(self):
        return LinExpr(self.terms, self.const)

    def add_term(self, var, coef):
        if coef:
            self.terms[var.index] = self.terms.get(var.index, 0.0) + coef
        return self

    def __iadd__(self, other):
        if isinstance(other, LinExpr):
            for k, v in other.terms.items():
                self.terms[k] = self.terms.get(k, 0.0) + v
            self.const += other.const
        elif isinstance(other, Var):
            self.terms[other.index] = self.terms.get(other.index, 0.0) + 1.0
        else:
            self.const += float(other)
        return self

    def __add__(self, other):
        out = self.copy()
        out += other
        return out

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-1.0) * other

    def __rsub__(self, other):
        return (-1.0) * self + other

    def __mul__(self, k):
        k = float(k)
        return LinExpr({i: v * k for i, v in self.terms.items()}, self.const * k)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def value(self, x) -> float:
        return self.const + sum(v * x[i] for i, v in self.terms.items())


def quicksum(items) -> LinExpr:
    out = LinExpr()
    for it in items:
        out += it
    return out


@dataclass
class Constraint:
    name: str
    expr: LinExpr
    sense: str  # "<=", ">=", "=="
    rhs: float


@dataclass
class Indicator:
    """``binvar == active`` implies ``expr sense rhs``."""

    name: str
    binvar: Var
    active: int
    expr: LinExpr
    sense: str
    rhs: float


SENSES = ("<=", ">=", "==")


class Model:
    def __init__(self, name="model"):
        self.name = name
        self.vars: list[Var] = []
        self.constraints: list[Constraint] = []
        self.indicators: list[Indicator] = []
        self.objective = LinExpr()
        self.start: dict[int, float] = {}
        self._names: set[str] = set()

    def add_var(self, name, lb=0.0, ub=INF, integer=False, binary=False) -> Var:
        if name in self._names:
            raise ModelError(f"duplicate variable name {name}")
        if binary:
            lb, ub, integer = max(0.0, lb), min(1.0, ub), True
        v = Var(len(self.vars), name, float(lb), float(ub), integer)
        self.vars.append(v)
        self._names.add(name)
        return v

    def _as_expr(self, expr):
        if isinstance(expr, Var):
            return expr._expr()
        if isinstance(expr, LinExpr):
            return expr
        return LinExpr(const=float(expr))

    def add_constr(self, expr, sense, rhs, name=None) -> Constraint:
        if sense not in SENSES:
            raise ModelError(f"bad sense {sense}")
        expr = self._as_expr(expr)
        c = Constraint(name or f"c{len(self.constraints)}", LinExpr(expr.terms), sense,
                       float(rhs) - expr.const)
        self.constraints.append(c)
        return c

    def add_indicator(self, binvar, expr, sense, rhs, active=1, name=None) -> Indicator:
        if sense not in SENSES:
            raise ModelError(f"bad sense {sense}")
        if not binvar.integer or binvar.lb < 0 or binvar.ub > 1:
            raise ModelError(f"indicator variable {binvar.name} must be binary")
        expr = self._as_expr(expr)
        ind = Indicator(name or f"ind{len(self.indicators)}", binvar, int(active),
                        LinExpr(expr.terms), sense, float(rhs) - expr.const)
        self.indicators.append(ind)
        return ind

    def minimize(self, expr):
        self.objective = self._as_expr(expr).copy()

    def fix(self, var, value):
        var.lb = var.ub = float(value)

    def expr_bounds(self, expr) -> tuple[float, float]:
        lo = hi = expr.const
        for i, a in expr.terms.items():
            v = self.vars[i]
            if a > 0:
                lo += a * v.lb
                hi += a * v.ub
            elif a < 0:
                lo += a * v.ub
                hi += a * v.lb
        return lo, hi

    def set_start(self, values: dict) -> None:
        """Hint ``{Var: value}``; merged into earlier hints."""
        for v, x in values.items():
            self.start[v.index] = float(x)

    def clear_start(self):
        self.start.clear()

    @property
    def num_binaries(self):
        return sum(1 for v in self.vars if v.integer)

    def write_lp(self, path) -> None:
        """CPLEX LP text, indicators included, for debugging with any solver."""
        names = [_lp_name(v.name) for v in self.vars]

        def fmt(expr):
            parts = []
            for i, a in sorted(expr.terms.items()):
                if a == 0:
                    continue
                sign = "-" if a < 0 else "+"
                parts.append(f"{sign} {abs(a):.17g} {names[i]}")
            if not parts:
                return f"0 {names[0]}" if names else "0"
            s = " ".join(parts)
            return s[2:] if s.startswith("+ ") else s

        sense = {"<=": "<=", ">=": ">=", "==": "="}
        out = [f"\\ model {self.name}", f"\\ objective constant {self.objective.const:.17g}", "Minimize", f" obj: {fmt(self.objective)}", "Subject To"]
        for c in self.constraints:
            out.append(f" {_lp_name(c.name)}: {fmt(c.expr)} {sense[c.sense]} {c.rhs:.17g}")
        for ind in self.indicators:
            out.append(f" {_lp_name(ind.name)}: {names[ind.binvar.index]} = {ind.active} -> "
                       f"{fmt(ind.expr)} {sense[ind.sense]} {ind.rhs:.17g}")
        out.append("Bounds")
        for v, n in zip(self.vars, names):
            lo = "-inf" if v.lb == -INF else f"{v.lb:.17g}"
            hi = "+inf" if v.ub == INF else f"{v.ub:.17g}"
            out.append(f" {lo} <= {n} <= {hi}")
        ints = [n for v, n in zip(self.vars, names) if v.integer]
        if ints:
            out.append("Generals")
            out.extend(f" {n}" for n in ints)
        out.append("End")
        with open(path, "w") as fh:
            fh.write("\n".join(out) + "\n")


def _lp_name(name):
    return re.sub(r"[^A-Za-z0-9_.]", "_", name)


def linearize_indicator(model: Model, ind: Indicator) -> list[Constraint]:
    """Big-M rewrite of one indicator constraint.

    M is the largest violation the variable bounds allow, so the pair is
    exact: with the indicator active the raw constraint holds, otherwise
    each side is relaxed by exactly its M.
    """
    lo, hi = model.expr_bounds(ind.expr)
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise UnboundedIndicatorError(
            f"indicator {ind.name}: expression has unbounded range [{lo}, {hi}]; "
            "give every variable in it finite bounds")
    z = ind.binvar
    # slack term s(z) = 1 - z when active on 1, z when active on 0
    if ind.active == 1:
        slack_coef, slack_const = -1.0, 1.0
    else:
        slack_coef, slack_const = 1.0, 0.0
    out = []
    if ind.sense in ("<=", "=="):
        m_up = max(hi - ind.rhs, 0.0)
        # expr - m_up * s(z) <= rhs
        expr = ind.expr.copy().add_term(z, -m_up * slack_coef)
        out.append(Constraint(f"{ind.name}_ub", expr, "<=", ind.rhs + m_up * slack_const))
    if ind.sense in (">=", "=="):
        m_lo = max(ind.rhs - lo, 0.0)
        expr = ind.expr.copy().add_term(z, m_lo * slack_coef)
        out.append(Constraint(f"{ind.name}_lb", expr, ">=", ind.rhs - m_lo * slack_const))
    return out


@dataclass
class SolverOptions:
    backend: str = "highs"
    time_limit: float | None = None
    mip_gap: float = 1e-7
    threads: int = 1
    seed: int = 0
    verbose: bool = False

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ValueError(f"unknown backend {self.backend!r}; choose from {sorted(BACKENDS)}")
        if self.time_limit is not None and not self.time_limit > 0:
            raise ValueError("time_limit must be positive")
        if not self.mip_gap >= 0:
            raise ValueError("mip_gap must be non-negative")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        unknown = set(d) - {"backend", "time_limit", "mip_gap", "threads", "seed", "verbose"}
        if unknown:
            raise ValueError(f"unknown solver options {sorted(unknown)}")
        return cls(**d)


@dataclass
class SolveResult:
    status: Status
    objective: float | None = None
    bound: float | None = None
    gap: float | None = None
    values: np.ndarray | None = None
    backend: str = ""
    runtime: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def has_solution(self) -> bool:
        return self.values is not None

    def __getitem__(self, var) -> float:
        return float(self.values[var.index])


class SolverAdapter:
    name = "abstract"
    native_indicators = False
    warm_start = False

    def solve(self, model: Model, options: SolverOptions) -> SolveResult:  # pragma: no cover
        raise NotImplementedError


def _rows(model: Model, linearize: bool):
    rows = list(model.constraints)
    if linearize:
        for ind in model.indicators:
            rows.extend(linearize_indicator(model, ind))
    return rows


def _import_backend(module):
    extra = os.environ.get(BACKEND_PATH_ENV)
    if extra and extra not in sys.path:
        sys.path.insert(0, extra)
    import importlib
    return importlib.import_module(module)


class HighsAdapter(SolverAdapter):
    """HiGHS through highspy; indicators become big-M rows."""

    name = "highs"
    native_indicators = False
    warm_start = True

    def solve(self, model, options):
        highspy = _import_backend("highspy")
        h = highspy.Highs()
        h.setOptionValue("output_flag", bool(options.verbose))
        h.setOptionValue("mip_rel_gap", float(options.mip_gap))
        h.setOptionValue("mip_abs_gap", 1e-9)
        h.setOptionValue("random_seed", int(options.seed))
        h.setOptionValue("threads", int(options.threads))
        h.setOptionValue("mip_feasibility_tolerance", 1e-9)
        h.setOptionValue("primal_feasibility_tolerance", 1e-9)
        if options.time_limit is not None:
            h.setOptionValue("time_limit", float(options.time_limit))

        n = len(model.vars)
        rows = _rows(model, linearize=True)
        lp = highspy.HighsLp()
        lp.num_col_ = n
        lp.num_row_ = len(rows)
        cost = np.zeros(n)
        for i, a in model.objective.terms.items():
            cost[i] = a
        lp.col_cost_ = cost
        lp.offset_ = model.objective.const
        lp.col_lower_ = np.array([v.lb for v in model.vars])
        lp.col_upper_ = np.array([v.ub if v.ub != INF else highspy.kHighsInf for v in model.vars])
        lo, up, start, index, value = [], [], [0], [], []
        for r in rows:
            lo.append(r.rhs if r.sense in (">=", "==") else -highspy.kHighsInf)
            up.append(r.rhs if r.sense in ("<=", "==") else highspy.kHighsInf)
            for i, a in sorted(r.expr.terms.items()):
                index.append(i)
                value.append(a)
            start.append(len(index))
        lp.row_lower_ = np.array(lo)
        lp.row_upper_ = np.array(up)
        lp.a_matrix_.format_ = highspy.MatrixFormat.kRowwise
        lp.a_matrix_.start_ = np.array(start, dtype=np.int32)
        lp.a_matrix_.index_ = np.array(index, dtype=np.int32)
        lp.a_matrix_.value_ = np.array(value)
        if any(v.integer for v in model.vars):
            lp.integrality_ = [highspy.HighsVarType.kInteger if v.integer else highspy.HighsVarType.kContinuous
                               for v in model.vars]
        h.passModel(lp)
        if model.start:
            idx = np.array(sorted(model.start), dtype=np.int32)
            h.setSolution(len(idx), idx, np.array([model.start[i] for i in idx]))

        t0 = time.perf_counter()
        h.run()
        runtime = time.perf_counter() - t0
        ms = h.getModelStatus()
        info = h.getInfo()
        has_sol = info.primal_solution_status == 2
        values = np.array(h.getSolution().col_value) if has_sol else None
        obj = info.objective_function_value if has_sol else None
        is_mip = any(v.integer for v in model.vars)
        bound = info.mip_dual_bound if is_mip else obj
        gap = info.mip_gap if is_mip else 0.0
        S = highspy.HighsModelStatus
        if ms == S.kOptimal:
            status = Status.OPTIMAL
        elif ms in (S.kInfeasible, S.kUnboundedOrInfeasible):
            status = Status.INFEASIBLE
        elif ms == S.kTimeLimit:
            status = Status.TIME_LIMIT
        elif has_sol:
            status = Status.FEASIBLE
        else:
            status = Status.ERROR
        return SolveResult(status, obj, bound, gap, values, self.name, runtime,
                           {"model_status": h.modelStatusToString(ms)})


class ScipAdapter(SolverAdapter):
    """SCIP through PySCIPOpt with native indicator constraints."""

    name = "scip"
    native_indicators = True
    warm_start = True

    def solve(self, model, options):
        scip = _import_backend("pyscipopt")
        m = scip.Model(model.name)
        if not options.verbose:
            m.hideOutput()
        m.setParam("limits/gap", float(options.mip_gap))
        m.setParam("limits/absgap", 1e-9)
        m.setParam("randomization/randomseedshift", int(options.seed))
        m.setParam("numerics/feastol", 1e-8)
        if options.time_limit is not None:
            m.setParam("limits/time", float(options.time_limit))
        xs = []
        for v in model.vars:
            vtype = "I" if v.integer else "C"
            if v.integer and v.lb >= 0 and v.ub <= 1:
                vtype = "B"
            xs.append(m.addVar(v.name, vtype=vtype, lb=v.lb if v.lb != -INF else None,
                               ub=v.ub if v.ub != INF else None))

        def sexpr(expr):
            return scip.quicksum(a * xs[i] for i, a in sorted(expr.terms.items()))

        for c in model.constraints:
            e = sexpr(c.expr)
            if c.sense == "<=":
                m.addCons(e <= c.rhs, name=c.name)
            elif c.sense == ">=":
                m.addCons(e >= c.rhs, name=c.name)
            else:
                m.addCons(e == c.rhs, name=c.name)
        for ind in model.indicators:
            e = sexpr(ind.expr)
            z = xs[ind.binvar.index]
            active = ind.active == 1
            if ind.sense in ("<=", "=="):
                m.addConsIndicator(e <= ind.rhs, binvar=z, activeone=active, name=f"{ind.name}_ub")
            if ind.sense in (">=", "=="):
                m.addConsIndicator(-e <= -ind.rhs, binvar=z, activeone=active, name=f"{ind.name}_lb")
        m.setObjective(sexpr(model.objective) + model.objective.const, "minimize")
        if model.start:
            sol = m.createPartialSol()
            for i, val in sorted(model.start.items()):
                m.setSolVal(sol, xs[i], val)
            m.addSol(sol)

        t0 = time.perf_counter()
        m.optimize()
        runtime = time.perf_counter() - t0
        st = m.getStatus()
        has_sol = m.getNSols() > 0
        values = obj = None
        if has_sol:
            best = m.getBestSol()
            values = np.array([m.getSolVal(best, x) for x in xs])
            obj = m.getSolObjVal(best)
        if st in ("optimal", "gaplimit"):
            status = Status.OPTIMAL
        elif st in ("infeasible", "inforunbd"):
            status = Status.INFEASIBLE
        elif st == "timelimit":
            status = Status.TIME_LIMIT
        elif has_sol:
            status = Status.FEASIBLE
        else:
            status = Status.ERROR
        bound = m.getDualbound() if has_sol or status == Status.OPTIMAL else None
        gap = m.getGap() if has_sol else None
        return SolveResult(status, obj, bound, gap, values, self.name, runtime, {"scip_status": st})


BACKENDS = {"highs": HighsAdapter, "scip": ScipAdapter}


def get_adapter(name: str = "highs") -> SolverAdapter:
    try:
        return BACKENDS[name]()
    except KeyError:
        raise ModelError(f"unknown solver backend {name!r}; choose from {sorted(BACKENDS)}") from None


def solve(model: Model, options: SolverOptions | None = None) -> SolveResult:
    options = options or SolverOptions()
    adapter = get_adapter(options.backend)
    result = adapter.solve(model, options)
    log.debug("%s on %s: %s obj=%s gap=%s (%.3fs)", adapter.name, model.name, result.status.value,
              result.objective, result.gap, result.runtime)
    return result
