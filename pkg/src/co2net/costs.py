"""Pipeline hydraulics, the concave cost curve and its piecewise-linear trends.

Flows are given in Mt/a at the API boundary and converted to kg/s for the
hydraulic relations. Costs are per kilometre of pipeline.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import minimize_scalar

SECONDS_PER_YEAR = 365 * 24 * 3600
KG_PER_S_PER_MT_A = 1e9 / SECONDS_PER_YEAR


class CostModelError(ValueError):
    """Invalid argument for a cost-model function."""


@dataclass(frozen=True)
class HydraulicParams:
    density: float = 900.0  # kg/m^3
    velocity: float = 3.0  # m/s

    def __post_init__(self):
        if not (self.density > 0 and self.velocity > 0):
            raise CostModelError("density and velocity must be positive")

    @property
    def flow_per_area(self) -> float:
        """Mass flow through one square metre of cross-section, kg/s."""
        return self.velocity * self.density


@dataclass(frozen=True)
class CostParams:
    """Quadratic diameter cost constants, per metre of pipe.

    c1 multiplies D^2 (EUR/(m*m^2)), c2 multiplies D (EUR/(m*m)) and c3 is the
    fixed charge (EUR/m). Defaults: the Parker natural-gas regression (material,
    labour, miscellaneous and right-of-way terms summed, inches/miles converted
    to metres) times an assumed escalation factor of 1.93 to 2022 EUR. The
    escalation factor is a guess; pin audited values in the run configuration.
    """

    c1: float = 1251.9
    c2: float = 555.0
    c3: float = 280.7
    price_year: int = 2022

    def __post_init__(self):
        if min(self.c1, self.c2, self.c3) < 0:
            raise CostModelError("cost constants must be non-negative")
        if not self.c3 > 0:
            raise CostModelError("c3 (fixed charge) must be positive")


def mt_per_year_to_kg_per_s(flow):
    return flow * KG_PER_S_PER_MT_A


def kg_per_s_to_mt_per_year(flow):
    return flow / KG_PER_S_PER_MT_A


def diameter_from_flow(flow_kg_s: float, hydraulics: HydraulicParams = HydraulicParams()) -> float:
    """Inner diameter (m) carrying ``flow_kg_s`` at the fixed velocity and density."""
    if flow_kg_s < 0:
        raise CostModelError(f"negative flow {flow_kg_s}")
    return math.sqrt(flow_kg_s / (hydraulics.velocity * math.pi * 0.25 * hydraulics.density))


def flow_from_diameter(diameter: float, hydraulics: HydraulicParams = HydraulicParams()) -> float:
    """Inverse of :func:`diameter_from_flow`, in kg/s."""
    if diameter < 0:
        raise CostModelError(f"negative diameter {diameter}")
    return hydraulics.velocity * math.pi * 0.25 * hydraulics.density * diameter**2


def cost_from_diameter(diameter: float, costs: CostParams = CostParams()) -> float:
    """Build cost in EUR/km for a pipe of the given inner diameter."""
    return 1000.0 * (costs.c1 * diameter**2 + costs.c2 * diameter + costs.c3)


def unit_cost_from_flow(flow, hydraulics: HydraulicParams = HydraulicParams(),
                        costs: CostParams = CostParams()):
    """Exact (concave) build cost in EUR/km for a flow in Mt/a.

    Accepts scalars or arrays.
    """
    flow = np.asarray(flow, dtype=float)
    if np.any(flow < 0):
        raise CostModelError("negative flow")
    area = mt_per_year_to_kg_per_s(flow) / (hydraulics.velocity * math.pi * 0.25 * hydraulics.density)
    value = 1000.0 * (area * costs.c1 + np.sqrt(area) * costs.c2 + costs.c3)
    return float(value) if value.ndim == 0 else value


@dataclass(frozen=True)
class Trend:
    """One linear piece of the cost approximation.

    ``slope`` is EUR per (Mt/a * km), ``intercept`` EUR/km and the window
    bounds are flows in Mt/a.
    """

    index: int
    slope: float
    intercept: float
    q_min: float
    q_max: float

    def __post_init__(self):
        if not 0 <= self.q_min < self.q_max:
            raise CostModelError(f"trend {self.index}: need 0 <= q_min < q_max")

    def __call__(self, flow):
        return self.slope * np.asarray(flow, dtype=float) + self.intercept

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "Trend":
        return cls(int(data["index"]), float(data["slope"]), float(data["intercept"]),
                   float(data["q_min"]), float(data["q_max"]))


@dataclass
class TrendFit:
    trends: list[Trend]
    max_rel_error: float
    tol: float

    @property
    def tol_met(self) -> bool:
        return self.max_rel_error <= self.tol

    def __iter__(self):
        return iter(self.trends)

    def __len__(self):
        return len(self.trends)

    def __getitem__(self, i):
        return self.trends[i]


def _secant(a, b, curve):
    ca, cb = curve(a), curve(b)
    slope = (cb - ca) / (b - a)
    return slope, ca - slope * a


def _segment_error(a, b, curve):
    """Largest relative gap between ``curve`` and its chord on [a, b]."""
    slope, intercept = _secant(a, b, curve)
    grid = np.linspace(a, b, 513)
    rel = (curve(grid) - (slope * grid + intercept)) / curve(grid)
    i = int(np.argmax(rel))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    if hi > lo:
        res = minimize_scalar(
            lambda q: -(curve(q) - (slope * q + intercept)) / curve(q),
            bounds=(lo, hi), method="bounded", options={"xatol": 1e-12 * max(b, 1.0)})
        if -res.fun > rel[i]:
            return float(-res.fun), float(res.x)
    return float(rel[i]), float(grid[i])


def _sampled_error(a, b, curve, n=257):
    slope, intercept = _secant(a, b, curve)
    grid = np.linspace(a, b, n)
    vals = curve(grid)
    return float(np.max((vals - (slope * grid + intercept)) / vals))


def _minimax_breaks(flow_max, k, curve):
    """Breakpoints minimising the worst relative chord error with ``k`` pieces.

    Bisection on the admissible error level; for each level the pieces are
    stretched from the left as far as the level allows.
    """
    def sweep(level):
        breaks = [0.0]
        while breaks[-1] < flow_max and len(breaks) <= k:
            a = breaks[-1]
            if _sampled_error(a, flow_max, curve) <= level:
                breaks.append(float(flow_max))
                break
            lo, hi = a, float(flow_max)
            for _ in range(48):
                mid = 0.5 * (lo + hi)
                if _sampled_error(a, mid, curve) <= level:
                    lo = mid
                else:
                    hi = mid
            if lo <= a:
                return None
            breaks.append(lo)
        return breaks if breaks[-1] == flow_max and len(breaks) - 1 <= k else None

    lo, hi = 0.0, _sampled_error(0.0, flow_max, curve)
    best = [0.0, float(flow_max)]
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        found = sweep(mid)
        if found is None:
            lo = mid
        else:
            hi, best = mid, found
    return best


def fit_trends(costs: CostParams, hydraulics: HydraulicParams, flow_max: float,
               k: int = 3, tol: float = 0.02) -> TrendFit:
    """Approximate the cost curve on [0, flow_max] by at most ``k`` secants.

    Greedy refinement first: the segment with the largest relative error is
    split at its point of largest error until ``k`` segments exist or every
    segment is within ``tol``. If that misses ``tol`` the breakpoints are
    re-placed to minimise the worst relative error (best-k fit); the achieved
    error is reported either way. Secants of a concave curve never
    overestimate it.
    """
    if k < 1:
        raise CostModelError("k must be >= 1")
    if not flow_max > 0:
        raise CostModelError("flow_max must be positive")
    if not tol > 0:
        raise CostModelError("tol must be positive")

    def curve(q):
        return unit_cost_from_flow(q, hydraulics, costs)

    breaks = [0.0, float(flow_max)]
    errors = [_segment_error(0.0, flow_max, curve)]
    while len(breaks) - 1 < k:
        worst = max(range(len(errors)), key=lambda i: errors[i][0])
        err, where = errors[worst]
        if err <= tol:
            break
        a, b = breaks[worst], breaks[worst + 1]
        breaks.insert(worst + 1, where)
        errors[worst:worst + 1] = [_segment_error(a, where, curve), _segment_error(where, b, curve)]

    if max(e for e, _ in errors) > tol and k > 1:
        refined = _minimax_breaks(float(flow_max), k, curve)
        refined_errors = [_segment_error(a, b, curve) for a, b in zip(refined[:-1], refined[1:])]
        if max(e for e, _ in refined_errors) < max(e for e, _ in errors):
            breaks, errors = refined, refined_errors

    trends = []
    for c, (a, b) in enumerate(zip(breaks[:-1], breaks[1:])):
        slope, intercept = _secant(a, b, curve)
        trends.append(Trend(c, float(slope), float(intercept), a, b))
    return TrendFit(trends, max(e for e, _ in errors), tol)


def trends_from_diameters(diameters, costs: CostParams = CostParams(),
                          hydraulics: HydraulicParams = HydraulicParams()) -> list[Trend]:
    """Secant trends between consecutive diameter breakpoints (m).

    Diameter limits are turned into flow windows (Mt/a) via the hydraulic
    relation, so the windows bound flows as the network constraints require.
    """
    diameters = sorted(float(d) for d in diameters)
    if len(diameters) < 2 or diameters[0] < 0:
        raise CostModelError("need at least two non-negative diameter breakpoints")
    flows = [kg_per_s_to_mt_per_year(flow_from_diameter(d, hydraulics)) for d in diameters]

    def curve(q):
        return unit_cost_from_flow(q, hydraulics, costs)

    out = []
    for c, (a, b) in enumerate(zip(flows[:-1], flows[1:])):
        slope, intercept = _secant(a, b, curve)
        out.append(Trend(c, float(slope), float(intercept), a, b))
    return out


def trend_cost(trends, flow):
    """Evaluate the piecewise approximation (EUR/km); NaN outside every window."""
    flow = np.asarray(flow, dtype=float)
    out = np.full(flow.shape, np.nan)
    for t in trends:
        mask = (flow >= t.q_min) & (flow <= t.q_max) & np.isnan(out)
        out[mask] = t(flow[mask])
    return out


def arc_capex(flow: float, built: int, trend: Trend, length_km: float) -> float:
    """Build cost of one arc under one trend: (m*flow + y*built) * length."""
    if built not in (0, 1):
        raise CostModelError("built must be 0 or 1")
    if built == 0 and flow > 0:
        raise CostModelError("flow on an arc that is not built")
    if built == 1 and not trend.q_min - 1e-9 <= flow <= trend.q_max + 1e-9:
        raise CostModelError(f"flow {flow} outside trend window [{trend.q_min}, {trend.q_max}]")
    return (trend.slope * flow + trend.intercept * built) * length_km
