"""Cost aggregates, O&M discounting and the potential/regret/benefit report."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field


def investment_cost(builds, trends, lengths) -> float:
    """Sum of ``(m_c * flow + y_c * built) * l_ij`` over arc/trend entries.

    ``builds`` maps ``arc -> (trend index, flow)`` for built arcs; ``trends``
    is indexable by trend index and ``lengths`` maps arc -> km.
    """
    total = 0.0
    for arc, (c, flow) in builds.items():
        t = trends[c]
        total += (t.slope * flow + t.intercept) * lengths[arc]
    return total


def om_factor(tau: float, from_year: int, to_year: int) -> float:
    """Sum of ``(1 + tau)**-n`` for n in [from_year, to_year], inclusive."""
    if from_year > to_year:
        return 0.0
    return sum((1.0 + tau) ** -n for n in range(from_year, to_year + 1))


def om_discounted(base: float, om: float, tau: float, from_year: int, to_year: int) -> float:
    """Discounted O&M on ``base`` for years ``from_year``..``to_year`` inclusive."""
    if tau < 0:
        raise ValueError("discount rate must be non-negative")
    return om * base * om_factor(tau, from_year, to_year)


def period1_om_years(horizon, no_overlap: bool = False) -> tuple[int, int]:
    """Year range of period-1 O&M.

    By default it starts at ``n1``, so year ``n1`` is charged in both periods;
    ``no_overlap`` starts it one year later.
    """
    return (horizon.n1 + 1 if no_overlap else horizon.n1, horizon.n2)


def scenario_total(i0, o0, i1, o1, r, n1, n2) -> float:
    return i0 + o0 + (n2 - n1) / n2 * i1 + o1 + r


@dataclass
class CostBreakdown:
    """Cost components of one plan in one scenario (EUR)."""

    i0: float
    o0: float
    i1: float
    r: float
    o1: float
    total: float
    best: float | None = None

    @property
    def regret(self) -> float | None:
        return None if self.best is None else self.total - self.best

    @classmethod
    def compute(cls, i0, i1, r, horizon, no_overlap=False, best=None) -> "CostBreakdown":
        o0 = om_discounted(i0, horizon.om, horizon.tau, 1, horizon.n1)
        y0, y1 = period1_om_years(horizon, no_overlap)
        o1 = om_discounted(i0 + i1 + r, horizon.om, horizon.tau, y0, y1)
        total = scenario_total(i0, o0, i1, o1, r, horizon.n1, horizon.n2)
        return cls(i0, o0, i1, r, o1, total, best)

    def to_dict(self):
        d = asdict(self)
        d["regret"] = self.regret
        return d


@dataclass
class RegretRow:
    scenario: str
    z_m1: float
    z_m2: float
    z_r: float

    @property
    def potential(self) -> float:
        return self.z_m2 - self.z_m1

    @property
    def regret(self) -> float:
        return self.z_r - self.z_m1

    @property
    def benefit(self) -> float:
        return self.z_m2 - self.z_r


@dataclass
class RegretReport:
    rows: list[RegretRow] = field(default_factory=list)

    @property
    def system_regret(self) -> float:
        return max(r.regret for r in self.rows)

    def row(self, scenario) -> RegretRow:
        for r in self.rows:
            if r.scenario == scenario:
                return r
        raise KeyError(scenario)

    def discrepancies(self, published: dict, tol: float = 0.002) -> list[dict]:
        """Compare with published ``{scenario: (potential, regret, benefit)}``.

        Returns one entry per mismatching value larger than ``tol``.
        """
        out = []
        for r in self.rows:
            if r.scenario not in published:
                continue
            for name, printed in zip(("potential", "regret", "benefit"), published[r.scenario]):
                computed = getattr(r, name)
                if abs(computed - printed) > tol:
                    out.append({"scenario": r.scenario, "quantity": name,
                                "computed": computed, "published": printed})
        return out

    def write_totals_csv(self, path, scale=1.0, digits=3) -> None:
        """Table of z_M1, z_M2, z_R per scenario."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "z_m1", "z_m2", "z_r"])
            for r in self.rows:
                w.writerow([r.scenario] + [f"{v / scale:.{digits}f}" for v in (r.z_m1, r.z_m2, r.z_r)])

    def write_regret_csv(self, path, scale=1.0, digits=3) -> None:
        """Table of potential, regret and benefit per scenario."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["scenario", "potential", "regret", "benefit"])
            for r in self.rows:
                w.writerow([r.scenario] + [f"{v / scale:.{digits}f}" for v in (r.potential, r.regret, r.benefit)])


def regret_report(values) -> RegretReport:
    """Build the report from ``{scenario: (z_m1, z_m2, z_r)}``."""
    return RegretReport([RegretRow(s, *map(float, v)) for s, v in values.items()])
