"""Scenario demand tables and planning-horizon parameters."""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass


class ScenarioError(ValueError):
    pass


class UnknownNodeError(ScenarioError):
    pass


class CapacityError(ScenarioError):
    pass


class DuplicateScenarioError(ScenarioError):
    pass


@dataclass(frozen=True)
class HorizonParams:
    """Timing and economics shared by every model.

    ``om`` is the yearly O&M share of cumulative investment; ``o2_max`` the
    throughput factor of a pressure increase and ``o2_cost`` its cost as a
    share of the arc's original build cost. ``om``, ``o2_max`` and ``o2_cost``
    defaults are illustrative and belong in the run configuration.
    """

    n1: int = 5
    n2: int = 25
    tau: float = 0.05
    om: float = 0.02
    o2_max: float = 1.2
    o2_cost: float = 0.3

    def __post_init__(self):
        if not 0 < self.n1 < self.n2:
            raise ScenarioError("need 0 < n1 < n2")
        if self.tau < 0 or self.om < 0:
            raise ScenarioError("tau and om must be non-negative")
        if not self.o2_max > 1:
            raise ScenarioError("o2_max must exceed 1")
        if not self.o2_cost > 0:
            raise ScenarioError("o2_cost must be positive")

    @property
    def proration(self) -> float:
        """Share of period-1 capex written off within the horizon."""
        return (self.n2 - self.n1) / self.n2

    def to_dict(self):
        return asdict(self)


class ScenarioSet:
    """Per-node demands for the first stage and for each period-1 scenario.

    Demands are in Mt/a: positive for emitters, negative (capacity) for
    sinks, zero for transport nodes. The first-stage table always belongs to
    the initial scenario. Nodes missing from a table have zero demand, which
    turns an absent emitter into a transport node for that scenario.
    """

    def __init__(self, node_kinds, initial, t0, t1, descriptions=None, _document=None):
        self.node_kinds = dict(node_kinds)
        self.initial = initial
        self.t0 = {k: float(v) for k, v in t0.items()}
        self.t1 = {s: {k: float(v) for k, v in d.items()} for s, d in t1.items()}
        self.descriptions = dict(descriptions or {})
        self._document = _document
        self.validate()

    @property
    def ids(self) -> list[str]:
        return list(self.t1)

    def __len__(self):
        return len(self.t1)

    def __contains__(self, s):
        return s in self.t1

    def demand0(self, node) -> float:
        return self.t0.get(node, 0.0)

    def demand1(self, scenario, node) -> float:
        return self.t1[scenario].get(node, 0.0)

    def node_demands(self, node) -> dict:
        return {"t0": self.demand0(node), "t1": {s: self.demand1(s, node) for s in self.t1}}

    def emissions(self, scenario=None) -> float:
        """Total emitter demand at t=0 (``scenario=None``) or t=1."""
        table = self.t0 if scenario is None else self.t1[scenario]
        return sum(v for v in table.values() if v > 0)

    def max_flow(self) -> float:
        return max([self.emissions()] + [self.emissions(s) for s in self.t1])

    def validate(self, graph_nodes=None) -> None:
        if self.initial not in self.t1:
            raise ScenarioError(f"initial scenario {self.initial!r} is not among {self.ids}")
        tables = [("t0", self.t0)] + [(f"t1/{s}", d) for s, d in self.t1.items()]
        for label, table in tables:
            for node, value in table.items():
                if node not in self.node_kinds:
                    raise UnknownNodeError(f"{label}: unknown node {node!r}")
                if not math.isfinite(value):
                    raise ScenarioError(f"{label}: demand of {node} is not finite")
                kind = self.node_kinds[node]
                if (kind == "emitter" and value < 0) or (kind == "sink" and value > 0) or \
                        (kind == "transport" and value != 0):
                    raise ScenarioError(f"{label}: demand {value} has the wrong sign for {kind} {node}")
            supply = sum(v for v in table.values() if v > 0)
            capacity = -sum(v for v in table.values() if v < 0)
            if supply > capacity + 1e-9:
                raise CapacityError(f"{label}: emissions {supply:g} exceed sink capacity {capacity:g}")
        if graph_nodes is not None:
            graph_nodes = set(graph_nodes)
            for node in self.node_kinds:
                if node not in graph_nodes:
                    raise UnknownNodeError(f"node {node!r} is not in the candidate graph")

    def scenario_delta(self, scenario) -> list[str]:
        """Nodes whose period-1 demand differs from the first-stage demand."""
        nodes = sorted(set(self.t0) | set(self.t1[scenario]))
        return [n for n in nodes if self.demand1(scenario, n) != self.demand0(n)]

    def restrict(self, scenario_ids) -> "ScenarioSet":
        """Same first stage, period-1 tables limited to ``scenario_ids``."""
        scenario_ids = list(scenario_ids)
        for s in scenario_ids:
            if s not in self.t1:
                raise ScenarioError(f"unknown scenario {s!r}")
        # the initial id only has to exist; keep it valid by pointing at a member
        initial = self.initial if self.initial in scenario_ids else scenario_ids[0]
        out = ScenarioSet.__new__(ScenarioSet)
        out.node_kinds = self.node_kinds
        out.initial = initial
        out.t0 = self.t0
        out.t1 = {s: self.t1[s] for s in scenario_ids}
        out.descriptions = {s: d for s, d in self.descriptions.items() if s in scenario_ids}
        out._document = None
        return out

    def merged(self, alias) -> "ScenarioSet":
        """Demands summed over co-located nodes (``alias`` maps id -> merged id)."""
        def fold(table):
            out = {}
            for node, v in table.items():
                out[alias.get(node, node)] = out.get(alias.get(node, node), 0.0) + v
            return out
        kinds = {}
        for node, kind in self.node_kinds.items():
            kinds.setdefault(alias.get(node, node), kind)
        return ScenarioSet(kinds, self.initial, fold(self.t0), {s: fold(d) for s, d in self.t1.items()},
                           self.descriptions)

    def to_document(self) -> dict:
        if self._document is not None:
            return copy.deepcopy(self._document)
        nodes = [{"id": n, "kind": k} for n, k in self.node_kinds.items()]
        sets = []
        for s, table in self.t1.items():
            entry = {"id": s, "t1": dict(table)}
            if s in self.descriptions:
                entry["description"] = self.descriptions[s]
            sets.append(entry)
        return {"nodes": nodes, "scenarios": {"initial": self.initial, "t0": dict(self.t0), "sets": sets}}


def load_scenarios(document: dict, graph=None) -> ScenarioSet:
    """Validate a configuration document into a :class:`ScenarioSet`.

    ``document`` holds ``nodes`` (id, kind, optional coordinates) and
    ``scenarios`` with ``initial``, optional ``t0`` (defaults to the initial
    scenario's period-1 table) and a list of ``sets`` each carrying ``id`` and
    ``t1``. Transport nodes of ``graph`` are added to the roster.
    """
    try:
        node_entries = document["nodes"]
        spec = document["scenarios"]
        sets = spec["sets"]
        initial = spec["initial"]
    except (KeyError, TypeError) as exc:
        raise ScenarioError(f"malformed scenario document: missing {exc}") from None

    kinds = {}
    for entry in node_entries:
        if entry["id"] in kinds:
            raise ScenarioError(f"duplicate node id {entry['id']!r}")
        kinds[entry["id"]] = entry["kind"]
    if graph is not None:
        for node in graph.nodes.values():
            if node.kind == "transport":
                kinds.setdefault(node.id, "transport")

    t1, desc = {}, {}
    for entry in sets:
        sid = str(entry["id"])
        if sid in t1:
            raise DuplicateScenarioError(f"duplicate scenario id {sid!r}")
        t1[sid] = dict(entry.get("t1") or {})
        if "description" in entry:
            desc[sid] = entry["description"]
    if initial not in t1:
        raise ScenarioError(f"initial scenario {initial!r} is not defined")
    t0 = dict(spec["t0"]) if spec.get("t0") is not None else dict(t1[initial])

    doc = {"nodes": copy.deepcopy(node_entries), "scenarios": copy.deepcopy(spec)}
    out = ScenarioSet(kinds, initial, t0, t1, desc, _document=doc)
    if graph is not None:
        out.validate(graph.nodes)
    return out
