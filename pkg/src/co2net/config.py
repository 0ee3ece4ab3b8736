"""Run configuration: one YAML document describing a complete experiment.

Example::

    name: toy
    grid: {width: 12, height: 8, cell_size: 1.5}
    layers:
      - {kind: water, rect: [0, 5, 7, 5]}
    nodes:
      - {id: E1, kind: emitter, cell: [1, 1]}
      - {id: K, kind: sink, x: 15.0, y: 4.5}
    scenarios:
      initial: S1
      sets:
        - {id: S1, t1: {E1: 1.0, K: -5.0}}
    trends: {k: 3, tol: 0.02}
    solver: {backend: highs, mip_gap: 1.0e-7}
    flags: {relaxed_coupling: false, om_no_overlap: false}
    output: out
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .costs import CostModelError, CostParams, HydraulicParams, Trend, TrendFit, fit_trends
from .graph import Site, build_candidate_graph, snap_and_merge
from .layers import layer_from_spec
from .raster import GridSpec, compose_raster
from .scenarios import HorizonParams, ScenarioError, ScenarioSet, load_scenarios
from .solver import SolverOptions

TOP_LEVEL_KEYS = {"name", "grid", "layers", "blocked", "nodes", "scenarios", "hydraulics", "costs",
                  "trends", "horizon", "solver", "flags", "workers", "output"}


class ConfigError(ValueError):
    pass


def _section(doc, key, cls):
    values = doc.get(key) or {}
    if not isinstance(values, dict):
        raise ConfigError(f"{key}: expected a mapping")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"{key}: {exc}") from None
    except (CostModelError, ScenarioError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from None


def apply_override(doc: dict, assignment: str) -> None:
    """Apply ``a.b.c=value`` (value parsed as YAML) to ``doc`` in place."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    path, raw = assignment.split("=", 1)
    keys = path.strip().split(".")
    node = doc
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {path!r}: {k} is not a mapping")
    node[keys[-1]] = yaml.safe_load(raw)


@dataclass
class RunConfig:
    doc: dict
    base: Path
    grid: GridSpec
    hydraulics: HydraulicParams
    costs: CostParams
    horizon: HorizonParams
    solver: SolverOptions
    relaxed_coupling: bool = False
    om_no_overlap: bool = False
    workers: int = 1
    output: Path = Path("out")
    files: list = field(default_factory=list)

    # -- provenance ----------------------------------------------------------

    @property
    def hash(self) -> str:
        """Hash of the parsed document plus every referenced input file."""
        h = hashlib.sha256(json.dumps(self.doc, sort_keys=True, default=str).encode())
        for p in self.files:
            h.update(Path(p).read_bytes())
        return h.hexdigest()[:16]

    @property
    def name(self) -> str:
        return str(self.doc.get("name", "run"))

    # -- pipeline ------------------------------------------------------------

    def raster(self):
        layers = [layer_from_spec(spec, self.grid, self.base) for spec in self.doc.get("layers") or []]
        blocked = None
        if self.doc.get("blocked"):
            blocked = np.zeros(self.grid.shape, bool)
            for r, c in self.doc["blocked"]:
                blocked[r, c] = True
        return compose_raster(layers, self.grid, blocked)

    def sites(self, raster) -> list[Site]:
        out = []
        for n in self.doc["nodes"]:
            if "cell" in n:
                x, y = raster.cell_center(tuple(n["cell"]))
            else:
                x, y = float(n["x"]), float(n["y"])
            out.append(Site(str(n["id"]), n["kind"], x, y))
        return out

    def build_graph(self, raster=None):
        """Candidate graph plus the alias map of merged co-located sites."""
        raster = raster if raster is not None else self.raster()
        merged, alias = snap_and_merge(self.sites(raster), raster)
        return build_candidate_graph(raster, merged), alias

    def scenario_set(self, graph=None, alias=None) -> ScenarioSet:
        sc = load_scenarios({"nodes": self.doc["nodes"], "scenarios": self.doc["scenarios"]})
        if alias and any(k != v for k, v in alias.items()):
            sc = sc.merged(alias)
        if graph is not None:
            sc.validate(graph.nodes)
        return sc

    def trend_fit(self, scenarios: ScenarioSet | None = None) -> TrendFit:
        spec = dict(self.doc.get("trends") or {})
        if "table" in spec:
            trends = [Trend.from_dict(t) for t in spec["table"]]
            return TrendFit(trends, float("nan"), float(spec.get("tol", 0.02)))
        flow_max = spec.get("flow_max")
        if flow_max is None:
            if scenarios is None:
                scenarios = self.scenario_set()
            flow_max = scenarios.max_flow()
        return fit_trends(self.costs, self.hydraulics, float(flow_max), k=int(spec.get("k", 3)),
                          tol=float(spec.get("tol", 0.02)))


def parse_config(doc: dict, base=Path("."), output=None) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a mapping")
    unknown = set(doc) - TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    for key in ("grid", "nodes", "scenarios"):
        if key not in doc:
            raise ConfigError(f"missing required section {key!r}")
    doc = copy.deepcopy(doc)
    base = Path(base)

    grid_doc = dict(doc["grid"])
    if "origin" in grid_doc:
        grid_doc["origin"] = tuple(grid_doc["origin"])
    grid = _section({"grid": grid_doc}, "grid", GridSpec)

    nodes = doc["nodes"]
    if not isinstance(nodes, list) or not nodes:
        raise ConfigError("nodes: expected a non-empty list")
    kinds = set()
    for n in nodes:
        if "id" not in n or "kind" not in n:
            raise ConfigError(f"node entry {n!r} needs id and kind")
        if n["kind"] not in ("emitter", "sink"):
            raise ConfigError(f"node {n['id']}: kind must be emitter or sink")
        if "cell" not in n and not ("x" in n and "y" in n):
            raise ConfigError(f"node {n['id']}: give cell [row, col] or x and y")
        kinds.add(n["kind"])
    if "sink" not in kinds:
        raise ConfigError("nodes: at least one sink is required")
    if "emitter" not in kinds:
        raise ConfigError("nodes: at least one emitter is required")

    files = []
    for spec in doc.get("layers") or []:
        for key in ("geojson", "grid"):
            if key in spec:
                p = base / spec[key]
                if not p.is_file():
                    raise FileNotFoundError(f"layer input {p} does not exist")
                files.append(p)

    flags = doc.get("flags") or {}
    unknown = set(flags) - {"relaxed_coupling", "om_no_overlap"}
    if unknown:
        raise ConfigError(f"unknown flags: {sorted(unknown)}")
    try:
        solver = SolverOptions.from_dict(doc.get("solver") or {})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"solver: {exc}") from None

    trends = doc.get("trends") or {}
    if "table" not in trends:
        k = trends.get("k", 3)
        tol = trends.get("tol", 0.02)
        if not (isinstance(k, int) and k >= 1):
            raise ConfigError("trends.k must be a positive integer")
        if not tol > 0:
            raise ConfigError("trends.tol must be positive")

    cfg = RunConfig(
        doc=doc, base=base, grid=grid,
        hydraulics=_section(doc, "hydraulics", HydraulicParams),
        costs=_section(doc, "costs", CostParams),
        horizon=_section(doc, "horizon", HorizonParams),
        solver=solver,
        relaxed_coupling=bool(flags.get("relaxed_coupling", False)),
        om_no_overlap=bool(flags.get("om_no_overlap", False)),
        workers=int(doc.get("workers", 1)),
        output=Path(output) if output is not None else base / doc.get("output", "out"),
        files=files,
    )
    try:
        cfg.scenario_set()
    except ScenarioError as exc:
        raise ConfigError(f"scenarios: {exc}") from None
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"scenarios: malformed entry ({exc})") from None
    return cfg


def load_config(path, overrides=(), output=None) -> RunConfig:
    path = Path(path)
    text = path.read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    for item in overrides:
        apply_override(doc, item)
    return parse_config(doc, path.parent, output)
