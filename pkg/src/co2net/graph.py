"""Candidate pipeline graph derived from routed raster paths."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import networkx as nx
import numpy as np
from scipy.spatial import Delaunay, QhullError

from .raster import NoRouteError, RasterMap, RouteResult, _route_length, trace_route

log = logging.getLogger(__name__)

NODE_KINDS = ("emitter", "sink", "transport")


@dataclass(frozen=True)
class Node:
    id: str
    kind: str
    x: float
    y: float
    cell: tuple[int, int] | None = None

    def __post_init__(self):
        if self.kind not in NODE_KINDS:
            raise ValueError(f"node {self.id}: unknown kind {self.kind!r}")


@dataclass(frozen=True)
class Arc:
    i: str
    j: str
    length: float  # km
    polyline: tuple[tuple[float, float], ...] = ()

    @property
    def key(self):
        return (self.i, self.j)


@dataclass
class CandidateGraph:
    nodes: dict[str, Node]
    arcs: list[Arc]
    crs: str = "EPSG:3035"
    routes: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if isinstance(self.nodes, (list, tuple)):
            self.nodes = {n.id: n for n in self.nodes}
        seen = set()
        for a in self.arcs:
            if a.i not in self.nodes or a.j not in self.nodes:
                raise ValueError(f"arc {a.key} references an unknown node")
            if a.i == a.j:
                raise ValueError(f"self-loop arc at {a.i}")
            if not a.length > 0:
                raise ValueError(f"arc {a.key} must have positive length")
            if a.key in seen:
                raise ValueError(f"duplicate arc {a.key}")
            seen.add(a.key)

    @classmethod
    def from_edges(cls, nodes, edges, directed=False, crs="EPSG:3035"):
        """Graph from ``(i, j, length)`` triples; undirected edges yield both arcs."""
        arcs = []
        for i, j, length in edges:
            arcs.append(Arc(i, j, float(length)))
            if not directed:
                arcs.append(Arc(j, i, float(length)))
        return cls(list(nodes), arcs, crs)

    @property
    def arc_keys(self):
        return [a.key for a in self.arcs]

    def arc(self, i, j) -> Arc:
        for a in self.arcs:
            if a.i == i and a.j == j:
                return a
        raise KeyError((i, j))

    def degree(self, node_id) -> int:
        """Degree in the undirected skeleton."""
        return len({a.j for a in self.arcs if a.i == node_id} | {a.i for a in self.arcs if a.j == node_id})

    def is_symmetric(self) -> bool:
        lengths = {a.key: a.length for a in self.arcs}
        return all((j, i) in lengths and lengths[(j, i)] == l for (i, j), l in lengths.items())

    def total_length(self) -> float:
        """Sum over undirected edges (each anti-parallel pair counted once)."""
        done, total = set(), 0.0
        for a in self.arcs:
            key = frozenset(a.key)
            if key not in done:
                done.add(key)
                total += a.length
        return total

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        for n in self.nodes.values():
            g.add_node(n.id, kind=n.kind)
        for a in self.arcs:
            g.add_edge(a.i, a.j, length=a.length)
        return g

    def signature(self) -> str:
        """Hash of the arc set; plans are only portable between equal signatures."""
        payload = json.dumps(sorted([a.i, a.j, round(a.length, 9)] for a in self.arcs))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    # -- serialisation -----------------------------------------------------

    def to_dict(self, scenarios=None) -> dict:
        nodes = []
        for n in self.nodes.values():
            entry = {"id": n.id, "kind": n.kind, "x": n.x, "y": n.y}
            if n.cell is not None:
                entry["cell"] = list(n.cell)
            if scenarios is not None:
                entry["demand"] = scenarios.node_demands(n.id)
            nodes.append(entry)
        arcs = [{"i": a.i, "j": a.j, "length_km": a.length, "polyline": [list(p) for p in a.polyline]}
                for a in self.arcs]
        return {"crs": self.crs, "nodes": nodes, "arcs": arcs}

    @classmethod
    def from_dict(cls, doc: dict) -> "CandidateGraph":
        nodes = [Node(n["id"], n["kind"], float(n["x"]), float(n["y"]),
                      tuple(n["cell"]) if n.get("cell") is not None else None)
                 for n in doc["nodes"]]
        arcs = [Arc(a["i"], a["j"], float(a["length_km"]), tuple(tuple(p) for p in a.get("polyline", ())))
                for a in doc["arcs"]]
        return cls(nodes, arcs, doc.get("crs", "EPSG:3035"))

    def write_json(self, path, scenarios=None, extra=None) -> None:
        doc = self.to_dict(scenarios)
        if extra:
            doc.update(extra)
        Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")

    @classmethod
    def read_json(cls, path) -> "CandidateGraph":
        return cls.from_dict(json.loads(Path(path).read_text()))


def triangulate(points) -> list[tuple[int, int]]:
    """Undirected Delaunay edges ``(i, j)`` with ``i < j``, sorted.

    Fewer than three points, or collinear points, fall back to the chain of
    nearest-neighbour links along the line.
    """
    pts = np.asarray(points, dtype=float)
    n = len(pts)
    if n < 2:
        raise ValueError("need at least two points")
    if len({tuple(p) for p in pts}) != n:
        raise ValueError("duplicate points; merge co-located nodes first")
    if n == 2:
        return [(0, 1)]
    centred = pts - pts[0]
    if np.linalg.matrix_rank(centred, tol=1e-9 * max(1.0, np.abs(centred).max())) < 2:
        return _collinear_chain(pts)
    try:
        tri = Delaunay(pts)
    except QhullError:
        return _collinear_chain(pts)
    edges = set()
    for simplex in tri.simplices:
        a, b, c = sorted(int(v) for v in simplex)
        edges.update({(a, b), (a, c), (b, c)})
    return sorted(edges)


def _collinear_chain(pts):
    direction = pts[np.argmax(np.linalg.norm(pts - pts[0], axis=1))] - pts[0]
    order = sorted(range(len(pts)), key=lambda i: (float(np.dot(pts[i] - pts[0], direction)), i))
    return sorted(tuple(sorted((a, b))) for a, b in zip(order[:-1], order[1:]))


@dataclass(frozen=True)
class Site:
    """An emitter or sink to be injected into the raster."""

    id: str
    kind: str
    x: float
    y: float
    members: tuple[str, ...] = ()


def snap_and_merge(sites, raster: RasterMap):
    """Snap sites to cells and merge co-located ones.

    Returns ``(merged_sites, alias)`` where ``alias`` maps every original id
    to the id of the site that absorbed it. A merged site keeps the smallest
    member id and sits at the cell centre. Emitters and sinks never merge.
    """
    by_cell: dict[tuple[int, int], list[Site]] = {}
    for s in sites:
        by_cell.setdefault(raster.cell_of(s.x, s.y), []).append(s)
    merged, alias = [], {}
    for cell in sorted(by_cell):
        group = sorted(by_cell[cell], key=lambda s: s.id)
        kinds = {s.kind for s in group}
        if len(kinds) > 1:
            raise ValueError(f"cell {cell} holds both {sorted(kinds)}: {[s.id for s in group]}")
        x, y = raster.cell_center(cell)
        head = group[0].id
        merged.append(Site(head, group[0].kind, x, y, tuple(s.id for s in group)))
        for s in group:
            alias[s.id] = head
    return merged, alias


def _chains(cell_graph: nx.Graph, keep: set):
    """Maximal paths between kept cells whose interior cells all have degree 2."""
    seen_edges = set()
    out = []
    for u in sorted(keep):
        for v in sorted(cell_graph.neighbors(u)):
            if frozenset((u, v)) in seen_edges:
                continue
            path = [u, v]
            seen_edges.add(frozenset((u, v)))
            while path[-1] not in keep:
                nxt = [w for w in cell_graph.neighbors(path[-1]) if w != path[-2]]
                if len(nxt) != 1:  # pragma: no cover - degree-2 interior by construction
                    raise RuntimeError("contraction walked into a branching cell")
                seen_edges.add(frozenset((path[-1], nxt[0])))
                path.append(nxt[0])
            out.append(path)
    return out


def build_candidate_graph(raster: RasterMap, sites, crs=None) -> CandidateGraph:
    """Route all Delaunay pairs of ``sites`` and contract the union of routes.

    ``sites`` must include every emitter and sink of every scenario and be
    free of co-located duplicates (see :func:`snap_and_merge`). Cells shared by
    several routes become shared graph nodes; non-terminal cells of degree two
    are contracted away, with arc lengths summed along the chain.
    """
    sites = list(sites)
    ids = [s.id for s in sites]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate site ids")
    cells = [raster.cell_of(s.x, s.y) for s in sites]
    if len(set(cells)) != len(cells):
        raise ValueError("co-located sites; merge them before building the graph")
    for s, c in zip(sites, cells):
        if raster.is_blocked(c):
            raise NoRouteError(c, c, label=f"site {s.id} in a blocked cell")

    centres = [raster.cell_center(c) for c in cells]
    pairs = triangulate(centres) if len(sites) >= 2 else []

    routes: dict[tuple[str, str], RouteResult] = {}
    goals = sorted({j for _, j in pairs})
    fields = dict(zip(goals, raster.distance_field([cells[j] for j in goals]))) if goals else {}
    for i, j in pairs:
        try:
            routes[(ids[i], ids[j])] = trace_route(raster, cells[i], cells[j], fields[j])
        except NoRouteError as exc:
            raise NoRouteError(cells[i], cells[j], label=f"pair {ids[i]}-{ids[j]}") from exc

    union = nx.Graph()
    union.add_nodes_from(cells)
    for r in routes.values():
        for a, b in r.steps:
            union.add_edge(a, b)

    terminal = dict(zip(cells, sites))
    keep = set(terminal) | {c for c in union.nodes if union.degree(c) != 2}
    multi = nx.MultiGraph()
    multi.add_nodes_from(keep)
    for path in _chains(union, keep):
        u, v = path[0], path[-1]
        if u == v:
            log.warning("dropping closed chain at cell %s", u)
            continue
        multi.add_edge(u, v, cells=tuple(path), length=_route_length(path, raster.cell_size))

    _simplify(multi, set(terminal))

    transport = sorted(c for c in multi.nodes if c not in terminal)
    width = max(3, len(str(len(transport))))
    name = {c: terminal[c].id for c in terminal}
    name.update({c: f"T{k + 1:0{width}d}" for k, c in enumerate(transport)})

    nodes = []
    for c in sorted(multi.nodes, key=lambda c: name[c]):
        if c in terminal:
            s = terminal[c]
            nodes.append(Node(s.id, s.kind, *raster.cell_center(c), cell=c))
        else:
            nodes.append(Node(name[c], "transport", *raster.cell_center(c), cell=c))

    arcs = []
    for u, v, data in multi.edges(data=True):
        seq = data["cells"] if data["cells"][0] == u else tuple(reversed(data["cells"]))
        poly = tuple(raster.cell_center(c) for c in seq)
        arcs.append(Arc(name[u], name[v], data["length"], poly))
        arcs.append(Arc(name[v], name[u], data["length"], tuple(reversed(poly))))
    arcs.sort(key=lambda a: (a.i, a.j))
    graph = CandidateGraph(nodes, arcs, crs or raster.projection)
    graph.routes = routes
    return graph


def _simplify(multi: nx.MultiGraph, terminals: set) -> None:
    """Drop parallel chains (keep the shortest) and re-contract until stable."""
    changed = True
    while changed:
        changed = False
        for u, v in sorted({tuple(sorted((a, b))) for a, b in multi.edges()}):
            data = multi.get_edge_data(u, v)
            if data and len(data) > 1:
                best = min(data, key=lambda k: (data[k]["length"], data[k]["cells"]))
                for k in [k for k in data if k != best]:
                    log.info("dropping parallel chain between cells %s and %s", u, v)
                    multi.remove_edge(u, v, key=k)
                changed = True
        for c in sorted(multi.nodes):
            if c in terminals or c not in multi:
                continue
            deg = multi.degree(c)
            if deg <= 1:
                multi.remove_node(c)
                changed = True
            elif deg == 2:
                (a, _, k1, d1), (b, _, k2, d2) = [(w, c, k, d) for _, w, k, d in multi.edges(c, keys=True, data=True)]
                if a == b:
                    continue
                left = d1["cells"] if d1["cells"][-1] == c else tuple(reversed(d1["cells"]))
                right = d2["cells"] if d2["cells"][0] == c else tuple(reversed(d2["cells"]))
                multi.remove_node(c)
                multi.add_edge(a, b, cells=left + right[1:], length=d1["length"] + d2["length"])
                changed = True
