"""Penalty raster ("rasta-map") and least-cost routing over it.

Cells are addressed as ``(row, col)`` with row 0 at the northern edge, the
same orientation as an ESRI ASCII grid. ``origin`` is the lower-left corner of
the grid in projected coordinates (km).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra

SQRT2 = math.sqrt(2.0)

# 8-neighbourhood, in lexicographic order of the offset
NEIGHBOURS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]

LAYER_FACTORS = {
    "preexisting_pipeline": 0.25,
    "railroad": 3.0,
    "motorway": 3.0,
    "water": 10.0,
    "cdda_protected": 10.0,
    "national_park": 30.0,
}

# (upper bound inclusive, factor) in inhabitants per km^2
POPULATION_BANDS = [(250.0, 1.0), (500.0, 4.0), (2000.0, 9.0), (4000.0, 16.0), (8000.0, 25.0),
                    (math.inf, 36.0)]

SLOPE_RANGE = (0.0, 90.0)
SLOPE_FACTORS = (1.0, 20.0)

LAYER_KINDS = tuple(LAYER_FACTORS) + ("population_density_band", "slope")


class InvalidLayerError(ValueError):
    pass


class NoRouteError(RuntimeError):
    def __init__(self, start, goal, label=None):
        self.start, self.goal, self.label = start, goal, label
        where = f" for {label}" if label else ""
        super().__init__(f"no route from cell {start} to cell {goal}{where}")


def population_factor(density):
    """Multiplier for population density (inh/km^2), vectorised."""
    density = np.asarray(density, dtype=float)
    if np.any(~np.isfinite(density)) or np.any(density < 0):
        raise InvalidLayerError("population density must be finite and non-negative")
    bounds = np.array([b for b, _ in POPULATION_BANDS[:-1]])
    factors = np.array([f for _, f in POPULATION_BANDS])
    # upper-inclusive bands: 250 -> 1, 250.1 -> 4
    return factors[np.searchsorted(bounds, density, side="left")]


def slope_factor(degrees):
    """Linear map of terrain slope [0, 90] degrees onto [1, 20]."""
    degrees = np.asarray(degrees, dtype=float)
    lo, hi = SLOPE_RANGE
    if np.any(~np.isfinite(degrees)) or np.any(degrees < lo) or np.any(degrees > hi):
        raise InvalidLayerError("slope must lie in [0, 90] degrees")
    f0, f1 = SLOPE_FACTORS
    return f0 + (f1 - f0) * (degrees - lo) / (hi - lo)


@dataclass
class GeoLayer:
    """One geodata layer already aligned to the grid.

    For ``population_density_band`` and ``slope`` ``values`` holds the per-cell
    measurement; for every other kind it is a coverage mask (non-zero = the
    feature touches the cell).
    """

    kind: str
    values: np.ndarray
    name: str = ""

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise InvalidLayerError(f"unknown layer kind {self.kind!r}")
        self.values = np.asarray(self.values)

    def factors(self) -> np.ndarray:
        if self.kind == "population_density_band":
            return population_factor(self.values)
        if self.kind == "slope":
            return slope_factor(self.values)
        return np.where(self.values.astype(bool), LAYER_FACTORS[self.kind], 1.0)


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    cell_size: float = 1.5
    origin: tuple[float, float] = (0.0, 0.0)
    projection: str = "EPSG:3035"

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or not self.cell_size > 0:
            raise ValueError("grid dimensions and cell size must be positive")

    @property
    def shape(self):
        return (self.height, self.width)


@dataclass(frozen=True, eq=False)
class RasterMap:
    multiplier: np.ndarray
    cell_size: float = 1.5
    origin: tuple[float, float] = (0.0, 0.0)
    projection: str = "EPSG:3035"
    blocked: np.ndarray | None = field(default=None)

    def __post_init__(self):
        mult = np.array(self.multiplier, dtype=float)
        if mult.ndim != 2 or mult.size == 0:
            raise InvalidLayerError("multiplier grid must be a non-empty 2-D array")
        if not np.all(np.isfinite(mult)) or np.any(mult <= 0):
            raise InvalidLayerError("every multiplier must be finite and positive")
        if not self.cell_size > 0:
            raise ValueError("cell_size must be positive")
        mult.setflags(write=False)
        object.__setattr__(self, "multiplier", mult)
        if self.blocked is not None:
            blocked = np.array(self.blocked, dtype=bool)
            if blocked.shape != mult.shape:
                raise ValueError("blocked mask shape differs from the grid")
            blocked.setflags(write=False)
            object.__setattr__(self, "blocked", blocked)
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))

    @property
    def height(self) -> int:
        return self.multiplier.shape[0]

    @property
    def width(self) -> int:
        return self.multiplier.shape[1]

    @classmethod
    def uniform(cls, width, height, cell_size=1.5, value=1.0, **kw) -> "RasterMap":
        return cls(np.full((height, width), float(value)), cell_size, **kw)

    def contains(self, cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width

    def is_blocked(self, cell) -> bool:
        return self.blocked is not None and bool(self.blocked[cell])

    def cell_center(self, cell) -> tuple[float, float]:
        r, c = cell
        x0, y0 = self.origin
        return (x0 + (c + 0.5) * self.cell_size, y0 + (self.height - r - 0.5) * self.cell_size)

    def cell_of(self, x, y) -> tuple[int, int]:
        """Cell containing the point; points on the outer edge snap inwards."""
        x0, y0 = self.origin
        c = int(math.floor((x - x0) / self.cell_size))
        r = self.height - 1 - int(math.floor((y - y0) / self.cell_size))
        if c == self.width and math.isclose(x, x0 + self.width * self.cell_size):
            c -= 1
        if r == -1 and math.isclose(y, y0 + self.height * self.cell_size):
            r = 0
        if not self.contains((r, c)):
            raise ValueError(f"point ({x}, {y}) lies outside the raster")
        return (r, c)

    def with_multiplier(self, multiplier) -> "RasterMap":
        return RasterMap(multiplier, self.cell_size, self.origin, self.projection, self.blocked)

    def step_cost(self, u, v) -> float:
        diag = u[0] != v[0] and u[1] != v[1]
        mean = 0.5 * (self.multiplier[u] + self.multiplier[v])
        return mean * self.cell_size * (SQRT2 if diag else 1.0)

    @cached_property
    def _graph(self):
        h, w = self.multiplier.shape
        idx = np.arange(h * w).reshape(h, w)
        open_ = np.ones((h, w), bool) if self.blocked is None else ~self.blocked
        rows, cols, data = [], [], []
        for dr, dc in NEIGHBOURS:
            r0, r1 = max(0, -dr), h - max(0, dr)
            c0, c1 = max(0, -dc), w - max(0, dc)
            if r1 <= r0 or c1 <= c0:
                continue
            src = (slice(r0, r1), slice(c0, c1))
            dst = (slice(r0 + dr, r1 + dr), slice(c0 + dc, c1 + dc))
            ok = open_[src] & open_[dst]
            mean = 0.5 * (self.multiplier[src] + self.multiplier[dst])
            step = self.cell_size * (SQRT2 if dr and dc else 1.0)
            rows.append(idx[src][ok])
            cols.append(idx[dst][ok])
            data.append((mean * step)[ok])
        n = h * w
        if not data:
            return coo_matrix((n, n)).tocsr()
        return coo_matrix((np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n)).tocsr()

    def distance_field(self, goals) -> np.ndarray:
        """Least penalty from every cell to each goal; shape (len(goals), h, w)."""
        flat = [r * self.width + c for r, c in goals]
        dist = dijkstra(self._graph, directed=False, indices=flat)
        return np.atleast_2d(dist).reshape(len(flat), self.height, self.width)


@dataclass(frozen=True)
class RouteResult:
    cells: tuple[tuple[int, int], ...]
    penalty: float
    length_km: float

    @property
    def steps(self):
        return list(zip(self.cells[:-1], self.cells[1:]))


def compose_raster(layers, grid: GridSpec, blocked=None) -> RasterMap:
    """Multiply the layer factors cell by cell.

    Cells untouched by every layer keep multiplier 1. CDDA protected areas
    exclude national parks, so where both cover a cell only the national park
    factor applies.
    """
    mult = np.ones(grid.shape)
    parks = np.zeros(grid.shape, bool)
    for layer in layers:
        if layer.values.shape != grid.shape:
            raise InvalidLayerError(
                f"layer {layer.name or layer.kind} has shape {layer.values.shape}, grid is {grid.shape}")
        if layer.kind == "national_park":
            parks |= layer.values.astype(bool)
    for layer in layers:
        factors = layer.factors()
        if layer.kind == "cdda_protected":
            factors = np.where(parks, 1.0, factors)
        mult = mult * factors
    if not np.all(np.isfinite(mult)) or np.any(mult <= 0):
        raise InvalidLayerError("composed multiplier is not finite and positive")
    return RasterMap(mult, grid.cell_size, grid.origin, grid.projection, blocked)


def _route_length(cells, cell_size):
    orth = diag = 0
    for (r0, c0), (r1, c1) in zip(cells[:-1], cells[1:]):
        if r0 != r1 and c0 != c1:
            diag += 1
        else:
            orth += 1
    return orth * cell_size + diag * cell_size * SQRT2


def trace_route(raster: RasterMap, start, goal, dist_to_goal: np.ndarray) -> RouteResult:
    """Walk from ``start`` to ``goal`` along the distance field.

    Among optimal successors the smallest ``(row, col)`` is taken, which yields
    the lexicographically smallest optimal cell sequence.
    """
    start, goal = tuple(start), tuple(goal)
    total = float(dist_to_goal[start])
    if not math.isfinite(total):
        raise NoRouteError(start, goal)
    cells = [start]
    u = start
    while u != goal:
        here = dist_to_goal[u]
        nxt = None
        for dr, dc in NEIGHBOURS:
            v = (u[0] + dr, u[1] + dc)
            if not raster.contains(v) or raster.is_blocked(v):
                continue
            through = raster.step_cost(u, v) + dist_to_goal[v]
            if math.isclose(through, here, rel_tol=1e-10, abs_tol=1e-12):
                nxt = v
                break
        if nxt is None:  # pragma: no cover - distance field inconsistent
            raise NoRouteError(start, goal)
        cells.append(nxt)
        u = nxt
    penalty = float(sum(raster.step_cost(a, b) for a, b in zip(cells[:-1], cells[1:])))
    return RouteResult(tuple(cells), penalty, _route_length(cells, raster.cell_size))


def least_cost_path(raster: RasterMap, start, goal) -> RouteResult:
    """Minimum-penalty 8-connected path between two cells.

    A step costs the mean multiplier of its two cells times the step length
    (cell size, or cell size * sqrt(2) on diagonals).
    """
    start, goal = tuple(int(v) for v in start), tuple(int(v) for v in goal)
    for cell in (start, goal):
        if not raster.contains(cell):
            raise ValueError(f"cell {cell} outside the grid")
        if raster.is_blocked(cell):
            raise NoRouteError(start, goal)
    if start == goal:
        return RouteResult((start,), 0.0, 0.0)
    dist = raster.distance_field([goal])[0]
    return trace_route(raster, start, goal, dist)


# ---------------------------------------------------------------------------
# persistence: ESRI ASCII grid with an extra ``projection`` header line
# ---------------------------------------------------------------------------

NODATA = -9999.0


def write_raster(raster: RasterMap, path) -> None:
    """Row-major ASCII grid; blocked cells are written as NODATA."""
    data = np.array(raster.multiplier)
    if raster.blocked is not None:
        data[raster.blocked] = NODATA
    lines = [
        f"ncols {raster.width}",
        f"nrows {raster.height}",
        f"xllcorner {raster.origin[0]!r}",
        f"yllcorner {raster.origin[1]!r}",
        f"cellsize {raster.cell_size!r}",
        f"NODATA_value {NODATA!r}",
        f"projection {raster.projection}",
    ]
    lines += [" ".join(repr(float(v)) for v in row) for row in data]
    Path(path).write_text("\n".join(lines) + "\n")


def read_ascii_grid(path):
    """Parse an ESRI ASCII grid; returns (array, header dict)."""
    header = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            key = parts[0].lower()
            if not rows and key in {"ncols", "nrows", "xllcorner", "yllcorner", "xllcenter",
                                    "yllcenter", "cellsize", "nodata_value", "projection"}:
                header[key] = parts[1] if len(parts) > 1 else ""
                continue
            rows.append([float(v) for v in parts])
    data = np.array(rows, dtype=float)
    if data.shape != (int(header["nrows"]), int(header["ncols"])):
        raise ValueError(f"{path}: grid body does not match ncols/nrows")
    return data, header


def read_raster(path) -> RasterMap:
    data, header = read_ascii_grid(path)
    cs = float(header["cellsize"])
    if "xllcorner" in header:
        origin = (float(header["xllcorner"]), float(header["yllcorner"]))
    else:
        origin = (float(header["xllcenter"]) - cs / 2, float(header["yllcenter"]) - cs / 2)
    nodata = float(header.get("nodata_value", NODATA))
    blocked = data == nodata
    data = np.where(blocked, 1.0, data)
    return RasterMap(data, cs, origin, header.get("projection", "EPSG:3035"),
                     blocked if blocked.any() else None)
