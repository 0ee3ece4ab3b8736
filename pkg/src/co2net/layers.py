"""Loaders that turn geodata into grid-aligned :class:`GeoLayer` objects.

Vector features come as GeoJSON (coordinates already in the grid's projected
km system; no reprojection is done). Gridded measurements such as slope or
population density come as ESRI ASCII grids matching the target grid.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import shapely
from shapely.geometry import shape

from .raster import GeoLayer, GridSpec, InvalidLayerError, read_ascii_grid


def cell_boxes(grid: GridSpec):
    """Shapely boxes for all cells, shaped like the grid (row 0 = north)."""
    h, w = grid.shape
    x0, y0 = grid.origin
    cs = grid.cell_size
    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    xmin = x0 + cols * cs
    ymin = y0 + (h - 1 - rows) * cs
    return shapely.box(xmin, ymin, xmin + cs, ymin + cs)


def rasterize_geometries(geometries, grid: GridSpec) -> np.ndarray:
    """Boolean coverage: cells whose interior meets any of the geometries."""
    geometries = [g for g in geometries if g is not None and not g.is_empty]
    if not geometries:
        return np.zeros(grid.shape, bool)
    merged = shapely.union_all(geometries)
    boxes = cell_boxes(grid)
    return shapely.intersects(merged, boxes) & ~shapely.touches(merged, boxes)


def load_geojson(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("type") == "FeatureCollection":
        return [shape(f["geometry"]) for f in doc["features"] if f.get("geometry")]
    if doc.get("type") == "Feature":
        return [shape(doc["geometry"])]
    return [shape(doc)]


def layer_from_geojson(kind, path, grid: GridSpec) -> GeoLayer:
    return GeoLayer(kind, rasterize_geometries(load_geojson(path), grid), name=str(path))


def layer_from_ascii_grid(kind, path, grid: GridSpec) -> GeoLayer:
    data, _ = read_ascii_grid(path)
    if data.shape != grid.shape:
        raise InvalidLayerError(f"{path}: grid {data.shape} does not match target {grid.shape}")
    return GeoLayer(kind, data, name=str(path))


def layer_from_spec(spec: dict, grid: GridSpec, base: Path = Path(".")) -> GeoLayer:
    """Build a layer from one entry of the run configuration.

    Exactly one source key is expected:

    ``geojson``  path to a vector file
    ``grid``     path to an ASCII grid of per-cell values
    ``values``   inline nested list of per-cell values (or a 0/1 mask)
    ``cells``    list of ``[row, col]`` covered by the feature
    ``rect``     ``[row0, col0, row1, col1]`` inclusive block of covered cells
    """
    kind = spec["kind"]
    sources = [k for k in ("geojson", "grid", "values", "cells", "rect") if k in spec]
    if len(sources) != 1:
        raise InvalidLayerError(f"layer {kind!r}: give exactly one of geojson/grid/values/cells/rect")
    src = sources[0]
    if src == "geojson":
        return layer_from_geojson(kind, base / spec["geojson"], grid)
    if src == "grid":
        return layer_from_ascii_grid(kind, base / spec["grid"], grid)
    if src == "values":
        values = np.asarray(spec["values"], dtype=float)
        if values.shape != grid.shape:
            raise InvalidLayerError(f"layer {kind!r}: values shape {values.shape} != grid {grid.shape}")
        return GeoLayer(kind, values, name=spec.get("name", kind))
    mask = np.zeros(grid.shape, bool)
    if src == "cells":
        for r, c in spec["cells"]:
            mask[r, c] = True
    else:
        r0, c0, r1, c1 = spec["rect"]
        mask[r0:r1 + 1, c0:c1 + 1] = True
    if kind in ("population_density_band", "slope"):
        value = float(spec.get("value", 0.0))
        return GeoLayer(kind, np.where(mask, value, 0.0), name=spec.get("name", kind))
    return GeoLayer(kind, mask, name=spec.get("name", kind))
