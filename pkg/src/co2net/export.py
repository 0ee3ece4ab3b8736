"""GeoJSON and delimited-table exports of plans."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .economics import RegretReport


def upgrade_op(rec, built_before: bool) -> str:
    if rec.option == 2:
        return "pressure_increase"
    if rec.trend is None:
        return "none"
    return "looping" if built_before else "new_line"


def _line(graph, key):
    arc = graph.arc(*key)
    if arc.polyline:
        coords = [list(p) for p in arc.polyline]
    else:
        a, b = graph.nodes[arc.i], graph.nodes[arc.j]
        coords = [[a.x, a.y], [b.x, b.y]]
    return arc, {"type": "LineString", "coordinates": coords}


def plan_features(graph, plan, period: int, scenario=None) -> list[dict]:
    """Features of one period; period 1 lists only arcs touched by an upgrade."""
    feats = []
    if period == 0:
        for key, (c, q) in sorted(plan.first_stage.items()):
            arc, geom = _line(graph, key)
            feats.append({"type": "Feature", "geometry": geom, "properties": {
                "period": 0, "scenario": None, "i": arc.i, "j": arc.j, "length_km": arc.length,
                "trend": c, "flow": q, "upgrade_op": "new_line"}})
        return feats
    for key, rec in sorted(plan.second_stage.get(scenario, {}).items()):
        op = upgrade_op(rec, key in plan.first_stage)
        if op == "none":
            continue
        arc, geom = _line(graph, key)
        feats.append({"type": "Feature", "geometry": geom, "properties": {
            "period": 1, "scenario": scenario, "i": arc.i, "j": arc.j, "length_km": arc.length,
            "trend": rec.trend, "flow": rec.total_flow, "new_flow": rec.new_flow,
            "restructure_eur": rec.restructure, "upgrade_op": op}})
    return feats


def feature_collection(features, crs, config_hash=None) -> dict:
    doc = {"type": "FeatureCollection", "crs": {"type": "name", "properties": {"name": crs}},
           "features": features}
    if config_hash:
        doc["config_hash"] = config_hash
    return doc


def write_geojson(graph, plan, out_dir, stem, config_hash=None) -> list[Path]:
    """One collection for period 0 and one per scenario for period 1."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    jobs = [(f"{stem}_t0.geojson", plan_features(graph, plan, 0))]
    for s in plan.scenarios:
        jobs.append((f"{stem}_t1_{s}.geojson", plan_features(graph, plan, 1, s)))
    for name, feats in jobs:
        path = out_dir / name
        doc = feature_collection(feats, graph.crs, config_hash)
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
        written.append(path)
    return written


BREAKDOWN_FIELDS = ("i0", "o0", "i1", "r", "o1", "total", "best", "regret")


def write_breakdown_csv(path, breakdowns: dict, config_hash=None, scale=1.0, digits=6) -> None:
    """One row per scenario with the cost components of a plan."""
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        w = csv.writer(fh)
        w.writerow(("scenario",) + BREAKDOWN_FIELDS)
        for s, b in breakdowns.items():
            row = [s]
            for name in BREAKDOWN_FIELDS:
                v = getattr(b, name)
                row.append("" if v is None else f"{v / scale:.{digits}f}")
            w.writerow(row)


def write_report_tables(report: RegretReport, out_dir, config_hash=None, scale=1e6, digits=3):
    """Totals and potential/regret/benefit tables (Mio EUR, 0.001 rounding)."""
    out_dir = Path(out_dir)
    totals, regret = out_dir / "totals.csv", out_dir / "regret.csv"
    report.write_totals_csv(totals, scale, digits)
    report.write_regret_csv(regret, scale, digits)
    if config_hash:
        for p in (totals, regret):
            p.write_text(f"# config_hash={config_hash}\n" + p.read_text())
    return totals, regret


def read_table(path) -> list[dict]:
    """Rows of a table written by this module, skipping comment lines."""
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))
