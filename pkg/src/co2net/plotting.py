"""Static figures: cost curve with trends, network maps and the regret chart."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .costs import unit_cost_from_flow  # noqa: E402
from .export import upgrade_op  # noqa: E402

ACTION_COLOURS = {"looping": "tab:orange", "new_line": "tab:purple", "pressure_increase": "tab:red"}


def _save(fig, path, config_hash=None):
    meta = {"Software": "co2net"}
    if config_hash:
        meta["Description"] = f"config {config_hash}"
    fig.savefig(path, dpi=120, metadata=meta)
    plt.close(fig)


def plot_cost_curve(fit, hydraulics, costs, flow_max, path, config_hash=None):
    """Exact cost curve (EUR/km) against the fitted trends."""
    q = np.linspace(0.0, flow_max, 400)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(q, unit_cost_from_flow(q, hydraulics, costs) / 1e6, color="k", lw=2, label="exact")
    for t in fit:
        seg = np.linspace(t.q_min, min(t.q_max, flow_max), 50)
        ax.plot(seg, t(seg) / 1e6, "--", lw=1.5, label=f"trend {t.index}")
    ax.set_xlabel("flow [Mt/a]")
    ax.set_ylabel("cost [Mio EUR/km]")
    err = getattr(fit, "max_rel_error", float("nan"))
    if np.isfinite(err):
        ax.set_title(f"max relative error {100 * err:.2f}%")
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path, config_hash)


def plot_network(graph, path, raster=None, plan=None, scenario=None, config_hash=None, title=None):
    """Map of the candidate graph; built arcs drawn by flow, period-1 actions coloured.

    Without ``scenario`` only the period-0 network is highlighted.
    """
    fig, ax = plt.subplots(figsize=(6, 5))
    if raster is not None:
        x0, y0 = raster.origin
        extent = (x0, x0 + raster.width * raster.cell_size, y0, y0 + raster.height * raster.cell_size)
        ax.imshow(np.log10(raster.multiplier), extent=extent, cmap="Greys", alpha=0.5, origin="upper")

    def line(arc):
        if arc.polyline:
            return np.array(arc.polyline)
        a, b = graph.nodes[arc.i], graph.nodes[arc.j]
        return np.array([(a.x, a.y), (b.x, b.y)])

    for arc in graph.arcs:
        if arc.i < arc.j:
            xy = line(arc)
            ax.plot(xy[:, 0], xy[:, 1], color="0.75", lw=0.8, zorder=1)

    if plan is not None:
        flows = [q for _, q in plan.first_stage.values()] or [1.0]
        scale = 4.0 / max(flows)
        for key, (_, q) in sorted(plan.first_stage.items()):
            xy = line(graph.arc(*key))
            ax.plot(xy[:, 0], xy[:, 1], color="k", lw=1 + scale * q, zorder=2)
        if scenario is not None:
            for key, rec in sorted(plan.second_stage.get(scenario, {}).items()):
                op = upgrade_op(rec, key in plan.first_stage)
                if op == "none":
                    continue
                xy = line(graph.arc(*key))
                ax.plot(xy[:, 0], xy[:, 1], color=ACTION_COLOURS[op], lw=2, zorder=3, label=op)

    for kind, marker, colour in (("emitter", "o", "tab:blue"), ("sink", "s", "tab:green"),
                                 ("transport", ".", "0.4")):
        pts = np.array([(n.x, n.y) for n in graph.nodes.values() if n.kind == kind])
        if len(pts):
            ax.scatter(pts[:, 0], pts[:, 1], marker=marker, c=colour, s=40 if kind != "transport" else 10,
                       zorder=4, label=kind)
    handles, labels = ax.get_legend_handles_labels()
    unique = dict(zip(labels, handles))
    ax.legend(unique.values(), unique.keys(), frameon=False, fontsize=8, loc="best")
    ax.set_aspect("equal")
    ax.set_xlabel("x [km]")
    ax.set_ylabel("y [km]")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    _save(fig, path, config_hash)


def plot_regret(report, path, scale=1e6, config_hash=None):
    """Grouped bars of potential, regret and benefit per scenario."""
    names = [r.scenario for r in report.rows]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(6, 4))
    for k, attr in enumerate(("potential", "regret", "benefit")):
        ax.bar(x + (k - 1) * 0.27, [getattr(r, attr) / scale for r in report.rows], 0.27, label=attr)
    ax.axhline(0, color="k", lw=0.8)
    ax.set_xticks(x)
    ax.set_xticklabels(names)
    ax.set_ylabel("Mio EUR" if scale == 1e6 else "EUR")
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path, config_hash)
