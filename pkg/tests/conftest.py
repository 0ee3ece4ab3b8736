import random
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import Toy  # noqa: E402

from co2net.costs import Trend  # noqa: E402
from co2net.graph import Arc, CandidateGraph, Node  # noqa: E402
from co2net.planning import Planner  # noqa: E402
from co2net.scenarios import HorizonParams, ScenarioSet  # noqa: E402
from co2net.solver import SolverOptions  # noqa: E402

# continuous concave two-piece table (EUR per Mt/a km, EUR/km, Mt/a)
TWO_TRENDS = [(120000.0, 280000.0, 0.0, 1.5), (45000.0, 392500.0, 1.5, 6.0)]


def random_toy(seed, max_arcs=4, n_scenarios=None, relaxed=False, om_no_overlap=False) -> Toy:
    """Small directed instance: emitters feeding one sink, 2-3 period-1 scenarios.

    Every emitter gets a path towards the sink; extra arcs (possibly
    reversed) are added up to ``max_arcs``.
    """
    rng = random.Random(seed)
    n_em = rng.choice([2, 2, 3]) if max_arcs >= 3 else 1
    emitters = [f"E{k + 1}" for k in range(n_em)]
    nodes = emitters + ["K"]
    kinds = {e: "emitter" for e in emitters}
    kinds["K"] = "sink"

    arcs = {}
    order = emitters[:]
    rng.shuffle(order)
    attached = ["K"]
    for e in order:
        target = rng.choice(attached)
        arcs[(e, target)] = round(rng.uniform(5, 40), 3)
        attached.append(e)
    pairs = [(a, b) for a in nodes for b in nodes if a != b and (a, b) not in arcs]
    rng.shuffle(pairs)
    for a, b in pairs:
        if len(arcs) >= max_arcs:
            break
        length = arcs.get((b, a), round(rng.uniform(5, 40), 3))
        if rng.random() < 0.6:
            arcs[(a, b)] = length
    arc_list = [(i, j, l) for (i, j), l in sorted(arcs.items())]

    d0 = {"K": -8.0}
    for e in emitters:
        if rng.random() < 0.8 or e == emitters[0]:
            d0[e] = round(rng.uniform(0.2, 1.6), 3)
    n_s = n_scenarios or rng.choice([2, 3])
    d1 = {"S1": dict(d0)}
    for k in range(2, n_s + 1):
        t = {"K": -8.0}
        for e in emitters:
            base = d0.get(e, 0.0)
            kind = rng.random()
            if base == 0.0:
                val = round(rng.uniform(0.3, 1.2), 3) if kind < 0.7 else 0.0
            elif kind < 0.6:
                val = round(base * rng.uniform(1.1, 2.0), 3)
            elif kind < 0.8:
                val = base
            else:
                val = round(base * rng.uniform(0.5, 0.9), 3)
            if val > 0:
                t[e] = val
        d1[f"S{k}"] = t
    return Toy(nodes, kinds, arc_list, list(TWO_TRENDS), d0, d1, relaxed=relaxed,
               om_no_overlap=om_no_overlap, label=f"toy{seed}")


def toy_graph(toy) -> CandidateGraph:
    nodes = [Node(n, toy.kinds[n], float(k), 0.0) for k, n in enumerate(toy.nodes)]
    return CandidateGraph(nodes, [Arc(i, j, l) for i, j, l in toy.arcs])


def toy_trends(toy):
    return [Trend(k, *t) for k, t in enumerate(toy.trends)]


def toy_scenarios(toy) -> ScenarioSet:
    return ScenarioSet(toy.kinds, "S1", toy.d0, toy.d1)


def toy_horizon(toy) -> HorizonParams:
    return HorizonParams(toy.n1, toy.n2, toy.tau, toy.om, toy.o2_max, toy.o2_cost)


def toy_planner(toy, backend="highs", **kw) -> Planner:
    return Planner(toy_graph(toy), toy_trends(toy), toy_scenarios(toy), toy_horizon(toy),
                   SolverOptions(backend=backend, **kw), relaxed_coupling=toy.relaxed,
                   om_no_overlap=toy.om_no_overlap)


@pytest.fixture
def toy_factory():
    return random_toy


# -- acceptance bookkeeping ---------------------------------------------------

ACCEPTANCE = {}


@contextmanager
def criterion(number, title):
    """Record PASS/FAIL and wall time of one acceptance criterion.

    The yielded dict takes ``extra_seconds`` for work done outside the block.
    """
    start = time.perf_counter()
    info = {"extra_seconds": 0.0}
    ok = False
    try:
        yield info
        ok = True
    finally:
        ACCEPTANCE[number] = (title, ok, time.perf_counter() - start + info["extra_seconds"])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, seconds = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}  ({seconds:.1f} s)")
