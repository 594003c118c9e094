import functools
import time

import pytest

from dosim.kinds import NodeKind
from dosim.scenario import load_bundled
from dosim.sim_core import Engine, Link, Network, Node, Topology
from dosim.simulation import run_scenario


def line_topology(capacity=100.0, latency=0.01, queue_limit=64, n_routers=0, **host_kw):
    """A -- R1 -- ... -- Rn -- B"""
    names = ["A"] + [f"R{i}" for i in range(1, n_routers + 1)] + ["B"]
    nodes = [Node("A", **host_kw), Node("B", **host_kw)]
    nodes += [Node(r, NodeKind.ROUTER) for r in names[1:-1]]
    links = [Link(f"l{i}", u, v, capacity, queue_limit, latency)
             for i, (u, v) in enumerate(zip(names, names[1:]))]
    return Topology(nodes, links)


@pytest.fixture
def line_net():
    def make(**kw):
        engine = Engine()
        return engine, Network(engine, line_topology(**kw))
    return make


@functools.lru_cache(maxsize=None)
def bundled_run(name, seed=None, blind=False):
    """Run a shipped scenario once per test session; returns (scenario, report, log, seconds)."""
    scenario = load_bundled(name)
    t0 = time.perf_counter()
    report, log = run_scenario(scenario, seed, blind)
    return scenario, report, log, time.perf_counter() - t0


@pytest.fixture
def run_bundled():
    return bundled_run


# --- acceptance reporting --------------------------------------------------------------

ACCEPTANCE = {}


@pytest.fixture
def criterion(request):
    """Record a criterion outcome; one PASS/FAIL line per criterion is printed at the end."""
    def record(number, title):
        ACCEPTANCE.setdefault(number, [title, True])
        request.node._criterion = number
    return record


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    number = getattr(item, "_criterion", None)
    if number is not None and rep.when == "call":
        ACCEPTANCE[number][1] = ACCEPTANCE[number][1] and rep.passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok = ACCEPTANCE[number]
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"{verdict} criterion {number}: {title}")
