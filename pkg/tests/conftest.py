from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from bisis import IntegratorConfig, VirusParams
from bisis.generators import random_connected_graph
from bisis.graph import Graph, load_graph

DATA = Path(__file__).resolve().parents[1] / "src" / "bisis" / "data"

# Looser ODE stopping than the library default; Newton certifies the residual.
FAST = IntegratorConfig(convergence_tol=1e-9, step_fraction=0.05, max_time=5e4)


def fixture_graph(name: str) -> Graph:
    return load_graph(DATA / f"{name}.edges")


def corridor_params(fraction: float = 0.5) -> tuple[VirusParams, VirusParams]:
    """A point inside the corridor pair's coexistence window (tau1 lambda(A) = 6)."""
    from bisis.sweep import coexistence_corridor

    g_a, g_b = fixture_graph("corridor_a"), fixture_graph("corridor_b")
    t1 = 6.0 / g_a.spectral_radius
    lo, hi = coexistence_corridor(g_a, g_b, "tau2", t1)
    return VirusParams.from_tau(t1), VirusParams.from_tau(lo + fraction * (hi - lo))


def random_pair(rng: np.random.Generator, n_lo: int = 5, n_hi: int = 15) -> tuple[Graph, Graph]:
    n = int(rng.integers(n_lo, n_hi))
    return (random_connected_graph(n, rng.uniform(0.2, 0.7), rng),
            random_connected_graph(n, rng.uniform(0.2, 0.7), rng))


@pytest.fixture
def data_dir() -> Path:
    return DATA


@pytest.fixture
def corridor():
    return fixture_graph("corridor_a"), fixture_graph("corridor_b")


# Acceptance criteria: tests marked ``criterion(n, title)`` roll up into one
# PASS/FAIL line per criterion at the end of the run.  An expected failure
# still counts as FAIL.
_criteria: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.outcome != "passed"):
        return
    number, title = mark.args
    entry = _criteria.setdefault(number, [title, True])
    entry[1] = entry[1] and rep.outcome == "passed" and not hasattr(rep, "wasxfail")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok = _criteria[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}")
