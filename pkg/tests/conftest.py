import time

import pytest

from tugobstacle import harness
from tugobstacle.dpp import solve_dpp

CRITERIA = {
    1: "DPP fixed point within budget",
    2: "monotone iteration from both sides",
    3: "comparison principle",
    4: "LCP oracle equivalence (p=2)",
    5: "game value matches solver",
    6: "almost-sure termination",
    7: "mean-value expansion",
    8: "convergence trend",
    9: "boundary oscillation trend",
    10: "reproducibility",
}

_outcomes: dict[int, list[tuple[str, str]]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    crit = dict(report.user_properties).get("criterion")
    if crit is not None:
        _outcomes.setdefault(crit, []).append((report.nodeid, report.outcome))


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_setup(item):
    marker = item.get_closest_marker("acceptance")
    if marker is not None:
        item.user_properties.append(("criterion", marker.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit, name in CRITERIA.items():
        results = _outcomes.get(crit)
        if not results:
            tr.write_line(f"criterion {crit:2d} [{name}]: NOT RUN")
            continue
        ok = all(outcome == "passed" for _, outcome in results)
        tr.write_line(f"criterion {crit:2d} [{name}]: {'PASS' if ok else 'FAIL'}")
        if not ok:
            for nodeid, outcome in results:
                if outcome != "passed":
                    tr.write_line(f"    {outcome}: {nodeid}")


class SolveCache:
    """Timed solves shared across tests (the 2D ones take seconds each)."""

    def __init__(self):
        self._store = {}
        self._ladders = {}

    def solve(self, family_name: str, p: float, eps: float, h_ratio: float = 1 / 6, **kw):
        key = (family_name, p, eps, h_ratio, tuple(sorted(kw.items())))
        if key not in self._store:
            fam = harness.FAMILIES[family_name](p)
            start = time.perf_counter()
            inst = harness.make_instance(fam, eps, eps * h_ratio)
            method = kw.pop("method", "jacobi" if inst.grid.dim == 1 else "anderson")
            u, report = solve_dpp(inst, method=method, **kw)
            self._store[key] = (fam, inst, u, report, time.perf_counter() - start)
        return self._store[key]

    def ladder(self, family_name: str, p: float, eps_ladder, method=None):
        key = (family_name, p, tuple(eps_ladder), method)
        if key not in self._ladders:
            fam = harness.FAMILIES[family_name](p)
            if method is None:
                method = "jacobi" if fam.domain.dim == 1 else "anderson"
            cfg = harness.ExperimentConfig(fam, eps_ladder, method=method)
            self._ladders[key] = harness.run_convergence(cfg, keep_solutions=True)
        return self._ladders[key]


@pytest.fixture(scope="session")
def solves():
    return SolveCache()
