import os

import pytest
from hypothesis import HealthCheck, settings

from hjnet import (ConjugateEvaluator, builtin_family, maximal_limiter, path_network,
                   quadratic_minus_potential, star_network)

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def quadratic_setup(net, horizon=1.0, potential=0.0):
    fam = builtin_family(net, horizon, {a: quadratic_minus_potential(potential) for a in net.arcs})
    ce = ConjugateEvaluator(fam)
    return fam, ce, maximal_limiter(net, ce, horizon)


@pytest.fixture(scope="session")
def star():
    return star_network(3)


@pytest.fixture(scope="session")
def unit_arc():
    return path_network([1.0])


@pytest.fixture(scope="session")
def star_quadratic(star):
    return quadratic_setup(star)


@pytest.fixture(scope="session")
def arc_quadratic(unit_arc):
    return quadratic_setup(unit_arc)


# -- acceptance report ---------------------------------------------------------

_ACCEPTANCE: dict = {}


@pytest.fixture
def acceptance():
    """``record(criterion, passed, detail)``; lines are printed in the terminal summary."""

    def record(criterion, passed, detail=""):
        _ACCEPTANCE.setdefault(criterion, []).append((bool(passed), detail))
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_ACCEPTANCE, key=lambda c: (int(c.split()[0]), c)):
        parts = _ACCEPTANCE[crit]
        ok = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts if d)
        terminalreporter.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'}  {detail}")
