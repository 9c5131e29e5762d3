"""Shared, expensive fixtures: orbit branches at the delay used for the
continuation diagrams, and the arcs obtained by switching at their pitchforks."""

import os

import pytest

from hkb_delay import continuation as cont
from hkb_delay.model import HkbParams, ModeKind

TAU_CONT = 0.1926
A_RANGE = (-0.7, 0.4)


@pytest.fixture(scope="session")
def orbit_branches():
    p = HkbParams(tau=TAU_CONT)
    out = {}
    for mode in ModeKind:
        orbit = cont.periodic_orbit_from_hopf(p.replace(a=A_RANGE[0]), mode)
        out[mode] = cont.continue_orbit_branch(orbit, "a", (orbit.params.a - 1e-3, A_RANGE[1]),
                                               label=mode.value)
    return out


def pitchforks(branch):
    return [e for e in branch.events if e.kind is cont.EventKind.PITCHFORK]


@pytest.fixture(scope="session")
def switched_arcs(orbit_branches):
    """Arc from the first in-phase pitchfork and arc from the second one (both signs)."""
    ip = orbit_branches[ModeKind.IN_PHASE]
    pf = pitchforks(ip)
    arcs = {}
    for k in (0, 1):
        for sign in (1, -1):
            arcs[(k, sign)] = cont.detect_and_switch_pitchfork(ip, pf[k], sign=sign, rng=A_RANGE,
                                                               max_points=300)
    return arcs


def crossing_points(branch, a_target):
    """Indices of branch points just after the branch crosses ``a = a_target``."""
    a = branch.param_values("a")
    return [i for i in range(1, a.size) if (a[i - 1] - a_target) * (a[i] - a_target) <= 0]


# --- acceptance summary: one line per criterion ----------------------------------

_CRITERIA: dict[int, list] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.split("::")[-1]
    if "test_acceptance" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    if report.when == "call" or report.outcome != "passed":
        num = int(name.split("_")[2])
        title = name.split("_", 3)[3].split("[")[0].replace("_", " ")
        entry = _CRITERIA.setdefault(num, [title, []])
        if not title.startswith(entry[0]):
            # several tests per criterion: keep the words their names share
            t = os.path.commonprefix([entry[0], title])
            entry[0] = t[:t.rfind(" ")] if not t.endswith(" ") else t.rstrip()
        entry[1].append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        title, outcomes = _CRITERIA[num]
        ok = all(o == "passed" for o in outcomes)
        terminalreporter.write_line(f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  {title}")
