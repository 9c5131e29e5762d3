import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from hkb_delay import linear_stability as ls
from hkb_delay.model import HkbParams, ModeKind

OMEGA = 2.6 * math.pi


def chebyshev_spectrum(p: HkbParams, mode: ModeKind, n: int = 40):
    """Eigenvalues of a Chebyshev collocation discretisation of the DDE generator.

    Independent of the Newton root search: the state x = (eta, eta') on
    [-tau, 0] is discretised on Chebyshev points and the boundary row carries
    the DDE itself.
    """
    k = np.arange(n + 1)
    x = np.cos(np.pi * k / n)
    c = np.where((k == 0) | (k == n), 2.0, 1.0) * (-1.0) ** k
    X = np.tile(x, (n + 1, 1)).T
    dX = X - X.T
    D = np.outer(c, 1 / c) / (dX + np.eye(n + 1))
    D -= np.diag(D.sum(axis=1))
    D *= 2.0 / p.tau                          # theta = tau (x - 1) / 2 on [-tau, 0]
    A0 = np.array([[0.0, 1.0], [-p.omega ** 2, p.gamma + p.a]])
    A1 = np.array([[0.0, 0.0], [0.0, -mode.sign * p.a]])
    m = 2 * (n + 1)
    L = np.kron(D, np.eye(2))
    # node 0 is theta = 0, node n is theta = -tau
    L[0:2, :] = 0.0
    L[0:2, 0:2] = A0
    L[0:2, 2 * n:2 * n + 2] += A1
    ev = np.linalg.eigvals(L)
    return ev[np.argsort(-ev.real)]


def test_no_frequencies_when_condition_fails():
    assert ls.critical_frequencies(HkbParams(gamma=10.0, a=0.0, omega=1.0)) is None


def test_frequencies_and_quartic_residual():
    p = HkbParams(a=-2.0)
    fr = ls.critical_frequencies(p)
    assert fr.nu_plus > fr.nu_minus > 0
    assert p.gamma * (p.gamma + 2 * p.a) < 0
    for nu in (fr.nu_plus, fr.nu_minus):
        q = nu ** 4 + ((p.gamma + p.a) ** 2 - p.a ** 2 - 2 * p.omega ** 2) * nu ** 2 + p.omega ** 4
        assert abs(q) <= 1e-9 * p.omega ** 4


def test_frequencies_at_first_double_hopf():
    fr = ls.critical_frequencies(HkbParams(a=-0.68609))
    # at HH1 nu_plus is the anti-phase and nu_minus the in-phase frequency
    assert fr.nu_plus == pytest.approx(8.51761, abs=2e-4)
    assert fr.nu_minus == pytest.approx(7.83301, abs=2e-4)


@settings(max_examples=300, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.1, 20))
def test_frequencies_need_gamma_times_gamma_plus_2a_negative(gamma, a, omega):
    if ls.critical_frequencies(HkbParams(gamma=gamma, a=a, omega=omega)) is not None:
        assert gamma * (gamma + 2 * a) < 0


def test_crossing_delays_errors():
    with pytest.raises(ZeroDivisionError):
        ls.crossing_delays(HkbParams(a=0.0), ModeKind.IN_PHASE, 3)
    with pytest.raises(ValueError):
        ls.crossing_delays(HkbParams(), ModeKind.IN_PHASE, -1)
    assert ls.crossing_delays(HkbParams(gamma=10.0, a=1.0, omega=1.0), ModeKind.IN_PHASE, 2) is None


@pytest.mark.parametrize("mode", list(ModeKind))
@pytest.mark.parametrize("a", [-2.0, -0.68609, -5.0])
def test_crossing_delays_are_roots_and_evenly_spaced(mode, a):
    p = HkbParams(a=a)
    cd = ls.crossing_delays(p, mode, 5)
    for taus, nu in ((cd.taus_destabilizing, cd.nu_plus), (cd.taus_stabilizing, cd.nu_minus)):
        assert np.allclose(np.diff(taus), 2 * math.pi / nu, atol=1e-12)
        for tau in taus:
            assert abs(ls.characteristic(1j * nu, p.replace(tau=tau), mode)) <= 1e-8
    assert 0 <= cd.theta1 < 2 * math.pi and 0 <= cd.theta2 < 2 * math.pi


def test_first_anti_phase_crossings_bracket_by_root_scan():
    p = HkbParams(a=-2.0)
    cd = ls.crossing_delays(p, ModeKind.ANTI_PHASE, 2)
    for tau, sign in ((cd.taus_destabilizing[0], 1), (cd.taus_stabilizing[0], -1)):
        lo = ls.rightmost_roots(p.replace(tau=tau - 1e-3), ModeKind.ANTI_PHASE, 1)[0]
        hi = ls.rightmost_roots(p.replace(tau=tau + 1e-3), ModeKind.ANTI_PHASE, 1)[0]
        assert lo.real * hi.real < 0 or min(abs(lo.real), abs(hi.real)) < 1e-2


@pytest.mark.parametrize("a", [-2.0, -0.7, -4.0])
def test_crossing_direction_signs_and_root_tracking(a):
    p = HkbParams(a=a)
    assert ls.crossing_direction(p, "plus") == 1
    assert ls.crossing_direction(p, "minus") == -1
    for mode in ModeKind:
        cd = ls.crossing_delays(p, mode, 0)
        tau = cd.taus_destabilizing[0]
        lam = 1j * cd.nu_plus
        d = ls.eigenvalue_sensitivity(lam, p.replace(tau=tau), mode, "tau")
        assert d.real > 0
    with pytest.raises(ValueError):
        ls.crossing_direction(HkbParams(gamma=10.0, a=1.0, omega=1.0), "plus")


def test_count_unstable_closed_cases():
    for tau in (0.0, 0.3, 1.7):
        p = HkbParams(gamma=-0.1, a=0.0, tau=tau)
        for mode in ModeKind:
            assert ls.count_unstable_roots(p, mode) == 0
    p = HkbParams(a=-2.0, tau=0.0)
    assert ls.count_unstable_roots(p, ModeKind.ANTI_PHASE) == 0
    assert ls.count_unstable_roots(p, ModeKind.IN_PHASE) == 2


def test_count_unstable_boundary_error():
    p = HkbParams(a=-2.0)
    tau = ls.crossing_delays(p, ModeKind.IN_PHASE, 0).taus_destabilizing[0]
    with pytest.raises(ls.StabilityBoundaryError):
        ls.count_unstable_roots(p.replace(tau=tau), ModeKind.IN_PHASE)


@pytest.mark.parametrize("tau", np.linspace(0.02, 1.98, 25))
@pytest.mark.parametrize("mode", list(ModeKind))
def test_count_matches_roots_at_tau_04_scan(tau, mode):
    p = HkbParams(a=-2.0, tau=float(tau))
    assert ls.count_unstable_roots(p, mode) == ls.count_unstable_by_roots(p, mode)


def test_rightmost_roots_tau_zero_closed_form():
    p = HkbParams(a=-1.0)
    roots = ls.rightmost_roots(p, ModeKind.IN_PHASE, 2)
    exact = np.roots([1.0, -p.gamma, p.omega ** 2])
    assert np.allclose(sorted(roots, key=lambda z: z.imag), sorted(exact, key=lambda z: z.imag))


def test_rightmost_roots_at_first_double_hopf():
    p = HkbParams(a=-0.68609, tau=0.19214)
    ri = ls.rightmost_roots(p, ModeKind.IN_PHASE, 2)
    ra = ls.rightmost_roots(p, ModeKind.ANTI_PHASE, 2)
    assert max(abs(z.imag) for z in ri) == pytest.approx(7.83301, abs=1e-4)
    assert max(abs(z.imag) for z in ra) == pytest.approx(8.51761, abs=1e-4)
    assert max(abs(z.real) for z in ri + ra) < 1e-4
    for z in ri:
        assert abs(ls.characteristic(z, p, ModeKind.IN_PHASE)) <= 1e-10


@settings(max_examples=20, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-3, 0.5), st.floats(0.05, 0.6))
def test_rightmost_roots_match_spectral_discretisation(gamma, a, tau):
    assume(abs(a) > 1e-3)
    p = HkbParams(gamma=gamma, a=a, tau=tau)
    for mode in ModeKind:
        z = ls.rightmost_roots(p, mode, 1)[0]
        ev = chebyshev_spectrum(p, mode)
        assert np.min(np.abs(ev - z)) < 1e-6 * max(1.0, abs(z))
        assert ev[0].real == pytest.approx(z.real, abs=1e-6)


def test_quartic_limit_and_turning_indicator():
    p = HkbParams(tau=0.0)
    assert np.all(ls.turning_point_indicator(p, np.linspace(0.1, 50, 20)) > 0)
    nu = OMEGA
    q = HkbParams(a=-0.5, gamma=0.641)
    q = q.replace(tau=2.0 / (q.gamma + q.a))
    assert ls.turning_point_indicator(q, nu) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        ls.turning_point_indicator(p, 0.0)


def test_gamma_a_boundary_residual_and_limits():
    tau = 0.1
    for mode in ModeKind:
        curves = ls.gamma_a_boundary(tau, OMEGA, mode, (1.0, 30.0), 400)
        assert curves
        for c in curves:
            nu = np.linspace(1.0, 30.0, 400)
            for g, a in c.points[::37]:
                k = np.argmin(np.abs(ls.gamma_a_parametrisation(nu, tau, OMEGA, mode)[0] - g)
                              + np.abs(ls.gamma_a_parametrisation(nu, tau, OMEGA, mode)[1] - a))
                val = ls.characteristic(1j * nu[k], HkbParams(gamma=g, a=a, tau=tau), mode)
                assert abs(val) <= 1e-9 * max(1.0, nu[k] ** 2)
    # tau -> 0+: at nu = omega the in-phase curve lies on gamma = 0 and the
    # anti-phase curve on gamma + 2a = 0
    nu = np.array([OMEGA * 1.0001])
    gi, ai = ls.gamma_a_parametrisation(nu, 1e-6, OMEGA, ModeKind.IN_PHASE)
    ga, aa = ls.gamma_a_parametrisation(nu, 1e-6, OMEGA, ModeKind.ANTI_PHASE)
    assert abs(gi[0]) < 1e-6 * max(1, abs(ai[0]))
    assert abs(ga[0] + 2 * aa[0]) < 1e-6 * max(1, abs(aa[0]))


def test_special_line_at_nu_tau_pi():
    tau = math.pi / OMEGA
    special = [c for c in ls.gamma_a_boundary(tau, OMEGA, ModeKind.IN_PHASE, (1.0, 30.0))
               if c.label.startswith("special")]
    assert len(special) == 1
    g, a = special[0].points.T
    assert np.allclose(g, -2 * a)


def test_chart_errors_and_codes():
    with pytest.raises(ValueError):
        ls.stability_chart("a-tau", ((0, 0), (0, 1)), (10, 10))
    with pytest.raises(ValueError):
        ls.stability_chart("a-tau", ((0, 1), (0, 1)), (0, 10))
    ch = ls.stability_chart("a-tau", ((-1.0, 0.0), (0.0, 0.5)), (20, 20), n_boundary_samples=200)
    assert set(np.unique(ch.grid)) <= {0, 1, 2, 3}
    assert ch.grid.shape == (20, 20)


def test_chart_consistent_with_root_counts_on_random_cells():
    ch = ls.stability_chart("a-tau", ((-3.0, 1.0), (0.0, 1.0)), (80, 80), n_boundary_samples=200)
    rng = np.random.default_rng(11)
    checked = 0
    for _ in range(200):
        r, c = rng.integers(80, size=2)
        q = ch.cell_params(int(r), int(c))
        try:
            code = sum(bit for bit, mode in ((1, ModeKind.IN_PHASE), (2, ModeKind.ANTI_PHASE))
                       if ls.count_unstable_by_roots(q, mode) == 0)
        except ls.RootSearchError:
            continue
        checked += 1
        assert code == ch.grid[r, c]
    assert checked >= 190


def test_exports_are_well_formed():
    import json
    ch = ls.stability_chart("gamma-tau", ((-1.0, 5.0), (0.0, 1.0)), (12, 10), n_boundary_samples=100)
    lines = ls.chart_csv(ch).splitlines()
    assert lines[0].startswith("# plane=gamma-tau") and len(lines) == 11
    assert all(len(row.split(",")) == 12 for row in lines[1:])
    data = json.loads(json.dumps(ls.chart_boundaries_json(ch)))
    assert {c["mode"] for c in data["curves"]} == {"in-phase", "anti-phase"}
    svg = ls.chart_svg(ch)
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")
