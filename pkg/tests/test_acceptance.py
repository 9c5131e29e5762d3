"""Acceptance criteria 1-10.

Each test is named ``test_criterion_<n>_<topic>``; the conftest hooks print
one PASS/FAIL line per criterion at the end of the run.  Tabulated values
are typed in here rather than imported from the package.
"""

import math
from collections import Counter

import numpy as np
import pytest

from conftest import TAU_CONT
from hkb_delay import centre_manifold as cm
from hkb_delay import cli
from hkb_delay import collocation as col
from hkb_delay import continuation as cont
from hkb_delay import dde_dynamics as dde
from hkb_delay import linear_stability as ls
from hkb_delay import torus_continuation as tc
from hkb_delay import unfolding as uf
from hkb_delay.model import HkbParams, ModeKind

P = HkbParams()
OMEGA = 2.6 * math.pi

# double-Hopf points: a_c, tau_c, nu_i, nu_a
TABLE_POINTS = {
    "HH1": (-0.68609, 0.19214, 7.83301, 8.51761),
    "HH2": (-0.83431, 0.57621, 8.58402, 7.77241),
    "HH3": (-1.33683, 0.95920, 7.61733, 8.75879),
    "HH4": (-3.37162, 0.95457, 7.23890, 9.21666),
}
# a11 a12 a21 a22 rho11 rho12 rho21 rho22
TABLE_COEFFS = {
    "HH1": (-1.45930, -2.98167, -3.17291, -1.62071, 0.41422, -2.53782, 0.44713, 2.99651),
    "HH2": (-1.57279, -3.07152, -2.88168, -1.40684, 0.25537, 3.09705, 0.24324, -2.58847),
    "HH3": (-1.05553, -2.17940, -2.28045, -1.17705, 0.04553, -2.04607, 0.03689, 2.44805),
    "HH4": (-0.61111, -1.29100, -1.31866, -0.69641, -0.00656, -1.18880, -0.01192, 1.42407),
}


@pytest.fixture(scope="module")
def points():
    pts = cm.double_hopf_points(P, a_range=(-10.0, 10.0), tau_range=(0.0, 2.0))
    return cm.label_points(pts, P)


@pytest.fixture(scope="module")
def hh1_form(points):
    hh = next(h for h in points if h.label == "HH1")
    return hh, cm.normal_form_coefficients(hh, P)


def _batch(p, a, histories, periods):
    """Integrate one trajectory per entry of ``a`` (shared tau) and measure each."""
    hist = lambda t: np.array([h(t) for h in histories])
    tr = dde.integrate(p.replace(a=float(a[0])), hist, periods * 2 * math.pi / p.omega,
                       p.tau / 20, a_values=a)
    return [dde.measure_orbit(dde.Trajectory(tr.t0, tr.dt, tr.samples[:, k, :]))
            for k in range(len(a))]


# --- 1. double-Hopf points --------------------------------------------------------

def test_criterion_1_double_hopf_points(points):
    assert len(points) == 4
    got = {h.label: (h.a_c, h.tau_c, h.nu_i, h.nu_a) for h in points}
    assert set(got) == set(TABLE_POINTS)
    for label, ref in TABLE_POINTS.items():
        assert np.max(np.abs(np.array(got[label]) - ref)) <= 1e-4, label


# --- 2. normal-form coefficients --------------------------------------------------

def test_criterion_2_normal_form_coefficients(points):
    for hh in points:
        nf = cm.normal_form_coefficients(hh, P)
        rho = cm.unfolding_rhos(hh, P)
        got = np.concatenate([nf.a.ravel(), rho.ravel()])
        assert np.max(np.abs(got - TABLE_COEFFS[hh.label])) <= 1e-3, hh.label


# --- 3. stability-chart anchors ---------------------------------------------------

def test_criterion_3_chart_anchors_tau_zero_split():
    chart = ls.stability_chart("a-tau", ((-1.5, 0.5), (0.0, 1.0)), (400, 400))
    assert chart.grid.shape == (400, 400)
    a = np.linspace(-1.5, 0.5, 4001)
    codes = ls.classify_arrays(np.full_like(a, P.gamma), a, OMEGA, np.zeros_like(a))
    assert np.all(codes[a < -0.3206] == ls.RegionClass.ANTI_ONLY)
    assert np.all(codes[a > -0.3204] == ls.RegionClass.NEITHER)
    lo, hi = -1.0, 0.0
    while hi - lo > 1e-9:
        mid = 0.5 * (lo + hi)
        try:
            code = ls.classify_point(P.replace(a=mid, tau=0.0))
        except ls.StabilityBoundaryError:
            lo = hi = mid        # the classifier itself reports the Hopf line here
            break
        if code is ls.RegionClass.ANTI_ONLY:
            lo = mid
        else:
            hi = mid
    split = 0.5 * (lo + hi)
    assert abs(split + P.gamma / 2) <= 1e-6
    assert abs(split + 0.3205) <= 1e-6


def test_criterion_3_chart_anchors_gamma_band():
    chart = ls.stability_chart("gamma-tau", ((-2.0, 6.0), (0.0, 2.0)), (400, 400),
                               fixed=P.replace(a=-2.0))
    assert chart.boundary_curves
    for c in chart.boundary_curves:
        assert np.all((c.points[:, 0] > 0) & (c.points[:, 0] < 4)), c.label
    # no stability switch along tau outside the band
    outside = (chart.x_centers < 0) | (chart.x_centers > 4)
    for col_ in np.nonzero(outside)[0]:
        assert np.unique(chart.grid[:, col_]).size == 1


def test_criterion_3_chart_anchors_swapped_lines():
    def special(tau):
        chart = ls.stability_chart("gamma-a", ((-6.0, 6.0), (-3.0, 3.0)), (400, 400),
                                   fixed=P.replace(tau=tau))
        out = {}
        for c in chart.boundary_curves:
            if c.label.startswith("special"):
                out[c.mode] = c.points
        return out

    s_pi, s_0 = special(math.pi / OMEGA), special(0.0)
    assert set(s_pi) == set(s_0) == set(ModeKind)
    # tau = pi/omega: gamma + 2a = 0 for the in-phase mode, gamma = 0 for the anti-phase mode
    g, a = s_pi[ModeKind.IN_PHASE].T
    assert np.max(np.abs(g + 2 * a)) <= 1e-6
    g, a = s_pi[ModeKind.ANTI_PHASE].T
    assert np.max(np.abs(g)) <= 1e-6
    # tau = 0: the other way round
    g, a = s_0[ModeKind.IN_PHASE].T
    assert np.max(np.abs(g)) <= 1e-6
    g, a = s_0[ModeKind.ANTI_PHASE].T
    assert np.max(np.abs(g + 2 * a)) <= 1e-6
    # sampled points are genuine imaginary-axis crossings at nu = omega, and the
    # mode changes stability across them
    for mode, pts in s_pi.items():
        for g, a in pts[::97]:
            if abs(a) < 0.05:
                continue
            q = P.replace(gamma=g, a=a, tau=math.pi / OMEGA)
            assert abs(ls.characteristic(1j * OMEGA, q, mode)) <= 1e-6 * OMEGA ** 2
            n = [ls.count_unstable_roots(q.replace(gamma=g + s), mode) for s in (-1e-3, 1e-3)]
            assert n[0] != n[1]


# --- 4. normal form against simulation --------------------------------------------

def test_criterion_4_normal_form_vs_simulation(hh1_form):
    hh, nf = hh1_form
    tau = 0.19214
    p = P.replace(tau=tau)
    # a < a_c lies in region I: the origin attracts
    below = hh.a_c - np.linspace(0.01, 0.05, 5)
    ms = _batch(p, below, [dde.random_history(k, 0.05, OMEGA) for k in range(below.size)], 600)
    assert all(m.classification is dde.OrbitClass.EQUILIBRIUM for m in ms)
    # a > a_c lies in region IV: both cycles are stable, reached from biased starts
    above = hh.a_c + np.linspace(0.005, 0.05, 10)
    for kind, bias, cls in ((uf.StateKind.IN_PHASE_LC, "in", dde.OrbitClass.IN_PHASE),
                            (uf.StateKind.ANTI_PHASE_LC, "anti", dde.OrbitClass.ANTI_PHASE)):
        pred = []
        for a in above:
            s = next(s for s in uf.steady_states(nf, uf.unfolding_params(nf, a, tau))
                     if s.kind is kind)
            assert s.stability is uf.Stability.SINK
            pred.append(uf.physical_rms(nf, s.r1, s.r2))
        hs = [dde.random_history(k, pred[k], OMEGA, bias) for k in range(above.size)]
        for a, m, r in zip(above, _batch(p, above, hs, 1200), pred):
            assert m.classification is cls, (a, m)
            assert m.rms_amplitude == pytest.approx(r, rel=0.05), (a, m.rms_amplitude, r)


# --- 5. region catalogue ----------------------------------------------------------

R = uf.RegionId
CATALOGUE = {
    R.I: {dde.OrbitClass.EQUILIBRIUM},
    R.II: {dde.OrbitClass.IN_PHASE},
    R.III: {dde.OrbitClass.IN_PHASE},
    R.IV: {dde.OrbitClass.IN_PHASE, dde.OrbitClass.ANTI_PHASE},
    R.V: {dde.OrbitClass.ANTI_PHASE},
    R.VI: {dde.OrbitClass.ANTI_PHASE},
}


def _region_samples(nf, hh, dtau, per_region):
    """Points on the line ``tau = tau_c + dtau`` inside each region (middle 60%)."""
    da = np.linspace(-0.06, 0.08, 2801)
    spans = {}
    for x in da:
        try:
            r = uf.classify_region(nf, uf.unfolding_params(nf, hh.a_c + x, hh.tau_c + dtau))
        except uf.OnBoundaryError:
            continue
        lo, hi = spans.get(r, (x, x))
        spans[r] = (min(lo, x), max(hi, x))
    out = []
    for r, (lo, hi) in spans.items():
        w = hi - lo
        for x in np.linspace(lo + 0.2 * w, hi - 0.2 * w, per_region[r]):
            out.append((r, hh.a_c + x))
    return out


@pytest.fixture(scope="module")
def region_runs(hh1_form):
    hh, nf = hh1_form
    # regions I and IV meet both lines; ten points are taken on each
    lines = {-0.003: {R.I: 10, R.II: 20, R.III: 20, R.IV: 10},
             0.003: {R.I: 10, R.VI: 20, R.V: 20, R.IV: 10}}
    runs = []
    for dtau, per in lines.items():
        pts = _region_samples(nf, hh, dtau, per)
        assert Counter(r for r, _ in pts) == Counter(per)
        p = P.replace(tau=hh.tau_c + dtau)
        a = np.array([x for _, x in pts])
        for bias in (None, "in", "anti"):
            take = [k for k, (r, _) in enumerate(pts) if bias is None or r is R.IV]
            hs = [dde.random_history(100 + k, 0.05, OMEGA, bias) for k in take]
            for k, m in zip(take, _batch(p, a[take], hs, 1500)):
                runs.append((pts[k][0], bias, m.classification))
    return runs


def test_criterion_5_region_catalogue(region_runs):
    counts = Counter(r for r, bias, _ in region_runs if bias is None)
    assert all(counts[r] == 20 for r in R)
    for r, bias, cls in region_runs:
        if bias is None:
            assert cls in CATALOGUE[r], (r, cls)
    # bistability in IV: each biased start reaches the matching cycle
    for r, bias, cls in region_runs:
        if bias == "in":
            assert cls is dde.OrbitClass.IN_PHASE
        elif bias == "anti":
            assert cls is dde.OrbitClass.ANTI_PHASE
    assert Counter(b for r, b, _ in region_runs if r is R.IV) == {None: 20, "in": 20, "anti": 20}


# --- 6. resonance screen ----------------------------------------------------------

def test_criterion_6_resonance_screen(points):
    for hh in points:
        assert cm.resonance_check(hh.nu_i, hh.nu_a, 1000) is None, hh.label


# --- 7. phase-quadrature orbit ----------------------------------------------------

def test_criterion_7_phase_quadrature_orbit(switched_arcs):
    """The arc switched at the second in-phase pitchfork carries the quadrature cycles."""
    found = 0
    for sign in (1, -1):
        br = switched_arcs[(1, sign)]
        a = br.param_values("a")
        for i in range(1, a.size):
            if (a[i - 1] + 0.2) * (a[i] + 0.2) > 0:
                continue
            near = br.points[i].solution
            orb = col.correct_orbit(col.CollocationOrbit(near.mesh, near.profile, near.T,
                                                         near.params.replace(a=-0.2)))
            assert orb.residual <= 1e-8
            ph = orb.phase_shift_deg()
            mirror = ph > 180
            assert (265 <= ph <= 275) if mirror else (85 <= ph <= 95), ph
            assert 3.8 <= orb.T / orb.params.tau <= 4.2
            assert orb.delay_shift_residual(mirror=mirror) <= 0.05 * orb.rms_amplitude
            assert col.floquet_multipliers(orb).n_unstable() == 0
            found += 1
    assert found == 2
    assert switched_arcs[(1, 1)].points[0].params.tau == TAU_CONT


# --- 8. collocation and Floquet invariants on every branch ------------------------

def test_criterion_8_branch_invariants(orbit_branches, switched_arcs):
    key = {ModeKind.IN_PHASE: "sym_in", ModeKind.ANTI_PHASE: "sym_anti"}
    n = 0
    for mode, br in orbit_branches.items():
        for pt in br.points:
            m = pt.measures
            assert m["residual"] <= 1e-8
            assert m["trivial_multiplier_error"] <= 1e-6
            assert m[key[mode]] <= 1e-7 * m["rms"]
            n += 1
    for br in switched_arcs.values():
        for pt in br.points:
            assert pt.measures["residual"] <= 1e-8
            assert pt.measures["trivial_multiplier_error"] <= 1e-6
            n += 1
    assert n > 500


# --- 9. torus -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def locking_branch(orbit_branches):
    """Torus branch from the in-phase torus point, continued through the locking window."""
    ip = orbit_branches[ModeKind.IN_PHASE]
    ev = next(e for e in ip.events if e.kind is cont.EventKind.TORUS)
    start = tc.torus_init_from_bifurcation(tc.locate_torus_point(ip, ev))
    return tc.continue_torus(start, "a", 1, rng=(-0.7, 0.5), max_points=400, lock_tol=1e-2,
                             pass_locking=True)


def _peak(x, dt):
    x = x - x.mean()
    X = np.abs(np.fft.rfft(x * np.hanning(x.size), 8 * x.size))
    k = int(np.argmax(X[1:])) + 1
    a, b, c = np.log(X[k - 1: k + 2])
    return 2 * math.pi * (k + 0.5 * (a - c) / (a - 2 * b + c)) / (8 * x.size * dt)


def test_criterion_9_torus_near_bifurcation(locking_branch):
    t = locking_branch.points[5]
    assert tc.invariance_residual(t)["max"] <= 1e-6
    assert tc.harmonic_spectrum(t).parseval_error() <= 1e-8
    dt = t.params.tau / 40
    hist = lambda s: t.evaluate_points(np.array([t.upsilon1 * s]) % (2 * math.pi),
                                       np.array([t.upsilon2 * s]) % (2 * math.pi))[0]
    traj = dde.integrate(t.params, hist, 40 * 2 * math.pi / t.upsilon1, dt)
    s = traj.samples
    assert _peak(s[:, 0] + s[:, 1], dt) == pytest.approx(t.upsilon1, rel=0.02)
    assert _peak(s[:, 0] - s[:, 1], dt) == pytest.approx(t.upsilon2, rel=0.02)


def test_criterion_9_torus_reaches_locking(locking_branch):
    for t in locking_branch.points:
        assert tc.invariance_residual(t)["max"] <= 1e-6
    lock = [e for e in locking_branch.events if e.kind is cont.EventKind.LOCKING]
    assert lock
    entry = locking_branch.points[lock[0].index]
    assert abs(entry.frequency_ratio - 1.0) <= 1e-2
    assert abs(locking_branch.points[lock[0].index - 1].frequency_ratio - 1.0) > 1e-2


def test_criterion_9_torus_locking_distance_ordering(locking_branch, switched_arcs):
    """The window entry (left) lies nearer the quadrature cycles than the exit (right).

    Distance is measured in the (a, amplitude) plane, with the torus amplitude
    taken on the section used for its phase shift.
    """
    lock = [e for e in locking_branch.events if e.kind is cont.EventKind.LOCKING]
    assert len(lock) == 2, "the branch did not leave the locking window"
    left, right = (locking_branch.points[e.index] for e in lock)
    assert left.params.a < right.params.a
    assert abs(right.frequency_ratio - 1.0) > 1e-2
    quad = np.array([(pt.params.a, pt.measures["rms"]) for br in switched_arcs.values()
                     for pt in br.points
                     if min(abs(pt.measures["phase_deg"] - 90), abs(pt.measures["phase_deg"] - 270)) <= 10])
    assert quad.size

    def dist(t):
        return float(np.min(np.hypot(quad[:, 0] - t.params.a, quad[:, 1] - t.section_rms())))

    print(f"locking window a = [{left.params.a:.4f}, {right.params.a:.4f}], "
          f"distances {dist(left):.5f} (left) {dist(right):.5f} (right)")
    assert dist(left) < dist(right)


# --- 10. determinism ---------------------------------------------------------------

@pytest.mark.parametrize("args", [
    ("chart", "--resolution", "40", "40", "--verify", "--seed", "3"),
    ("tables",),
    ("unfold", "--n", "31"),
    ("simulate", "--periods", "40", "--seed", "7"),
    ("continue", "--a-range", "-0.7", "-0.6", "--max-points", "10", "--no-switch"),
])
def test_criterion_10_determinism(tmp_path, args):
    for d in ("r1", "r2"):
        assert cli.main(list(args) + ["--out", str(tmp_path / d)]) == 0
    names = sorted(p.name for p in (tmp_path / "r1").iterdir())
    assert names and names == sorted(p.name for p in (tmp_path / "r2").iterdir())
    for name in names:
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes(), name
