"""Pseudo-arclength continuation of Hopf curves and periodic-orbit branches.

Orbit branches carry Floquet data at every point; torus (complex pair
leaving the unit circle), pitchfork (real multiplier crossing +1 with an
eigenvector that is odd under the swap of the two oscillators) and fold
events are detected from sign changes between consecutive points.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import linear_stability as ls
from .centre_manifold import refine_double_hopf
from .collocation import (CollocationOrbit, DelayWrapError, FloquetData, Mesh, PeriodicBvp,
                          floquet_multipliers)
from .model import HkbParams, ModeKind

DS_INIT, DS_MIN, DS_MAX = 1e-2, 1e-5, 5e-2
MAX_HALVINGS = 8
REAL_TOL = 1e-7


class StepFailure(RuntimeError):
    pass


class TangentAmbiguityError(RuntimeError):
    pass


class EventKind(enum.Enum):
    HOPF = "hopf"
    DOUBLE_HOPF = "double-hopf"
    TORUS = "torus"
    PITCHFORK = "pitchfork"
    FOLD = "fold"
    PERIOD_DOUBLING = "period-doubling"
    LOCKING = "locking"


@dataclass
class BranchEvent:
    kind: EventKind
    index: int                  # event lies between points index-1 and index
    params: dict
    test_values: tuple

    def as_dict(self) -> dict:
        return {"kind": self.kind.value, "index": self.index,
                "params": {k: float(v) for k, v in self.params.items()},
                "test_values": [_json_num(v) for v in self.test_values]}


def _json_num(v):
    if isinstance(v, complex):
        return [float(v.real), float(v.imag)]
    return float(v)


@dataclass
class BranchPoint:
    solution: object
    params: HkbParams
    measures: dict = field(default_factory=dict)


@dataclass
class Branch:
    axis: str
    points: list = field(default_factory=list)
    arclength: list = field(default_factory=list)
    events: list = field(default_factory=list)
    status: str = "complete"
    message: str = ""
    label: str = ""

    def values(self, key):
        return np.array([pt.measures[key] for pt in self.points])

    def param_values(self, name=None):
        name = name or self.axis
        return np.array([getattr(pt.params, name) for pt in self.points])

    def to_csv(self) -> str:
        lines = ["arclength,a,tau,T,rms,phase_deg,stability,n_unstable_multipliers"]
        for s, pt in zip(self.arclength, self.points):
            m = pt.measures
            lines.append(",".join([repr(float(s)), repr(pt.params.a), repr(pt.params.tau),
                                   repr(float(m.get("T", float("nan")))),
                                   repr(float(m.get("rms", float("nan")))),
                                   repr(float(m.get("phase_deg", float("nan")))),
                                   str(m.get("stability", "")),
                                   str(int(m.get("n_unstable", -1)))]))
        return "\n".join(lines) + "\n"

    def events_json(self) -> str:
        return json.dumps({"label": self.label, "axis": self.axis, "status": self.status,
                           "message": self.message,
                           "events": [e.as_dict() for e in self.events]},
                          indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Hopf curves


def hopf_point(mode: ModeKind, p: HkbParams, nu_guess: float, free: str = "a",
               tol=1e-13, maxiter=50) -> tuple[HkbParams, float]:
    """Newton on ``Delta(i nu) = 0`` for ``(free, nu)`` with the other parameters fixed."""
    x = np.array([getattr(p, free), nu_guess], dtype=float)
    for _ in range(maxiter):
        q = p.replace(**{free: float(x[0])})
        lam = 1j * x[1]
        d = complex(ls.characteristic(lam, q, mode))
        dmu = complex(ls.characteristic_dparam(lam, q, mode, free))
        dnu = 1j * complex(ls.characteristic_dlam(lam, q, mode))
        J = np.array([[dmu.real, dnu.real], [dmu.imag, dnu.imag]])
        dx = np.linalg.solve(J, -np.array([d.real, d.imag]))
        x += dx
        if np.max(np.abs(dx)) < tol * max(1.0, np.max(np.abs(x))):
            return p.replace(**{free: float(x[0])}), float(x[1])
    raise RuntimeError("Hopf-point Newton iteration did not converge")


def _hopf_residual(z, mode, p):
    a, tau, nu = z
    q = p.replace(a=float(a), tau=float(max(tau, 0.0)))
    lam = 1j * nu
    d = complex(ls.characteristic(lam, q, mode))
    da = complex(ls.characteristic_dparam(lam, q, mode, "a"))
    dt = complex(ls.characteristic_dparam(lam, q, mode, "tau"))
    dn = 1j * complex(ls.characteristic_dlam(lam, q, mode))
    F = np.array([d.real, d.imag])
    J = np.array([[da.real, dt.real, dn.real], [da.imag, dt.imag, dn.imag]])
    return F, J


def _other_mode_tests(mode: ModeKind, p: HkbParams, a: float, tau: float, n_max=8):
    """Signed distances ``tau - tau_n(a)`` to every crossing delay of the other mode."""
    other = mode.other
    q = p.replace(a=a)
    try:
        cd = ls.crossing_delays(q, other, n_max)
    except ZeroDivisionError:
        cd = None
    if cd is None:
        return np.full(2 * (n_max + 1), np.nan)
    return tau - np.array(cd.taus_destabilizing + cd.taus_stabilizing)


def continue_hopf_curve(mode: ModeKind, start, p: HkbParams | None = None,
                        a_range=(-10.0, 10.0), tau_range=(0.0, 2.0), ds=DS_INIT,
                        max_points=2000, direction=1) -> Branch:
    """Trace ``Re lam = 0`` of ``mode`` in the ``(a, tau)`` plane from ``start = (a, tau)``.

    Points carry ``nu``; crossings with the other mode's curves are recorded
    as double-Hopf events and refined by Newton.
    """
    p = p or HkbParams()
    a0, t0 = map(float, start)
    q = p.replace(a=a0, tau=t0)
    # initial frequency: nearest crossing frequency, then Newton in (a, nu)
    fr = ls.critical_frequencies(q)
    if fr is None:
        raise ValueError("no crossing frequencies at the start point")
    best = None
    for nu in (fr.nu_plus, fr.nu_minus):
        try:
            qq, nn = hopf_point(mode, q, nu, free="tau")
        except (RuntimeError, np.linalg.LinAlgError, ValueError):
            continue
        if best is None or abs(qq.tau - t0) < abs(best[0].tau - t0):
            best = (qq, nn)
    if best is None:
        raise RuntimeError("could not place the start point on a Hopf curve")
    z = np.array([best[0].a, best[0].tau, best[1]])
    _, J = _hopf_residual(z, mode, p)
    t = np.linalg.svd(J)[2][-1]
    if t[0] * direction < 0:
        t = -t
    branch = Branch("a", label=f"hopf-{mode.value}")
    s = 0.0
    prev_tests = None
    halvings = 0
    for k in range(max_points):
        qk = p.replace(a=float(z[0]), tau=float(z[1]))
        F, _ = _hopf_residual(z, mode, p)
        branch.points.append(BranchPoint((float(z[0]), float(z[1]), float(z[2])), qk,
                                         {"nu": float(z[2]), "residual": float(np.max(np.abs(F)))}))
        branch.arclength.append(s)
        tests = _other_mode_tests(mode, p, float(z[0]), float(z[1]))
        if prev_tests is not None:
            flip = (np.sign(tests) * np.sign(prev_tests) < 0) & (np.abs(tests - prev_tests) < 0.25)
            for j in np.nonzero(flip)[0]:
                zp = branch.points[-2].solution
                f = prev_tests[j] / (prev_tests[j] - tests[j])
                a_s = zp[0] + f * (z[0] - zp[0])
                t_s = zp[1] + f * (z[1] - zp[1])
                nus = ls.critical_frequencies(p.replace(a=a_s))
                other_nu = (nus.nu_plus if j <= len(tests) // 2 - 1 else nus.nu_minus)
                seed = (a_s, t_s, z[2], other_nu) if mode is ModeKind.IN_PHASE else \
                    (a_s, t_s, other_nu, z[2])
                try:
                    hh = refine_double_hopf(seed, p)
                    params = {"a": hh[0], "tau": hh[1], "nu_i": hh[2], "nu_a": hh[3]}
                except (RuntimeError, np.linalg.LinAlgError):
                    params = {"a": a_s, "tau": t_s}
                branch.events.append(BranchEvent(EventKind.DOUBLE_HOPF, len(branch.points) - 1,
                                                 params, (float(prev_tests[j]), float(tests[j]))))
        prev_tests = tests
        if not (a_range[0] <= z[0] <= a_range[1] and tau_range[0] <= z[1] <= tau_range[1]):
            break
        while True:
            zp = z + ds * t
            try:
                zn = _hopf_correct(zp, t, mode, p)
                break
            except (RuntimeError, np.linalg.LinAlgError):
                ds *= 0.5
                halvings += 1
                if halvings > MAX_HALVINGS:
                    branch.status, branch.message = "partial", "step failure"
                    return branch
        halvings = 0
        _, J = _hopf_residual(zn, mode, p)
        tn = np.linalg.svd(J)[2][-1]
        if tn @ t < 0:
            tn = -tn
        s += float(np.linalg.norm(zn - z))
        z, t = zn, tn
        ds = min(ds * 1.2, DS_MAX)
    return branch


def _hopf_correct(zp, t, mode, p, tol=1e-12):
    z = zp.copy()
    for _ in range(12):
        F, J = _hopf_residual(z, mode, p)
        G = np.concatenate([F, [(z - zp) @ t]])
        JJ = np.vstack([J, t])
        dz = np.linalg.solve(JJ, -G)
        z += dz
        if np.max(np.abs(dz)) < tol:
            F, _ = _hopf_residual(z, mode, p)
            if np.max(np.abs(F)) <= 1e-10:
                return z
    raise RuntimeError("Hopf corrector failed")


# ---------------------------------------------------------------------------
# periodic-orbit branches


def _weights(bvp: PeriodicBvp) -> np.ndarray:
    w = np.ones(bvp.n + 2)
    w[: bvp.n] = 1.0 / bvp.mesh.n_nodes
    return w


def periodic_orbit_from_hopf(point: HkbParams, mode: ModeKind, amplitude_seed: float = 1e-2,
                             axis: str = "a", nu: float | None = None, mesh: Mesh | None = None,
                             direction: int = 0) -> CollocationOrbit:
    """Small-amplitude orbit bifurcating from a Hopf point of ``mode``.

    ``point`` must (nearly) satisfy the crossing condition; it is refined in
    ``axis`` first.  The first pseudo-arclength step is taken along the
    critical eigenfunction, with the profile amplitude ``amplitude_seed``.
    """
    mesh = mesh or Mesh()
    if nu is None:
        fr = ls.critical_frequencies(point)
        if fr is None:
            raise ValueError("no crossing frequencies at this point")
        cands = []
        for guess in (fr.nu_plus, fr.nu_minus):
            try:
                cands.append(hopf_point(mode, point, guess, free=axis))
            except (RuntimeError, np.linalg.LinAlgError):
                pass
        if not cands:
            raise RuntimeError("could not refine the Hopf point")
        q, nu = min(cands, key=lambda c: abs(getattr(c[0], axis) - getattr(point, axis)))
    else:
        q, nu = hopf_point(mode, point, nu, free=axis)
    T0 = 2 * math.pi / nu
    s = mesh.node_times
    x = np.exp(2j * math.pi * s)
    sgn = mode.sign
    phi = np.column_stack([x.real, sgn * x.real, (1j * nu * x).real, sgn * (1j * nu * x).real])
    bvp = PeriodicBvp(mesh, q, param=axis)
    W = _weights(bvp)
    t0 = bvp.pack(phi, 0.0, 0.0)
    t0[-1] = 0.0
    t0 = t0 / math.sqrt(t0 @ (W * t0))
    X0 = bvp.pack(np.zeros_like(phi), T0, getattr(q, axis))
    # amplitude of x1 along phi is 1, so this step gives profile amplitude ~ seed
    ds = amplitude_seed * math.sqrt(np.sum(phi ** 2) / mesh.n_nodes)
    X = _arclength_correct(bvp, X0 + ds * t0, t0, W, ref=phi)
    U, T, qq = bvp.unpack(X)
    F = bvp.residual(X, ref=phi, with_jacobian=False)
    return CollocationOrbit(mesh, U.copy(), float(T), qq, float(np.max(np.abs(F[:-1]))))


def _arclength_correct(bvp, Xp, t, W, ref, tol=1e-10, maxiter=10):
    X = Xp.copy()
    for it in range(maxiter):
        F, J = bvp.residual(X, ref=ref)
        G = np.concatenate([F, [(X - Xp) @ (W * t)]])
        JJ = np.vstack([J, W * t])
        dX = np.linalg.solve(JJ, -G)
        X = X + dX
        if not np.all(np.isfinite(X)):
            break
        if np.max(np.abs(dX)) <= tol * max(1.0, np.max(np.abs(X))):
            F = bvp.residual(X, ref=ref, with_jacobian=False)
            if np.max(np.abs(F)) <= 1e-9:
                return X
    raise StepFailure("arclength corrector did not converge")


def _tangent(bvp, X, W, prev=None):
    _, J = bvp.residual(X, ref=bvp.unpack(X)[0])
    if prev is None:
        t = np.linalg.svd(J)[2][-1]
    else:
        JJ = np.vstack([J, W * prev])
        rhs = np.zeros(J.shape[0] + 1)
        rhs[-1] = 1.0
        t = np.linalg.solve(JJ, rhs)
    return t / math.sqrt(t @ (W * t))


def orbit_measures(orbit: CollocationOrbit, fl: FloquetData) -> dict:
    n_unst = fl.n_unstable()
    sym_in, sym_anti = orbit.symmetry_residuals()
    return {
        "T": orbit.T,
        "rms": orbit.rms_amplitude,
        "phase_deg": orbit.phase_shift_deg(),
        "residual": orbit.residual,
        "trivial_multiplier_error": abs(fl.trivial - 1.0),
        "n_unstable": n_unst,
        "stability": "stable" if n_unst == 0 else "unstable",
        "sym_in": sym_in,
        "sym_anti": sym_anti,
    }


def _critical(fl: FloquetData):
    """Nontrivial multiplier nearest the unit circle, with its kind."""
    mu = fl.nontrivial()
    sym = np.delete(fl.symmetry, fl.trivial_index) if fl.symmetry.size else np.zeros(mu.size)
    k = int(np.argmin(np.abs(np.abs(mu) - 1.0)))
    m = complex(mu[k])
    if abs(m.imag) > REAL_TOL * max(1.0, abs(m)):
        kind = EventKind.TORUS
    elif m.real < 0:
        kind = EventKind.PERIOD_DOUBLING
    elif sym[k] < 0:
        kind = EventKind.PITCHFORK
    else:
        kind = EventKind.FOLD
    return m, kind


def _crossing_event(fl0: FloquetData, fl1: FloquetData):
    """Kind and test values ``|mu| - 1`` of a change in the unstable count, or None."""
    if fl0.n_unstable() == fl1.n_unstable():
        return None
    m0, k0 = _critical(fl0)
    m1, k1 = _critical(fl1)
    # the side closer to the crossing decides the kind; track the same multiplier across
    if abs(abs(m1) - 1) <= abs(abs(m0) - 1):
        kind, ref, other = k1, m1, fl0.nontrivial()
        m0 = complex(other[np.argmin(np.abs(other - ref))])
    else:
        kind, ref, other = k0, m0, fl1.nontrivial()
        m1 = complex(other[np.argmin(np.abs(other - ref))])
    g0, g1 = abs(m0) - 1.0, abs(m1) - 1.0
    if g0 * g1 >= 0:
        return None      # count changed through the n_unstable tolerance band only
    return kind, (g0, g1)


def continue_orbit_branch(start: CollocationOrbit, axis: str, rng, ds: float = DS_INIT,
                          max_points: int = 300, direction: int = 1,
                          initial_tangent: np.ndarray | None = None,
                          floquet: bool = True, label: str = "",
                          stop=None) -> Branch:
    """Pseudo-arclength continuation of a periodic orbit in ``axis`` within ``rng``.

    ``direction`` selects the initial sense of the parameter; ``stop`` is an
    optional predicate on each accepted :class:`BranchPoint` that ends the run.
    """
    lo, hi = sorted(map(float, rng))
    bvp = PeriodicBvp(start.mesh, start.params, param=axis)
    W = _weights(bvp)
    X = bvp.pack(start.profile, start.T, getattr(start.params, axis))
    # make sure the start is converged with the current phase reference
    F = bvp.residual(X, with_jacobian=False)
    t = initial_tangent if initial_tangent is not None else _tangent(bvp, X, W)
    if initial_tangent is None and t[-1] * direction < 0:
        t = -t
    branch = Branch(axis, label=label)
    s_acc = 0.0
    prev_tests = None
    ds = float(ds)
    for k in range(max_points):
        U, T, q = bvp.unpack(X)
        F = bvp.residual(X, with_jacobian=False)
        orbit = CollocationOrbit(start.mesh, U.copy(), float(T), q, float(np.max(np.abs(F[:-1]))))
        if floquet:
            try:
                fl = floquet_multipliers(orbit)
            except (np.linalg.LinAlgError, DelayWrapError) as exc:
                branch.status, branch.message = "partial", f"Floquet failure: {exc}"
                return branch
            orbit.floquet = fl
            meas = orbit_measures(orbit, fl)
            tests = fl
        else:
            meas = {"T": orbit.T, "rms": orbit.rms_amplitude, "phase_deg": orbit.phase_shift_deg(),
                    "residual": orbit.residual, "n_unstable": -1, "stability": "unknown"}
            tests = None
        pt = BranchPoint(orbit, q, meas)
        branch.points.append(pt)
        branch.arclength.append(s_acc)
        if tests is not None and prev_tests is not None:
            ev = _crossing_event(prev_tests, tests)
            if ev is not None:
                kind, (g0, g1) = ev
                a0, a1 = getattr(branch.points[-2].params, axis), getattr(q, axis)
                f = g0 / (g0 - g1) if g0 != g1 else 0.5
                branch.events.append(BranchEvent(kind, len(branch.points) - 1,
                                                 {axis: a0 + f * (a1 - a0)}, (g0, g1)))
        prev_tests = tests
        mu = getattr(q, axis)
        if not (lo <= mu <= hi):
            break
        if stop is not None and stop(pt):
            break
        if k == max_points - 1:
            break
        halvings = 0
        while True:
            try:
                Xn = _arclength_correct(bvp, X + ds * t, t, W, ref=U)
                break
            except (StepFailure, np.linalg.LinAlgError, DelayWrapError, FloatingPointError):
                ds *= 0.5
                halvings += 1
                if halvings > MAX_HALVINGS or ds < DS_MIN:
                    branch.status, branch.message = "partial", "step failure"
                    return branch
        s_acc += float(math.sqrt((Xn - X) @ (W * (Xn - X))))
        tn = _tangent(bvp, Xn, W, prev=t)
        X, t = Xn, tn
        if halvings == 0:
            ds = min(ds * 1.3, DS_MAX)
    return branch


# ---------------------------------------------------------------------------
# pitchfork handling


def _anti_multiplier(fl: FloquetData) -> complex:
    mu = fl.multipliers
    real = np.abs(mu.imag) <= REAL_TOL * np.maximum(1.0, np.abs(mu))
    cand = np.nonzero(real & (fl.symmetry < 0))[0]
    if cand.size == 0:
        raise TangentAmbiguityError("no antisymmetric real multiplier")
    return float(mu[cand[np.argmin(np.abs(mu[cand] - 1))]].real)


def locate_pitchfork(branch: Branch, event: BranchEvent, tol=1e-9, maxiter=20) -> CollocationOrbit:
    """Secant refinement of the parameter where an antisymmetric multiplier equals 1."""
    if event.kind is not EventKind.PITCHFORK:
        raise ValueError("event is not a pitchfork")
    axis = branch.axis
    p0, p1 = branch.points[event.index - 1], branch.points[event.index]
    x0, x1 = getattr(p0.params, axis), getattr(p1.params, axis)
    g0 = _anti_multiplier(p0.solution.floquet) - 1
    g1 = _anti_multiplier(p1.solution.floquet) - 1
    orbit = p1.solution
    for _ in range(maxiter):
        if g1 == g0:
            break
        x2 = x1 - g1 * (x1 - x0) / (g1 - g0)
        trial = CollocationOrbit(orbit.mesh, orbit.profile, orbit.T,
                                 orbit.params.replace(**{axis: float(x2)}))
        orbit = _correct_symmetric(trial)
        orbit.floquet = floquet_multipliers(orbit)
        x0, g0 = x1, g1
        x1, g1 = x2, _anti_multiplier(orbit.floquet) - 1
        if abs(g1) < tol or abs(x1 - x0) < 1e-13:
            break
    return orbit


def _orbit_sigma(orbit: CollocationOrbit) -> float:
    """+1 for an in-phase orbit (x1 = x2), -1 for anti-phase (x1 = -x2)."""
    r_in, r_anti = orbit.symmetry_residuals()
    if min(r_in, r_anti) > 1e-6 * max(1.0, np.max(np.abs(orbit.profile))):
        raise TangentAmbiguityError("orbit is not swap-symmetric")
    return 1.0 if r_in <= r_anti else -1.0


def _swap_bases(N, sigma=1.0):
    # with x2 = sigma x1 on the orbit, even perturbations are (z1, sigma z1, z2, sigma z2)
    # plus T, odd ones are (z1, -sigma z1, z2, -sigma z2)
    Bo = np.zeros((4 * N + 1, 2 * N))
    Be = np.zeros((4 * N + 1, 2 * N + 1))
    n = np.arange(N)
    for c, (i, j) in enumerate(((0, 1), (2, 3))):
        Bo[4 * n + i, 2 * n + c] = 1.0
        Bo[4 * n + j, 2 * n + c] = -sigma
        Be[4 * n + i, 2 * n + c] = 1.0
        Be[4 * n + j, 2 * n + c] = sigma
    Be[4 * N, 2 * N] = 1.0
    return Bo, Be


def _correct_symmetric(orbit: CollocationOrbit, tol=1e-11, maxiter=12) -> CollocationOrbit:
    """Newton correction restricted to swap-symmetric profiles.

    At a pitchfork the full Jacobian is singular along the odd direction,
    while the restricted problem stays regular.
    """
    bvp = PeriodicBvp(orbit.mesh, orbit.params, param=None)
    ref = orbit.profile.copy()
    _, Be = _swap_bases(orbit.mesh.n_nodes, _orbit_sigma(orbit))
    x = bvp.pack(orbit.profile, orbit.T)
    for _ in range(maxiter):
        F, J = bvp.residual(x, ref)
        dz = np.linalg.lstsq(J @ Be, -F, rcond=None)[0]
        x = x + Be @ dz
        if np.max(np.abs(dz)) <= tol * max(1.0, np.max(np.abs(x))):
            F = bvp.residual(x, ref, with_jacobian=False)
            if np.max(np.abs(F)) <= 1e-9:
                return bvp.to_orbit(x, float(np.max(np.abs(F[:-1]))))
    raise RuntimeError("symmetric Newton correction did not converge")


def antisymmetric_null_direction(orbit: CollocationOrbit) -> tuple[np.ndarray, float, float]:
    """Critical profile direction odd under the oscillator swap.

    Returns ``(direction (N, 4), sigma_anti, sigma_sym)``: the smallest
    singular values of the fixed-parameter Jacobian restricted to odd and to
    even perturbations.
    """
    bvp = PeriodicBvp(orbit.mesh, orbit.params, param=None)
    X = bvp.pack(orbit.profile, orbit.T)
    _, J = bvp.residual(X, ref=orbit.profile)
    N = orbit.mesh.n_nodes
    Bo, Be = _swap_bases(N, _orbit_sigma(orbit))
    _, so, vo = np.linalg.svd(J @ Bo, full_matrices=False)
    _, se, _ = np.linalg.svd(J @ Be, full_matrices=False)
    d = (Bo @ vo[-1])[: 4 * N].reshape(N, 4)
    return d / np.max(np.abs(d)), float(so[-1]), float(se[-1])


def detect_and_switch_pitchfork(branch: Branch, pf: BranchEvent, sign: int = 1,
                                rng=None, ds: float = DS_INIT, max_points: int = 400,
                                floquet: bool = True, stop=None,
                                rejoin_tol: float | None = 0.1) -> Branch:
    """Start the symmetry-broken branch emanating from a pitchfork of cycles.

    With ``rejoin_tol`` set, the run ends once the branch comes back to a
    symmetric orbit (in-phase or anti-phase residual below ``rejoin_tol``
    times the amplitude), i.e. at the pitchfork that closes it.
    """
    orbit = locate_pitchfork(branch, pf)
    d, s_odd, s_even = antisymmetric_null_direction(orbit)
    if s_odd > 1e-2 * s_even:
        raise TangentAmbiguityError("critical direction is not antisymmetric (fold, not pitchfork)")
    axis = branch.axis
    rng = rng or (min(branch.param_values()), max(branch.param_values()))
    bvp = PeriodicBvp(orbit.mesh, orbit.params, param=axis)
    W = _weights(bvp)
    t0 = bvp.pack(sign * d, 0.0, 0.0)
    t0[-1] = 0.0
    t0 /= math.sqrt(t0 @ (W * t0))
    X0 = bvp.pack(orbit.profile, orbit.T, getattr(orbit.params, axis))
    X1 = _arclength_correct(bvp, X0 + ds * t0, t0, W, ref=orbit.profile)
    U, T, q = bvp.unpack(X1)
    first = CollocationOrbit(orbit.mesh, U.copy(), float(T), q)
    tan = (X1 - X0) / math.sqrt((X1 - X0) @ (W * (X1 - X0)))
    user_stop = stop
    if rejoin_tol is not None:
        peak = [0.0]

        def stop(pt):
            m = pt.measures
            sym = min(m.get("sym_in", math.inf), m.get("sym_anti", math.inf))
            rel = sym / max(m.get("rms", 0.0), 1e-300)
            if math.isfinite(rel):
                peak[0] = max(peak[0], rel)
                # only after the branch has clearly left the symmetric orbit
                if peak[0] >= 5 * rejoin_tol and rel <= rejoin_tol:
                    return True
            return user_stop is not None and user_stop(pt)
    out = continue_orbit_branch(first, axis, rng, ds=ds, max_points=max_points,
                                initial_tangent=tan, floquet=floquet,
                                label=f"{branch.label}-switched{'+' if sign > 0 else '-'}", stop=stop)
    return out


# ---------------------------------------------------------------------------
# sampled two-parameter tracing of orbit bifurcations


def trace_orbit_bifurcations(p: HkbParams, mode: ModeKind, taus, a_start: float,
                             a_max: float, kinds=(EventKind.TORUS, EventKind.PITCHFORK),
                             max_points: int = 300) -> list[dict]:
    """Torus and pitchfork points of the ``mode`` orbit branch on a grid of delays.

    For each ``tau`` the Hopf point nearest ``a_start`` (updated from the
    previous delay) is located and the orbit branch is continued in ``a`` up
    to ``a_max``.  Returns one record ``{tau, kind, a}`` per detected event.
    """
    out = []
    a_guess = float(a_start)
    for tau in taus:
        q = p.replace(a=a_guess, tau=float(tau))
        try:
            orbit = periodic_orbit_from_hopf(q, mode)
        except (RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
            out.append({"tau": float(tau), "kind": "failure", "a": float("nan"),
                        "message": str(exc)})
            continue
        a_guess = orbit.params.a
        br = continue_orbit_branch(orbit, "a", (a_guess - 1e-3, a_max), max_points=max_points,
                                   label=f"{mode.value}-tau={tau:g}")
        for ev in br.events:
            if ev.kind in kinds:
                out.append({"tau": float(tau), "kind": ev.kind.value, "a": float(ev.params["a"])})
    return out
