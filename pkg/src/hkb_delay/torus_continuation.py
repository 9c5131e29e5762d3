"""Quasi-periodic invariant tori by two-dimensional collocation.

A torus ``u(theta1, theta2)`` on ``[0, 2pi)^2`` satisfies

    upsilon1 du/dtheta1 + upsilon2 du/dtheta2 = f(u, u_tau),
    u_tau = u(theta1 - upsilon1 tau, theta2 - upsilon2 tau).

The profile is a tensor product of piecewise Lagrange polynomials of degree
``P`` on ``N x M`` segments (equispaced nodes, periodic in both angles by
construction); the equation is collocated at Chebyshev-Gauss-Radau points
of each segment.  Two phase conditions fix the rotational gauge against a reference
profile.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .collocation import CollocationOrbit, FloquetData, Mesh, correct_orbit, floquet_eigenfunction, \
    floquet_multipliers
from .continuation import REAL_TOL, Branch, BranchEvent, EventKind
from .model import HkbParams, rhs_derivatives, rhs_full, rhs_param_derivative, swap

TWO_PI = 2.0 * math.pi
DELTA_DEFAULT = 0.05
SEED_EPS = 1e-2
DS_INIT, DS_MIN, DS_MAX = 1e-2, 1e-6, 5e-2


class TorusError(RuntimeError):
    pass


def chebyshev_radau_points(n: int) -> np.ndarray:
    """Chebyshev-Gauss-Radau points on ``[0, 1]`` including the right end point.

    Symmetric point sets (Chebyshev-Gauss, Gauss-Legendre) make the tensor
    collocation singular for even degree: the piecewise node polynomial of
    the points is continuous and vanishes at every collocation point in both
    angles.  Dropping the symmetry removes that spurious mode.
    """
    return np.sort(0.5 * (1 + np.cos(2 * np.arange(n) * math.pi / (2 * n + 1))))


@dataclass(frozen=True)
class TorusMesh:
    N: int = 12
    M: int = 12
    P: int = 4

    @property
    def mesh1(self) -> Mesh:
        return Mesh(self.N, self.P)

    @property
    def mesh2(self) -> Mesh:
        return Mesh(self.M, self.P)

    @property
    def shape(self) -> tuple[int, int]:
        return self.N * self.P, self.M * self.P

    @property
    def n_unknowns(self) -> int:
        n1, n2 = self.shape
        return 4 * n1 * n2

    def node_angles(self) -> tuple[np.ndarray, np.ndarray]:
        return TWO_PI * self.mesh1.node_times, TWO_PI * self.mesh2.node_times

    def collocation_angles(self) -> tuple[np.ndarray, np.ndarray]:
        """Chebyshev-Gauss-Radau angles of every segment, per direction."""
        out = []
        for mesh in (self.mesh1, self.mesh2):
            x = chebyshev_radau_points(mesh.degree)
            out.append(TWO_PI * ((np.arange(mesh.intervals)[:, None] + x[None, :]) / mesh.intervals).ravel())
        return tuple(out)

    def quadrature(self):
        """Gauss-Legendre angles and weights (summing to 1) exact for the profile products."""
        out = []
        g, w = np.polynomial.legendre.leggauss(self.P + 1)
        g, w = 0.5 * (g + 1), 0.5 * w
        for mesh in (self.mesh1, self.mesh2):
            s = (np.arange(mesh.intervals)[:, None] + g[None, :]) / mesh.intervals
            out.append((TWO_PI * s.ravel(), np.tile(w, mesh.intervals) / mesh.intervals))
        return out


def _interp(mesh: Mesh, theta, deriv: bool = False, dense: bool = False):
    """Interpolation (or d/dtheta) matrix from node values to angles ``theta``."""
    s = np.asarray(theta, dtype=float) / TWO_PI
    _, sigma, idx = mesh.locate(s)
    val, der = mesh.lagrange(sigma)
    data = der * (mesh.intervals / TWO_PI) if deriv else val
    rows = np.repeat(np.arange(s.size), idx.shape[1])
    A = sp.csr_matrix((data.ravel(), (rows, idx.ravel())), shape=(s.size, mesh.n_nodes))
    return A.toarray() if dense else A


def _apply(A1, A2, U):
    """Tensor-product evaluation ``(A1 x A2) U`` for ``U`` of shape (n1, n2, 4)."""
    return np.einsum("ai,bj,ijk->abk", A1, A2, U, optimize=True)


@dataclass
class TorusSolution:
    mesh: TorusMesh
    profile: np.ndarray    # node values (N*P, M*P, 4)
    upsilon1: float
    upsilon2: float
    params: HkbParams
    residual: float = float("nan")
    newton_iterations: int = 0
    contraction: float = float("nan")

    @property
    def N(self) -> int:
        return self.mesh.N

    @property
    def M(self) -> int:
        return self.mesh.M

    @property
    def P(self) -> int:
        return self.mesh.P

    @property
    def coeffs(self) -> np.ndarray:
        """Segment coefficients ``u[i, j, p, q]`` (shape (N, M, P+1, P+1, 4))."""
        N, M, P = self.N, self.M, self.P
        i = (np.arange(N)[:, None] * P + np.arange(P + 1)) % (N * P)
        j = (np.arange(M)[:, None] * P + np.arange(P + 1)) % (M * P)
        return self.profile[i[:, None, :, None], j[None, :, None, :]]

    @property
    def frequency_ratio(self) -> float:
        return self.upsilon1 / self.upsilon2

    def evaluate(self, th1, th2) -> np.ndarray:
        """Values on the tensor grid ``th1 x th2`` (shape (len1, len2, 4))."""
        A1 = _interp(self.mesh.mesh1, np.atleast_1d(th1), dense=True)
        A2 = _interp(self.mesh.mesh2, np.atleast_1d(th2), dense=True)
        return _apply(A1, A2, self.profile)

    def evaluate_points(self, th1, th2) -> np.ndarray:
        """Values at scattered angle pairs (shape (n, 4))."""
        th1, th2 = np.broadcast_arrays(np.atleast_1d(th1), np.atleast_1d(th2))
        m1, m2 = self.mesh.mesh1, self.mesh.mesh2
        _, s1, i1 = m1.locate(th1 / TWO_PI)
        _, s2, i2 = m2.locate(th2 / TWO_PI)
        l1, _ = m1.lagrange(s1)
        l2, _ = m2.lagrange(s2)
        U = self.profile[i1[:, :, None], i2[:, None, :]]
        return np.einsum("np,nq,npqk->nk", l1, l2, U)

    def velocity(self, th1, th2) -> np.ndarray:
        """``upsilon1 du/dtheta1 + upsilon2 du/dtheta2`` on a tensor grid."""
        m1, m2 = self.mesh.mesh1, self.mesh.mesh2
        A1 = _interp(m1, th1, dense=True)
        A2 = _interp(m2, th2, dense=True)
        D1 = _interp(m1, th1, True, dense=True)
        D2 = _interp(m2, th2, True, dense=True)
        return self.upsilon1 * _apply(D1, A2, self.profile) + self.upsilon2 * _apply(A1, D2, self.profile)

    def section(self, n: int = 2000) -> np.ndarray:
        """Curve ``theta -> (upsilon1 theta/upsilon2, upsilon2 theta/upsilon1)`` mod 2pi."""
        th = TWO_PI * np.arange(n) / n
        r = self.upsilon1 / self.upsilon2
        return self.evaluate_points(np.mod(r * th, TWO_PI), np.mod(th / r, TWO_PI))

    def section_rms(self, n: int = 2000) -> float:
        u = self.section(n)
        return float(np.sqrt(np.mean(u[:, 0] ** 2 + u[:, 1] ** 2)))

    def section_phase_deg(self, n: int = 2000) -> float:
        u = self.section(n)
        k1, k2 = int(np.argmax(u[:, 0])), int(np.argmax(u[:, 1]))
        return float((360.0 * (k1 - k2) / n) % 360.0)

    def torus_rms(self) -> float:
        """RMS of ``(x1, x2)`` averaged over the whole torus."""
        (t1, w1), (t2, w2) = self.mesh.quadrature()
        u = self.evaluate(t1, t2)
        return float(np.sqrt(np.einsum("a,b,ab->", w1, w2, u[..., 0] ** 2 + u[..., 1] ** 2)))

    def swapped(self) -> "TorusSolution":
        return TorusSolution(self.mesh, swap(self.profile), self.upsilon1, self.upsilon2,
                             self.params, self.residual, self.newton_iterations, self.contraction)

    def to_csv(self) -> str:
        lines = ["i1,i2,x1,x2,v1,v2"]
        n1, n2 = self.mesh.shape
        for i in range(n1):
            for j in range(n2):
                lines.append(f"{i},{j}," + ",".join(repr(float(v)) for v in self.profile[i, j]))
        return "\n".join(lines) + "\n"

    def metadata(self) -> dict:
        return {"N": self.N, "M": self.M, "P": self.P,
                "upsilon1": self.upsilon1, "upsilon2": self.upsilon2,
                "params": self.params.as_dict(), "residual": self.residual}

    def metadata_json(self) -> str:
        return json.dumps(self.metadata(), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# invariance system


class TorusSystem:
    """Collocated invariance equations with phase conditions.

    Unknowns ``(profile, upsilon1, upsilon2, *free)`` where ``free`` names the
    parameters allowed to vary.
    """

    def __init__(self, mesh: TorusMesh, params: HkbParams, free: tuple = ("a",)):
        self.mesh = mesh
        self.params = params
        self.free = tuple(free)
        self.t1, self.t2 = mesh.collocation_angles()
        m1, m2 = mesh.mesh1, mesh.mesh2
        self.A1, self.A2 = _interp(m1, self.t1), _interp(m2, self.t2)
        self.D1, self.D2 = _interp(m1, self.t1, True), _interp(m2, self.t2, True)
        (q1, w1), (q2, w2) = mesh.quadrature()
        self.Q1, self.Q2 = _interp(m1, q1, dense=True), _interp(m2, q2, dense=True)
        self.G1, self.G2 = _interp(m1, q1, True, dense=True), _interp(m2, q2, True, dense=True)
        self.wq = np.outer(w1, w2)
        self.n = mesh.n_unknowns

    def pack(self, profile, u1, u2, *mu) -> np.ndarray:
        vals = list(mu) if mu else [getattr(self.params, k) for k in self.free]
        return np.concatenate([np.asarray(profile, float).ravel(), [u1, u2], vals])

    def unpack(self, x):
        n1, n2 = self.mesh.shape
        U = x[: self.n].reshape(n1, n2, 4)
        p = self.params.replace(**{k: float(v) for k, v in zip(self.free, x[self.n + 2:])})
        return U, float(x[self.n]), float(x[self.n + 1]), p

    def solution(self, x, residual=float("nan"), iterations=0, contraction=float("nan")):
        U, u1, u2, p = self.unpack(x)
        return TorusSolution(self.mesh, U.copy(), u1, u2, p, residual, iterations, contraction)

    def _delayed_mats(self, u1, u2, tau):
        m1, m2 = self.mesh.mesh1, self.mesh.mesh2
        td1, td2 = self.t1 - u1 * tau, self.t2 - u2 * tau
        return (_interp(m1, td1), _interp(m2, td2), _interp(m1, td1, True), _interp(m2, td2, True))

    def residual(self, x, ref=None, with_jacobian=True):
        """Invariance residual at the collocation grid (``4 n1 n2``) plus two phase conditions.

        Phase conditions are ``<d ref/d theta_k, u> = 0`` with the quadrature
        average over the torus; ``ref`` defaults to the current profile.
        """
        U, u1, u2, p = self.unpack(x)
        ref = U if ref is None else ref
        B1, B2, E1, E2 = self._delayed_mats(u1, u2, p.tau)
        A1, A2, D1, D2 = (m.toarray() for m in (self.A1, self.A2, self.D1, self.D2))
        Bd1, Bd2, Ed1, Ed2 = (m.toarray() for m in (B1, B2, E1, E2))
        u = _apply(A1, A2, U)
        du1, du2 = _apply(D1, A2, U), _apply(A1, D2, U)
        ud = _apply(Bd1, Bd2, U)
        dud1, dud2 = _apply(Ed1, Bd2, U), _apply(Bd1, Ed2, U)
        f = rhs_full(u, ud, p)
        R = (u1 * du1 + u2 * du2 - f).reshape(-1)
        # phase conditions: exact quadrature of <d ref/d theta_k, u> over the torus
        uq = _apply(self.Q1, self.Q2, U)
        r1, r2 = _apply(self.G1, self.Q2, ref), _apply(self.Q1, self.G2, ref)
        ph = [np.einsum("ab,abk,abk->", self.wq, rr, uq) for rr in (r1, r2)]
        F = np.concatenate([R, ph])
        if not with_jacobian:
            return F
        C = u.shape[0] * u.shape[1]
        Jn, Jd = rhs_derivatives(u.reshape(C, 4), ud.reshape(C, 4), p)
        I4 = sp.identity(4, format="csr")
        Kp = sp.kron(sp.kron(self.A1, self.A2), I4, format="csr")
        Kd = sp.kron(sp.kron(B1, B2), I4, format="csr")
        Kder = sp.kron(u1 * sp.kron(self.D1, self.A2) + u2 * sp.kron(self.A1, self.D2), I4,
                       format="csr")
        BJn = sp.bsr_matrix((Jn, np.arange(C), np.arange(C + 1)), shape=(4 * C, 4 * C))
        BJd = sp.bsr_matrix((Jd, np.arange(C), np.arange(C + 1)), shape=(4 * C, 4 * C))
        JU = Kder - BJn @ Kp - BJd @ Kd
        dd1 = dud1.reshape(C, 4)
        dd2 = dud2.reshape(C, 4)
        cols = [
            du1.reshape(-1) + p.tau * np.einsum("cij,cj->ci", Jd, dd1).ravel(),
            du2.reshape(-1) + p.tau * np.einsum("cij,cj->ci", Jd, dd2).ravel(),
        ]
        for name in self.free:
            if name == "tau":
                cols.append(np.einsum("cij,cj->ci", Jd, u1 * dd1 + u2 * dd2).ravel())
            else:
                cols.append(-rhs_param_derivative(u.reshape(C, 4), ud.reshape(C, 4), p, name).ravel())
        top = sp.hstack([JU, sp.csr_matrix(np.column_stack(cols))], format="csr")
        prow = []
        for rr in (r1, r2):
            g = np.einsum("ai,bj,abk->ijk", self.Q1, self.Q2, self.wq[:, :, None] * rr).ravel()
            prow.append(np.concatenate([g, np.zeros(2 + len(self.free))]))
        J = sp.vstack([top, sp.csr_matrix(np.array(prow))], format="csc")
        return F, J


def invariance_residual(t: TorusSolution, p: HkbParams | None = None) -> dict:
    """Residual field at the collocation grid plus scalar summaries.

    Closure residuals are structurally zero: node ``N*P`` is node 0 in both angles.
    """
    p = p or t.params
    sys_ = TorusSystem(t.mesh, p, free=())
    F = sys_.residual(sys_.pack(t.profile, t.upsilon1, t.upsilon2), with_jacobian=False)
    n1, n2 = t.mesh.shape
    field_ = F[:-2].reshape(n1, n2, 4)
    return {"field": field_, "max": float(np.max(np.abs(field_))),
            "phase": (float(F[-2]), float(F[-1])), "closure": (0.0, 0.0)}


# ---------------------------------------------------------------------------
# Newton and seeding


def _norm_w(system: TorusSystem):
    w = np.ones(system.n + 2 + len(system.free))
    w[: system.n] = 1.0 / (system.n // 4)
    return w


def _newton(system: TorusSystem, x, ref, extra=None, tol=1e-10, ftol=1e-8, maxiter=12):
    """Newton on the invariance system; ``extra(x) -> (g, grad)`` appends scalar rows.

    Returns ``(x, iterations, contraction)`` where ``contraction`` is the ratio
    of the second to the first update norm.
    """
    steps = []
    for it in range(1, maxiter + 1):
        F, J = system.residual(x, ref)
        if extra is not None:
            rows = [e(x) for e in extra]
            F = np.concatenate([F] + [[g] for g, _ in rows])
            J = sp.vstack([J] + [sp.csr_matrix(gr[None, :]) for _, gr in rows], format="csc")
        if not np.all(np.isfinite(F)):
            raise TorusError("non-finite residual")
        dx = spla.spsolve(J, -F)
        if not np.all(np.isfinite(dx)):
            raise TorusError("singular Jacobian")
        x = x + dx
        steps.append(float(np.max(np.abs(dx))))
        if steps[-1] <= tol * max(1.0, float(np.max(np.abs(x)))):
            F = system.residual(x, ref, with_jacobian=False)
            if np.max(np.abs(F)) <= ftol:
                c = steps[1] / steps[0] if len(steps) > 1 and steps[0] > 0 else 0.0
                return x, it, c
        if len(steps) > 3 and steps[-1] > steps[-2]:
            break
    raise TorusError("torus Newton iteration did not converge")


def locate_torus_point(branch: Branch, event: BranchEvent, tol=1e-10, maxiter=20) -> CollocationOrbit:
    """Secant refinement of the parameter where a complex multiplier pair has modulus 1."""
    if event.kind is not EventKind.TORUS:
        raise ValueError("event is not a torus bifurcation")
    axis = branch.axis

    def g(orbit):
        mu = orbit.floquet.nontrivial()
        cplx = np.abs(mu.imag) > REAL_TOL
        k = np.argmin(np.where(cplx, np.abs(np.abs(mu) - 1), np.inf))
        return float(abs(mu[k]) - 1)

    p0, p1 = branch.points[event.index - 1], branch.points[event.index]
    x0, x1 = getattr(p0.params, axis), getattr(p1.params, axis)
    g0, g1 = g(p0.solution), g(p1.solution)
    orbit = p1.solution
    for _ in range(maxiter):
        if g1 == g0:
            break
        x2 = x1 - g1 * (x1 - x0) / (g1 - g0)
        orbit = correct_orbit(CollocationOrbit(orbit.mesh, orbit.profile, orbit.T,
                                               orbit.params.replace(**{axis: float(x2)})))
        orbit.floquet = floquet_multipliers(orbit)
        x0, g0, x1, g1 = x1, g1, x2, g(orbit)
        if abs(g1) < tol or abs(x1 - x0) < 1e-13:
            break
    return orbit


def _critical_pair(fl: FloquetData) -> complex:
    mu = fl.nontrivial()
    cand = mu[mu.imag > REAL_TOL]
    if cand.size == 0:
        raise TorusError("no complex multiplier pair")
    return complex(cand[np.argmin(np.abs(np.abs(cand) - 1))])


def torus_init_from_bifurcation(orbit: CollocationOrbit, floquet: FloquetData | None = None,
                                mesh: TorusMesh | None = None, eps: float = SEED_EPS,
                                axis: str = "a") -> TorusSolution:
    """First-order torus at a torus bifurcation, corrected on the invariance system.

    The seed is ``orbit(theta1) + eps Re(exp(i theta2) p(theta1))`` where ``p``
    is the periodic part of the critical Floquet eigenfunction; ``upsilon1 =
    2pi/T`` and ``upsilon2 = (arg mu + 2pi k)/T`` with ``k`` chosen so that
    ``p`` is as smooth as possible.  The correction step frees ``axis``.
    """
    mesh = mesh or TorusMesh()
    floquet = floquet or floquet_multipliers(orbit)
    mu, y = floquet_eigenfunction(orbit, _critical_pair(floquet))
    s = np.arange(y.shape[0]) / (y.shape[0] - 1)
    logmu = complex(np.log(mu))
    per = y * np.exp(-logmu * s)[:, None]          # periodic part on nodes 0..N
    per = per[:-1]
    best = None
    for k in range(-3, 4):
        pk = per * np.exp(-2j * math.pi * k * orbit.mesh.node_times)[:, None]
        rough = float(np.sum(np.abs(np.diff(pk, axis=0, append=pk[:1])) ** 2))
        if best is None or rough < best[0]:
            best = (rough, k, pk)
    _, k, pk = best
    pk = pk / np.max(np.abs(pk[:, :2]))
    u1 = TWO_PI / orbit.T
    u2 = (logmu.imag + TWO_PI * k) / orbit.T
    # node values on the torus mesh
    base = CollocationOrbit(orbit.mesh, orbit.profile, orbit.T, orbit.params)
    eig = CollocationOrbit(orbit.mesh, pk.real, orbit.T, orbit.params)
    eig_i = CollocationOrbit(orbit.mesh, pk.imag, orbit.T, orbit.params)
    th1, th2 = mesh.node_angles()
    s1 = th1 / TWO_PI
    u0 = base.evaluate(s1)
    pr, pi = eig.evaluate(s1), eig_i.evaluate(s1)
    U0 = np.broadcast_to(u0[:, None, :], mesh.shape + (4,)).copy()
    dU = (np.cos(th2)[None, :, None] * pr[:, None, :] - np.sin(th2)[None, :, None] * pi[:, None, :])
    system = TorusSystem(mesh, orbit.params, free=(axis,))
    w = _norm_w(system)
    t0 = system.pack(dU, 0.0, 0.0, 0.0)
    t0 /= math.sqrt(t0 @ (w * t0))
    X0 = system.pack(U0, u1, u2, getattr(orbit.params, axis))
    amp = eps * math.sqrt(np.sum(dU ** 2) / (system.n // 4))
    Xp = X0 + amp * t0
    ref = Xp[: system.n].reshape(mesh.shape + (4,))
    arc = lambda x: ((x - Xp) @ (w * t0), w * t0)
    x, it, c = _newton(system, Xp, ref, extra=[arc])
    F = system.residual(x, ref, with_jacobian=False)
    return system.solution(x, float(np.max(np.abs(F[:-2]))), it, c)


# ---------------------------------------------------------------------------
# harmonic spectrum and locking indicator


@dataclass
class HarmonicSpectrum:
    S1: np.ndarray          # S_{1,k}, k = 0..K1/2
    S2: np.ndarray          # S_{2,l}, l = 0..K2/2
    energy: float           # integral of |du/dt|^2 over the torus
    totals: tuple = (0.0, 0.0)   # two-sided sums of S over all harmonics, per direction

    def parseval_error(self) -> float:
        """Relative mismatch between the spectral totals and ``2pi`` times the energy."""
        ref = TWO_PI * self.energy
        return float(max(abs(t - ref) for t in self.totals) / ref)


def _sample_grid(mesh: TorusMesh, factor: int = 4):
    n1, n2 = mesh.shape
    K1, K2 = factor * n1, factor * n2
    return TWO_PI * np.arange(K1) / K1, TWO_PI * np.arange(K2) / K2


def _velocity_samples(t: TorusSolution, factor: int):
    th1, th2 = _sample_grid(t.mesh, factor)
    return t.velocity(th1, th2)


def _spectra(v):
    """One-sided ``U`` transforms and ``S`` energies for velocity samples ``v`` (K1, K2, 4)."""
    K1, K2 = v.shape[:2]
    Uh1 = np.fft.fft(v, axis=0) * (TWO_PI / K1)       # U_{1,k}(theta2_j)
    Uh2 = np.fft.fft(v, axis=1) * (TWO_PI / K2)       # U_{2,l}(theta1_m)
    E1 = np.sum(np.abs(Uh1) ** 2, axis=2)             # (K1, K2)
    E2 = np.sum(np.abs(Uh2) ** 2, axis=2)
    S1_all = E1.sum(axis=1) * (TWO_PI / K2)
    S2_all = E2.sum(axis=0) * (TWO_PI / K1)
    return Uh1, Uh2, S1_all, S2_all


def harmonic_spectrum(t: TorusSolution, factor: int = 4) -> HarmonicSpectrum:
    """Harmonic energies of the velocity profile along each angle.

    ``U_{1,k}(theta2) = int u_dot exp(-i k theta1) dtheta1`` by the DFT of
    uniform samples, and ``S_{1,k} = int U_{1,k}^H U_{1,k} dtheta2``
    (likewise for the second angle).
    """
    v = _velocity_samples(t, factor)
    K1, K2 = v.shape[:2]
    _, _, S1_all, S2_all = _spectra(v)
    energy = float(np.sum(v ** 2) * (TWO_PI / K1) * (TWO_PI / K2))
    return HarmonicSpectrum(S1_all[: K1 // 2 + 1].copy(), S2_all[: K2 // 2 + 1].copy(), energy,
                            (float(S1_all.sum()), float(S2_all.sum())))


def _gamma_from(S1, S2, p_cut, delta, upper):
    fund = S1[1] + S2[1]
    if fund <= 0:
        raise ZeroDivisionError("zero fundamental harmonic energy")
    hi1, hi2 = min(upper[0], S1.size - 1), min(upper[1], S2.size - 1)
    tail = S1[p_cut + 1: hi1 + 1].sum() + S2[p_cut + 1: hi2 + 1].sum()
    return ((fund - tail) / fund) ** 2 - delta ** 2, fund, tail


def locking_indicator(t: TorusSolution, p_cut: int | None = None, delta: float = DELTA_DEFAULT,
                      factor: int = 4, upper: tuple | None = None) -> float:
    """``Gamma = ((S_fund - S_tail)/S_fund)^2 - delta^2``.

    ``S_fund`` sums the first harmonic of both angles; ``S_tail`` sums
    harmonics ``p_cut+1 .. upper`` of both angles (defaults: ``p_cut = P``,
    ``upper = (N, M)``).
    """
    p_cut = t.P if p_cut is None else p_cut
    upper = upper or (t.N, t.M)
    sp_ = harmonic_spectrum(t, factor)
    if sp_.S1.size <= p_cut + 1 or sp_.S2.size <= p_cut + 1:
        raise ValueError("spectrum not resolved to the requested order")
    return float(_gamma_from(sp_.S1, sp_.S2, p_cut, delta, upper)[0])


def _gamma_gradient(system: TorusSystem, x, p_cut, delta, factor=4, upper=None):
    """Gamma and its gradient with respect to ``(profile, upsilon1, upsilon2, free...)``."""
    U, u1, u2, p = system.unpack(x)
    mesh = system.mesh
    upper = upper or (mesh.N, mesh.M)
    th1, th2 = _sample_grid(mesh, factor)
    A1 = _interp(mesh.mesh1, th1, dense=True)
    A2 = _interp(mesh.mesh2, th2, dense=True)
    D1 = _interp(mesh.mesh1, th1, True, dense=True)
    D2 = _interp(mesh.mesh2, th2, True, dense=True)
    w1, w2 = _apply(D1, A2, U), _apply(A1, D2, U)
    v = u1 * w1 + u2 * w2
    K1, K2 = v.shape[:2]
    Uh1, Uh2, S1_all, S2_all = _spectra(v)
    gam, fund, tail = _gamma_from(S1_all[: K1 // 2 + 1], S2_all[: K2 // 2 + 1], p_cut, delta, upper)
    r = tail / fund
    # weights c_k on the one-sided harmonics: -r on the fundamental, 1 on the tail
    c1 = np.zeros(K1)
    c2 = np.zeros(K2)
    c1[1] = c2[1] = -r
    c1[p_cut + 1: min(upper[0], K1 // 2) + 1] = 1.0
    c2[p_cut + 1: min(upper[1], K2 // 2) + 1] = 1.0
    # dS_{1,k}/dv = 2 (2pi)^2/(K1 K2) Re(sum_k U_k exp(+ik theta)) per component
    g1 = np.real(np.fft.ifft(c1[:, None, None] * Uh1, axis=0)) * K1
    g2 = np.real(np.fft.ifft(c2[None, :, None] * Uh2, axis=1)) * K2
    scale = 2.0 * TWO_PI ** 2 / (K1 * K2)
    gv = -2.0 * (1.0 - r) / fund * scale * (g1 + g2)
    gU = u1 * np.einsum("ai,bj,abk->ijk", D1, A2, gv) + u2 * np.einsum("ai,bj,abk->ijk", A1, D2, gv)
    grad = np.zeros(x.size)
    grad[: system.n] = gU.ravel()
    grad[system.n] = float(np.sum(gv * w1))
    grad[system.n + 1] = float(np.sum(gv * w2))
    return gam, grad


# ---------------------------------------------------------------------------
# continuation


@dataclass
class TorusBranch:
    axis: str
    points: list = field(default_factory=list)      # TorusSolution
    arclength: list = field(default_factory=list)
    events: list = field(default_factory=list)
    status: str = "complete"
    message: str = ""
    degraded: bool = False

    def ratios(self) -> np.ndarray:
        return np.array([t.frequency_ratio for t in self.points])

    def param_values(self, name=None) -> np.ndarray:
        return np.array([getattr(t.params, name or self.axis) for t in self.points])

    def to_csv(self) -> str:
        lines = ["arclength,a,tau,upsilon1,upsilon2,ratio,rms,phase_deg,residual,newton_iterations"]
        for s, t in zip(self.arclength, self.points):
            lines.append(",".join(repr(float(v)) for v in (
                s, t.params.a, t.params.tau, t.upsilon1, t.upsilon2, t.frequency_ratio,
                t.section_rms(), t.section_phase_deg(), t.residual)) + f",{t.newton_iterations}")
        return "\n".join(lines) + "\n"

    def events_json(self) -> str:
        return json.dumps({"axis": self.axis, "status": self.status, "message": self.message,
                           "degraded": self.degraded,
                           "events": [e.as_dict() for e in self.events]},
                          indent=2, sort_keys=True) + "\n"


def _tangent(system, x, w, prev, extra_grads=()):
    _, J = system.residual(x, x[: system.n].reshape(system.mesh.shape + (4,)))
    rows = [J] + [sp.csr_matrix(g[None, :]) for g in extra_grads] + [sp.csr_matrix((w * prev)[None, :])]
    JJ = sp.vstack(rows, format="csc")
    rhs = np.zeros(JJ.shape[0])
    rhs[-1] = 1.0
    t = spla.spsolve(JJ, rhs)
    return t / math.sqrt(t @ (w * t))


def _lock_event(t: TorusSolution, index: int, lock_tol: float):
    return BranchEvent(EventKind.LOCKING, index,
                       {"a": t.params.a, "tau": t.params.tau, "ratio": t.frequency_ratio},
                       (t.frequency_ratio - 1.0,))


def continue_torus(start: TorusSolution, axis: str = "a", direction: int = 1, rng=(-2.0, 2.0),
                   ds: float = DS_INIT, max_points: int = 200, lock_tol: float = 1e-2,
                   initial_tangent: np.ndarray | None = None,
                   pass_locking: bool = False) -> TorusBranch:
    """Pseudo-arclength continuation of a torus in ``axis``.

    Stops with a terminal Locking event once ``|upsilon1/upsilon2 - 1| <= lock_tol``,
    when the ratio steps across 1, or when the corrector breaks down near the
    resonance.  With ``pass_locking`` the run continues through the window
    ``|upsilon1/upsilon2 - 1| <= lock_tol``, records Locking events where it
    enters and leaves it, and stops at the exit.  Steps are halved
    down to ``DS_MIN``; one jump of three tangent steps is tried before giving up.
    """
    lo, hi = sorted(map(float, rng))
    system = TorusSystem(start.mesh, start.params, free=(axis,))
    w = _norm_w(system)
    x = system.pack(start.profile, start.upsilon1, start.upsilon2, getattr(start.params, axis))
    if initial_tangent is None:
        guess = np.zeros_like(x)
        guess[-1] = float(direction)
        t = _tangent(system, x, w, guess)
        if t[-1] * direction < 0:
            t = -t
    else:
        t = initial_tangent
    br = TorusBranch(axis)
    s_acc = 0.0
    jumped = False
    pt = start
    for k in range(max_points):
        br.points.append(pt)
        br.arclength.append(s_acc)
        if len(br.points) >= 10:
            cs = [q.contraction for q in br.points[-10:]]
            br.degraded = bool(np.all(np.diff(cs) >= -1e-3) and cs[-1] > cs[0])
        inside = abs(pt.frequency_ratio - 1.0) <= lock_tol
        if pass_locking:
            was = len(br.points) > 1 and abs(br.points[-2].frequency_ratio - 1.0) <= lock_tol
            if inside != was and len(br.points) > 1:
                br.events.append(_lock_event(pt, len(br.points) - 1, lock_tol))
                if was:
                    br.message = "locking window passed"
                    return br
        else:
            crossed = len(br.points) > 1 and \
                (br.points[-2].frequency_ratio - 1.0) * (pt.frequency_ratio - 1.0) <= 0
            if inside or crossed:
                br.events.append(_lock_event(pt, len(br.points) - 1, lock_tol))
                br.message = "locking reached"
                return br
        mu = getattr(pt.params, axis)
        if not (lo <= mu <= hi) or k == max_points - 1:
            return br
        ref = pt.profile
        while True:
            xp = x + ds * t
            arc = lambda z, xp=xp: ((z - xp) @ (w * t), w * t)
            try:
                xn, it, c = _newton(system, xp, ref, extra=[arc])
                break
            except (TorusError, RuntimeError, ValueError):
                ds *= 0.5
                if ds < DS_MIN:
                    if not jumped:
                        jumped = True
                        ds = DS_INIT
                        x = x + 3 * DS_INIT * t
                        continue
                    br.status = "partial"
                    br.message = "corrector breakdown"
                    br.events.append(_lock_event(pt, len(br.points) - 1, lock_tol))
                    return br
        F = system.residual(xn, ref, with_jacobian=False)
        pt = system.solution(xn, float(np.max(np.abs(F[:-2]))), it, c)
        s_acc += float(math.sqrt((xn - x) @ (w * (xn - x))))
        t = _tangent(system, xn, w, t)
        x = xn
        if it <= 4:
            ds = min(1.3 * ds, DS_MAX)
    return br


@dataclass
class LockingBranch:
    delta: float
    points: list = field(default_factory=list)     # (a, tau, TorusSolution)
    gamma_residuals: list = field(default_factory=list)
    status: str = "complete"
    message: str = ""

    def to_csv(self) -> str:
        lines = ["a,tau,upsilon_ratio,Gamma_level"]
        for a, tau, t in self.points:
            lines.append(f"{a!r},{tau!r},{t.frequency_ratio!r},{self.delta!r}")
        return "\n".join(lines) + "\n"


def continue_near_locking(seed: TorusSolution, delta: float = DELTA_DEFAULT, plane=("a", "tau"),
                          p_cut: int | None = None, ds: float = 5e-3, max_points: int = 50,
                          direction: int = 1, a_range=(-2.0, 2.0), tau_range=(0.0, 2.0),
                          gamma_tol: float = 1e-8) -> LockingBranch:
    """Two-parameter continuation of the level set ``Gamma = 0`` in ``(a, tau)``.

    The seed is first corrected onto ``Gamma = 0`` with the second plane
    parameter held fixed.
    """
    p_cut = seed.P if p_cut is None else p_cut
    system = TorusSystem(seed.mesh, seed.params, free=tuple(plane))
    w = _norm_w(system)
    out = LockingBranch(float(delta))
    gam = lambda z: _gamma_gradient(system, z, p_cut, delta)
    x = system.pack(seed.profile, seed.upsilon1, seed.upsilon2,
                    *[getattr(seed.params, k) for k in plane])
    fix = np.zeros_like(x)
    fix[-1] = 1.0
    x0 = x.copy()
    hold = lambda z: ((z - x0) @ fix, fix)
    try:
        x, it, c = _newton(system, x, seed.profile, extra=[gam, hold], ftol=1e-8)
    except TorusError as exc:
        out.status, out.message = "partial", f"seed correction failed: {exc}"
        return out

    def record(z, it, c):
        F = system.residual(z, with_jacobian=False)
        sol = system.solution(z, float(np.max(np.abs(F[:-2]))), it, c)
        g, _ = gam(z)
        out.points.append((sol.params.a, sol.params.tau, sol))
        out.gamma_residuals.append(abs(float(g)))
        return sol

    sol = record(x, it, c)
    guess = np.zeros_like(x)
    guess[-2] = float(direction)
    t = _tangent(system, x, w, guess, extra_grads=[gam(x)[1]])
    if t[-2] * direction < 0:
        t = -t
    for _ in range(max_points - 1):
        while True:
            xp = x + ds * t
            arc = lambda z, xp=xp: ((z - xp) @ (w * t), w * t)
            try:
                xn, it, c = _newton(system, xp, sol.profile, extra=[gam, arc], ftol=1e-8)
                break
            except (TorusError, ValueError, ZeroDivisionError):
                ds *= 0.5
                if ds < DS_MIN:
                    out.status, out.message = "partial", "step failure near resonance"
                    return out
        sol = record(xn, it, c)
        t = _tangent(system, xn, w, t, extra_grads=[gam(xn)[1]])
        x = xn
        if not (a_range[0] <= sol.params.a <= a_range[1] and tau_range[0] <= sol.params.tau <= tau_range[1]):
            break
        if it <= 4:
            ds = min(1.3 * ds, DS_MAX)
    return out
