"""Piecewise-polynomial collocation of periodic orbits of the delayed HKB system.

Time is rescaled to ``s = t/T`` in ``[0, 1)``.  The profile is stored by its
values at ``N = L*d`` equispaced-per-interval Lagrange nodes; the last node
of each interval is the first node of the next and node ``N`` coincides with
node 0, so periodicity holds by construction.  The delayed argument is
``s - tau/T`` wrapped modulo 1, which requires ``tau < T``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import HkbParams, rhs_derivatives, rhs_full, rhs_param_derivative, swap

CONT_PARAMS = ("a", "tau", "gamma", "b")


@dataclass(frozen=True)
class Mesh:
    intervals: int = 40
    degree: int = 4

    @property
    def n_nodes(self) -> int:
        return self.intervals * self.degree

    @property
    def local_nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.degree + 1)

    @property
    def gauss(self) -> tuple[np.ndarray, np.ndarray]:
        x, w = np.polynomial.legendre.leggauss(self.degree)
        return 0.5 * (x + 1.0), 0.5 * w

    @property
    def node_times(self) -> np.ndarray:
        return np.arange(self.n_nodes) / self.n_nodes

    def lagrange(self, sigma):
        """Lagrange basis values and derivatives at local coordinates ``sigma``."""
        sigma = np.asarray(sigma, dtype=float)
        xs = self.local_nodes
        n = xs.size
        val = np.ones(sigma.shape + (n,))
        der = np.zeros(sigma.shape + (n,))
        for j in range(n):
            others = [m for m in range(n) if m != j]
            denom = np.prod([xs[j] - xs[m] for m in others])
            terms = [sigma - xs[m] for m in others]
            val[..., j] = np.prod(terms, axis=0) / denom
            acc = 0.0
            for k in range(len(others)):
                acc = acc + np.prod([terms[q] for q in range(len(others)) if q != k], axis=0)
            der[..., j] = acc / denom
        return val, der

    def locate(self, s, periodic=True):
        """Interval index, local coordinate and node indices for global times ``s``."""
        s = np.asarray(s, dtype=float)
        if periodic:
            s = np.mod(s, 1.0)
        i = np.clip(np.floor(s * self.intervals).astype(int), 0, self.intervals - 1)
        sigma = s * self.intervals - i
        idx = i[..., None] * self.degree + np.arange(self.degree + 1)
        if periodic:
            idx = idx % self.n_nodes
        return i, sigma, idx

    def collocation_points(self) -> tuple[np.ndarray, np.ndarray]:
        g, w = self.gauss
        s = (np.arange(self.intervals)[:, None] + g[None, :]) / self.intervals
        return s.ravel(), np.tile(w, self.intervals) / self.intervals


@dataclass
class CollocationOrbit:
    mesh: Mesh
    profile: np.ndarray      # (N, 4) node values
    T: float
    params: HkbParams
    residual: float = float("nan")
    floquet: "FloquetData" | None = None

    def evaluate(self, s) -> np.ndarray:
        _, sigma, idx = self.mesh.locate(s)
        val, _ = self.mesh.lagrange(sigma)
        return np.einsum("...j,...jk->...k", val, self.profile[idx])

    def derivative(self, s) -> np.ndarray:
        """Derivative with respect to rescaled time ``s``."""
        _, sigma, idx = self.mesh.locate(s)
        _, der = self.mesh.lagrange(sigma)
        return self.mesh.intervals * np.einsum("...j,...jk->...k", der, self.profile[idx])

    def samples(self, n: int = 400) -> tuple[np.ndarray, np.ndarray]:
        s = np.arange(n) / n
        return s * self.T, self.evaluate(s)

    @property
    def rms_amplitude(self) -> float:
        s, w = self.mesh.collocation_points()
        u = self.evaluate(s)
        return float(np.sqrt(np.sum(w * (u[:, 0] ** 2 + u[:, 1] ** 2))))

    def phase_shift_deg(self, n: int = 4000) -> float:
        """Phase lag between the maxima of ``x1`` and ``x2`` in degrees."""
        s = np.arange(n) / n
        u = self.evaluate(s)
        t1 = _periodic_argmax(u[:, 0], n)
        t2 = _periodic_argmax(u[:, 1], n)
        return float((360.0 * (t1 - t2)) % 360.0)

    def symmetry_residuals(self) -> tuple[float, float]:
        """``max|x1 - x2|`` and ``max|x1 + x2|`` over the nodes."""
        x = self.profile
        return float(np.max(np.abs(x[:, 0] - x[:, 1]))), float(np.max(np.abs(x[:, 0] + x[:, 1])))

    def delay_shift_residual(self, n: int = 2000, mirror: bool = False) -> float:
        """``max_t |x1(t) - x2(t - tau)|``, or ``max_t |x2(t) - x1(t - tau)|`` if ``mirror``."""
        s = np.arange(n) / n
        u = self.evaluate(s)
        ud = self.evaluate(s - self.params.tau / self.T)
        i, j = (1, 0) if mirror else (0, 1)
        return float(np.max(np.abs(u[:, i] - ud[:, j])))

    def swapped(self) -> "CollocationOrbit":
        return CollocationOrbit(self.mesh, swap(self.profile), self.T, self.params, self.residual)

    def to_csv(self, n: int = 400) -> str:
        t, u = self.samples(n)
        lines = ["t,x1,x2,v1,v2"]
        for ti, ui in zip(t, u):
            lines.append(f"{ti!r}," + ",".join(repr(float(v)) for v in ui))
        return "\n".join(lines) + "\n"


def _periodic_argmax(x, n):
    k = int(np.argmax(x))
    ym, y0, yp = x[(k - 1) % n], x[k], x[(k + 1) % n]
    den = ym - 2 * y0 + yp
    off = 0.5 * (ym - yp) / den if den != 0 else 0.0
    return (k + off) / n


class DelayWrapError(ValueError):
    pass


class PeriodicBvp:
    """Residual and Jacobian of the periodic collocation system.

    Unknowns are ``(profile.ravel(), T, mu)`` where ``mu`` is the value of
    the free parameter ``param`` (held fixed when ``param`` is None).
    """

    def __init__(self, mesh: Mesh, params: HkbParams, param: str | None = "a"):
        if param is not None and param not in CONT_PARAMS:
            raise ValueError(f"unsupported continuation parameter {param!r}")
        self.mesh = mesh
        self.params = params
        self.param = param
        self.s_col, self.w_col = mesh.collocation_points()
        self.i_col, self.sig_col, self.idx_col = mesh.locate(self.s_col)
        self.l_col, self.dl_col = mesh.lagrange(self.sig_col)
        self.n = 4 * mesh.n_nodes

    def pack(self, profile, T, mu=None) -> np.ndarray:
        x = [np.asarray(profile, float).ravel(), [T]]
        if self.param is not None:
            x.append([self.params.as_dict()[self.param] if mu is None else mu])
        return np.concatenate(x)

    def unpack(self, x):
        N = self.mesh.n_nodes
        U = x[: 4 * N].reshape(N, 4)
        T = x[4 * N]
        p = self.params if self.param is None else self.params.replace(**{self.param: float(x[4 * N + 1])})
        return U, T, p

    def _eval(self, U, idx, lval):
        return np.einsum("cj,cjk->ck", lval, U[idx])

    def residual(self, x, ref=None, with_jacobian=True):
        """Collocation residual (``4N``) plus the integral phase condition against ``ref``."""
        mesh = self.mesh
        N, L = mesh.n_nodes, mesh.intervals
        U, T, p = self.unpack(x)
        if not (0 < p.tau < T):
            raise DelayWrapError(f"delay wrap needs 0 < tau < T (tau={p.tau}, T={T})")
        u = self._eval(U, self.idx_col, self.l_col)
        du = L * self._eval(U, self.idx_col, self.dl_col)
        sd = self.s_col - p.tau / T
        _, sig_d, idx_d = mesh.locate(sd)
        l_d, dl_d = mesh.lagrange(sig_d)
        ud = self._eval(U, idx_d, l_d)
        dud = L * self._eval(U, idx_d, dl_d)
        f = rhs_full(u, ud, p)
        R = (du - T * f).ravel()
        ref = U if ref is None else ref
        dref = L * self._eval(ref, self.idx_col, self.dl_col)
        phase = np.sum(self.w_col * np.einsum("ck,ck->c", u, dref))
        F = np.concatenate([R, [phase]])
        if not with_jacobian:
            return F
        Jn, Jd = rhs_derivatives(u, ud, p)
        ncol = self.n + 1 + (self.param is not None)
        J = np.zeros((self.n + 1, ncol))
        C = self.s_col.size
        rows = (4 * np.arange(C))[:, None] + np.arange(4)[None, :]       # (C, 4)
        eye = np.eye(4)
        # own-interval contributions
        blk = (L * self.dl_col[:, :, None, None] * eye
               - T * self.l_col[:, :, None, None] * Jn[:, None, :, :])  # (C, d+1, 4, 4)
        self._scatter(J, rows, self.idx_col, blk)
        blk_d = -T * l_d[:, :, None, None] * Jd[:, None, :, :]
        self._scatter(J, rows, idx_d, blk_d)
        jd_dud = np.einsum("cij,cj->ci", Jd, dud)
        J[: self.n, self.n] = (-f - (p.tau / T) * jd_dud).ravel()
        if self.param is not None:
            if self.param == "tau":
                col = jd_dud
            else:
                col = -T * rhs_param_derivative(u, ud, p, self.param)
            J[: self.n, self.n + 1] = col.ravel()
        # phase row
        prow = self.w_col[:, None, None] * self.l_col[:, :, None] * dref[:, None, :]  # (C, d+1, 4)
        cols = 4 * self.idx_col[:, :, None] + np.arange(4)
        np.add.at(J[self.n], cols.ravel(), prow.ravel())
        return F, J

    @staticmethod
    def _scatter(J, rows, idx, blk):
        C, nb = idx.shape
        r = np.broadcast_to(rows[:, None, :, None], (C, nb, 4, 4))
        c = np.broadcast_to((4 * idx)[:, :, None, None] + np.arange(4)[None, None, None, :],
                            (C, nb, 4, 4))
        np.add.at(J, (r.ravel(), c.ravel()), blk.ravel())

    def to_orbit(self, x, residual=float("nan")) -> CollocationOrbit:
        U, T, p = self.unpack(x)
        return CollocationOrbit(self.mesh, U.copy(), float(T), p, residual)


def newton(fun, x0, tol=1e-10, maxiter=12, ftol=1e-9):
    """Plain Newton iteration; returns ``(x, iterations)`` or raises RuntimeError."""
    x = np.array(x0, dtype=float)
    for it in range(1, maxiter + 1):
        F, J = fun(x)
        if not np.all(np.isfinite(F)):
            raise RuntimeError("non-finite residual")
        dx = np.linalg.solve(J, -F)
        x = x + dx
        if np.max(np.abs(dx)) <= tol * max(1.0, np.max(np.abs(x))):
            F, _ = fun(x)
            if np.max(np.abs(F)) <= ftol:
                return x, it
    raise RuntimeError("Newton iteration did not converge")


def correct_orbit(orbit: CollocationOrbit, tol=1e-10) -> CollocationOrbit:
    """Newton-correct an orbit at fixed parameters."""
    bvp = PeriodicBvp(orbit.mesh, orbit.params, param=None)
    ref = orbit.profile.copy()
    x0 = bvp.pack(orbit.profile, orbit.T)
    x, _ = newton(lambda x: bvp.residual(x, ref), x0, tol)
    res = float(np.max(np.abs(bvp.residual(x, ref, with_jacobian=False)[:-1])))
    return bvp.to_orbit(x, res)


def collocation_residual(orbit: CollocationOrbit) -> float:
    bvp = PeriodicBvp(orbit.mesh, orbit.params, param=None)
    F = bvp.residual(bvp.pack(orbit.profile, orbit.T), with_jacobian=False)
    return float(np.max(np.abs(F[:-1])))


# ---------------------------------------------------------------------------
# Floquet multipliers


@dataclass
class FloquetData:
    multipliers: np.ndarray                 # sorted by decreasing modulus
    symmetry: np.ndarray = field(default_factory=lambda: np.zeros(0))  # +1 sym, -1 anti, 0 none
    trivial_index: int = -1

    @property
    def trivial(self) -> complex:
        return complex(self.multipliers[self.trivial_index])

    def nontrivial(self) -> np.ndarray:
        keep = np.ones(self.multipliers.size, bool)
        keep[self.trivial_index] = False
        return self.multipliers[keep]

    def n_unstable(self, tol=1e-6) -> int:
        return int(np.sum(np.abs(self.nontrivial()) > 1 + tol))


def period_map(orbit: CollocationOrbit):
    """Reduced discretised period map of the variational equation.

    Returns ``(M, nodes, M_all)``: ``nodes`` are the previous-period node
    indices (0..N) on which the map acts, ``M`` is the map restricted to
    them and ``M_all`` gives the next-period values at every node.
    """
    mesh, p, T = orbit.mesh, orbit.params, orbit.T
    if not (0 < p.tau < T):
        raise DelayWrapError("period map needs 0 < tau < T")
    N, L, d = mesh.n_nodes, mesh.intervals, mesh.degree
    s_c, _ = mesh.collocation_points()
    _, sig, idx = mesh.locate(s_c, periodic=False)        # nodes 0..N, not wrapped
    lv, dl = mesh.lagrange(sig)
    U = np.vstack([orbit.profile, orbit.profile[:1]])
    u = np.einsum("cj,cjk->ck", lv, U[idx])
    sd = s_c - p.tau / T
    prev = sd < 0
    _, sig_d, idx_d = mesh.locate(np.where(prev, sd + 1.0, sd), periodic=False)
    l_d, _ = mesh.lagrange(sig_d)
    ud = np.einsum("cj,cjk->ck", l_d, U[idx_d])
    Jn, Jd = rhs_derivatives(u, ud, p)
    n = 4 * (N + 1)
    Ecur = np.zeros((n, n))
    Eprev = np.zeros((n, n))
    Ecur[:4, :4] = np.eye(4)
    Eprev[:4, 4 * N:4 * N + 4] = -np.eye(4)
    C = s_c.size
    rows = 4 + (4 * np.arange(C))[:, None] + np.arange(4)
    eye = np.eye(4)
    blk = L * dl[:, :, None, None] * eye - T * lv[:, :, None, None] * Jn[:, None]
    PeriodicBvp._scatter(Ecur, rows, idx, blk)
    blk_d = -T * l_d[:, :, None, None] * Jd[:, None]
    cur = ~prev
    if np.any(cur):
        PeriodicBvp._scatter(Ecur, rows[cur], idx_d[cur], blk_d[cur])
    if np.any(prev):
        PeriodicBvp._scatter(Eprev, rows[prev], idx_d[prev], blk_d[prev])
    nodes = np.unique(np.concatenate([idx_d[prev].ravel(), [N]]))
    cols = (4 * nodes[:, None] + np.arange(4)).ravel()
    Mfull = -np.linalg.solve(Ecur, Eprev[:, cols])
    return Mfull[cols], nodes, Mfull


def floquet_multipliers(orbit: CollocationOrbit, count: int = 20) -> FloquetData:
    """Dominant Floquet multipliers with a swap-symmetry tag for each eigenvector."""
    M, nodes, _ = period_map(orbit)
    mu, vec = np.linalg.eig(M)
    order = np.argsort(-np.abs(mu))[:count]
    mu, vec = mu[order], vec[:, order]
    V = vec.reshape(nodes.size, 4, -1)
    sym = np.zeros(mu.size)
    scale = 1e-6 * max(1.0, np.max(np.abs(orbit.profile)))
    r_in, r_anti = orbit.symmetry_residuals()
    # symmetric orbits: x1 = x2 (swap) or x1 = -x2 (swap with sign change)
    sigma = 1.0 if r_in <= scale else (-1.0 if r_anti <= scale else 0.0)
    symmetric = sigma != 0.0
    if symmetric:
        PV = sigma * V[:, [1, 0, 3, 2], :]
        for k in range(mu.size):
            nv = np.linalg.norm(V[:, :, k])
            ds = np.linalg.norm(PV[:, :, k] - V[:, :, k]) / nv
            da = np.linalg.norm(PV[:, :, k] + V[:, :, k]) / nv
            sym[k] = 1 if ds < 1e-3 else (-1 if da < 1e-3 else 0)
    cand = np.arange(mu.size)
    if symmetric:
        cand = cand[sym >= 0]
    trivial = int(cand[np.argmin(np.abs(mu[cand] - 1.0))])
    return FloquetData(mu, sym, trivial)


def floquet_eigenfunction(orbit: CollocationOrbit, target: complex) -> tuple[complex, np.ndarray]:
    """Multiplier closest to ``target`` and its eigenfunction over one period.

    The eigenfunction is returned at nodes ``0..N`` of the period following
    the one on which the map acts, scaled to unit maximum modulus.
    """
    M, nodes, Mall = period_map(orbit)
    mu, vec = np.linalg.eig(M)
    k = int(np.argmin(np.abs(mu - target)))
    y = (Mall @ vec[:, k]).reshape(-1, 4)
    y = y / np.max(np.abs(y))
    return complex(mu[k]), y
