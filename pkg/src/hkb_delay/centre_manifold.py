"""Double-Hopf points and their normal forms via centre-manifold reduction.

The critical eigenfunctions ``q_k(theta) = v_k exp(i nu_k theta)`` span the
centre space.  Complex coordinates ``zeta_k = u_{2k-1} - i u_{2k}`` rotate as
``exp(+i nu_k t)`` and read ``x_t = sum_k Re(zeta_k q_k)``.  Each adjoint
row ``w_k`` is scaled so that the pairing of ``w_k exp(-i nu_k xi)`` with
``q_k`` equals 2, which makes the centre flow

    d zeta_k / dt = i nu_k zeta_k + w_k . F(x_t(0), x_t(-tau))

with no further projection constants.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from . import linear_stability as ls
from .model import (HkbParams, LinearParts, ModeKind, MultilinearForms, jacobians,
                    characteristic_matrix, characteristic_matrix_dlam, multilinear_forms)

SMALL_DIVISOR = 1e-6


class ResonanceError(ArithmeticError):
    """A required linear solve or near-identity transformation is singular."""


class NullVectorError(np.linalg.LinAlgError):
    pass


# ---------------------------------------------------------------------------
# double-Hopf points


@dataclass(frozen=True)
class DoubleHopfPoint:
    a_c: float
    tau_c: float
    nu_i: float
    nu_a: float
    v_i: np.ndarray
    v_a: np.ndarray
    w_i: np.ndarray        # scaled so that w Delta'(i nu) v = 2
    w_a: np.ndarray
    label: str = ""

    @property
    def nus(self) -> tuple[float, float]:
        return self.nu_i, self.nu_a

    def params(self, p: HkbParams) -> HkbParams:
        return p.replace(a=self.a_c, tau=self.tau_c)


def null_vectors(lam: complex, p: HkbParams, lin: LinearParts | None = None, tol=1e-8):
    """Right and left null vectors of the full characteristic matrix.

    ``v`` has its first non-negligible component equal to 1 and ``w`` is
    scaled so that ``w Delta'(lam) v = 2``.
    """
    lin = lin or jacobians(p)
    D = characteristic_matrix(lam, p, lin)
    U, s, Vh = np.linalg.svd(D)
    if s[-1] > tol * max(1.0, s[0]) or s[-2] < 1e3 * s[-1] and s[-2] < tol * max(1.0, s[0]):
        raise NullVectorError(f"characteristic matrix not singular (sigma_min={s[-1]:.3e})")
    v = Vh[-1].conj()
    k = int(np.argmax(np.abs(v) > 1e-8 * np.abs(v).max()))
    v = v / v[k]
    w = U[:, -1].conj()
    w = w * 2.0 / (w @ characteristic_matrix_dlam(lam, p, lin) @ v)
    return v, w


def _hh_residual(z, p: HkbParams):
    a, tau, n1, n2 = z
    q = p.replace(a=a, tau=tau)
    out, jac = np.zeros(4), np.zeros((4, 4))
    for row, (mode, nu) in enumerate(((ModeKind.IN_PHASE, n1), (ModeKind.ANTI_PHASE, n2))):
        lam = 1j * nu
        d = complex(ls.characteristic(lam, q, mode))
        dl = complex(ls.characteristic_dlam(lam, q, mode))
        da = complex(ls.characteristic_dparam(lam, q, mode, "a"))
        dt = complex(ls.characteristic_dparam(lam, q, mode, "tau"))
        out[2 * row: 2 * row + 2] = d.real, d.imag
        cols = [da, dt, 1j * dl if row == 0 else 0, 1j * dl if row == 1 else 0]
        jac[2 * row] = [complex(c).real for c in cols]
        jac[2 * row + 1] = [complex(c).imag for c in cols]
    return out, jac


def refine_double_hopf(seed, p: HkbParams, tol=1e-12, maxiter=50):
    """Newton on both modes' crossing conditions in ``(a, tau, nu_i, nu_a)``."""
    z = np.array(seed, dtype=float)
    for _ in range(maxiter):
        f, J = _hh_residual(z, p)
        dz = np.linalg.solve(J, -f)
        z = z + dz
        if np.max(np.abs(dz)) <= tol * max(1.0, np.max(np.abs(z))):
            f, _ = _hh_residual(z, p)
            if np.max(np.abs(f)) <= 1e-8:
                return z
    raise RuntimeError("double-Hopf Newton iteration did not converge")


def _curve_table(a, p, mode, n_max):
    """Crossing delays of both families for every sample of ``a``; shape (2, n_max+1, len(a))."""
    nu_p, nu_m, th1, th2 = ls._crossing_arrays(p.gamma, a, p.omega, mode.sign)
    n = np.arange(n_max + 1)[:, None]
    taus = np.stack([(th1 + ls.TWO_PI * n) / nu_p, (th2 + ls.TWO_PI * n) / nu_m])
    nus = np.stack([np.broadcast_to(nu_p, taus[0].shape), np.broadcast_to(nu_m, taus[1].shape)])
    return taus, nus


def double_hopf_points(p_fixed: HkbParams, a_range=(-10.0, 10.0), tau_range=(0.0, 2.0),
                       step=1e-2) -> list[DoubleHopfPoint]:
    """Intersections of the in-phase and anti-phase crossing curves, sorted by ``tau_c``."""
    lo, hi = map(float, a_range)
    t_lo, t_hi = map(float, tau_range)
    if not all(map(math.isfinite, (lo, hi, t_lo, t_hi))) or hi <= lo:
        raise ValueError("ranges must be finite and increasing")
    a = np.arange(lo, hi + 0.5 * step, step)
    a = a[a != 0.0]
    nu_p, _ = ls._frequency_arrays(p_fixed.gamma, a, p_fixed.omega)
    if not np.any(np.isfinite(nu_p)):
        return []
    n_max = int(math.ceil(t_hi * np.nanmax(nu_p) / ls.TWO_PI)) + 1
    ti, ni = _curve_table(a, p_fixed, ModeKind.IN_PHASE, n_max)
    ta, na = _curve_table(a, p_fixed, ModeKind.ANTI_PHASE, n_max)
    ti, ni = ti.reshape(-1, a.size), ni.reshape(-1, a.size)
    ta, na = ta.reshape(-1, a.size), na.reshape(-1, a.size)
    seeds = []
    with np.errstate(invalid="ignore"):
        for r in range(ti.shape[0]):
            d = ti[r][None, :] - ta                         # (curves_a, len(a))
            s = np.sign(d)
            jump_ok = np.abs(d[:, 1:] - d[:, :-1]) < 0.25
            hit = (s[:, 1:] * s[:, :-1] < 0) & jump_ok
            for c, k in zip(*np.nonzero(hit)):
                f = d[c, k] / (d[c, k] - d[c, k + 1])
                seeds.append((a[k] + f * step, ti[r, k], ni[r, k], na[c, k]))
    found: list[np.ndarray] = []
    for seed in seeds:
        try:
            z = refine_double_hopf(seed, p_fixed)
        except (RuntimeError, np.linalg.LinAlgError):
            continue
        if not (lo <= z[0] <= hi and t_lo < z[1] <= t_hi and z[2] > 0 and z[3] > 0):
            continue
        if any(np.max(np.abs(z - y)) < 1e-8 for y in found):
            continue
        found.append(z)
    found.sort(key=lambda z: z[1])
    points = []
    for idx, (ac, tc, n1, n2) in enumerate(found, 1):
        q = p_fixed.replace(a=float(ac), tau=float(tc))
        v_i, w_i = null_vectors(1j * n1, q)
        v_a, w_a = null_vectors(1j * n2, q)
        points.append(DoubleHopfPoint(float(ac), float(tc), float(n1), float(n2),
                                      v_i, v_a, w_i, w_a, label=f"P{idx}"))
    return points


# ---------------------------------------------------------------------------
# centre-space bases


def pair_exponentials(w, mu, v, lam, A1, tau) -> complex:
    """Bilinear form of ``psi(xi) = w exp(-mu xi)`` with ``phi(theta) = v exp(lam theta)``.

    ``(psi, phi) = psi(0) phi(0) + int_{-tau}^0 psi(xi + tau) A1 phi(xi) d xi``.
    """
    d = lam - mu
    if abs(d) * tau < 1e-12:
        integral = tau
    else:
        integral = (1.0 - np.exp(-d * tau)) / d
    return complex(w @ v + np.exp(-mu * tau) * (w @ A1 @ v) * integral)


@dataclass
class CentreBasis:
    nus: tuple[float, float]
    v: np.ndarray          # (2, 4) complex right eigenvectors
    w: np.ndarray          # (2, 4) complex adjoint rows
    tau: float
    lin: LinearParts
    M: np.ndarray = field(default_factory=lambda: np.eye(4))

    @property
    def B(self) -> np.ndarray:
        B = np.zeros((4, 4))
        for k, nu in enumerate(self.nus):
            B[2 * k, 2 * k + 1] = nu
            B[2 * k + 1, 2 * k] = -nu
        return B

    def phi(self, theta) -> np.ndarray:
        """Real basis ``Phi(theta)`` of shape ``(..., 4, 4)`` (columns are basis functions)."""
        theta = np.asarray(theta, dtype=float)[..., None]
        cols = []
        for k, nu in enumerate(self.nus):
            q = self.v[k] * np.exp(1j * nu * theta)
            cols += [q.real, q.imag]
        return np.stack(cols, axis=-1)

    def psi_raw(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)[..., None]
        rows = []
        for k, nu in enumerate(self.nus):
            p = self.w[k] * np.exp(-1j * nu * xi)
            rows += [p.real, -p.imag]
        return np.stack(rows, axis=-2)

    def psi(self, xi) -> np.ndarray:
        """Adjoint basis ``Psi(xi)`` of shape ``(..., 4, 4)`` (rows), normalised against Phi."""
        return np.linalg.solve(self.M, self.psi_raw(xi)) if np.ndim(xi) == 0 else \
            np.einsum("ij,...jk->...ik", np.linalg.inv(self.M), self.psi_raw(xi))

    def _raw_pairing(self) -> np.ndarray:
        # rows: Re/-Im of w e^{-i nu xi}; columns: Re/Im of v e^{i nu theta}
        out = np.zeros((4, 4))
        A1 = self.lin.A1
        for j, nj in enumerate(self.nus):
            for k, nk in enumerate(self.nus):
                pp = pair_exponentials(self.w[j], 1j * nj, self.v[k], 1j * nk, A1, self.tau)
                pm = pair_exponentials(self.w[j], 1j * nj, self.v[k].conj(), -1j * nk, A1, self.tau)
                # psi1 - i psi2 = P, phi1 + i phi2 = Q:  (P,Q)=pp, (P,Qbar)=pm
                # psi1 = Re-part of P, phi1 = (Q + Qbar)/2, phi2 = (Q - Qbar)/(2i)
                PQ = 0.5 * (pp + pm)          # (P, phi1)
                PQi = (pp - pm) / 2j          # (P, phi2)
                out[2 * j, 2 * k] = PQ.real
                out[2 * j + 1, 2 * k] = -PQ.imag
                out[2 * j, 2 * k + 1] = PQi.real
                out[2 * j + 1, 2 * k + 1] = -PQi.imag
        return out

    def pairing_matrix(self) -> np.ndarray:
        """``(Psi, Phi)`` evaluated in closed form."""
        return np.linalg.solve(self.M, self._raw_pairing())

    def pairing_with_derivative(self) -> np.ndarray:
        """``(Psi, Phi')``; equals ``B`` when the bases are consistent."""
        out = np.zeros((4, 4))
        A1 = self.lin.A1
        for j, nj in enumerate(self.nus):
            for k, nk in enumerate(self.nus):
                lam = 1j * nk
                pp = lam * pair_exponentials(self.w[j], 1j * nj, self.v[k], lam, A1, self.tau)
                pm = np.conj(lam) * pair_exponentials(self.w[j], 1j * nj, self.v[k].conj(),
                                                      np.conj(lam), A1, self.tau)
                PQ, PQi = 0.5 * (pp + pm), (pp - pm) / 2j
                out[2 * j, 2 * k], out[2 * j + 1, 2 * k] = PQ.real, -PQ.imag
                out[2 * j, 2 * k + 1], out[2 * j + 1, 2 * k + 1] = PQi.real, -PQi.imag
        return np.linalg.solve(self.M, out)

    def boundary_residual(self) -> float:
        """Max entry of ``A0 Phi(0) + A1 Phi(-tau) - Phi(0) B``."""
        r = self.lin.A0 @ self.phi(0.0) + self.lin.A1 @ self.phi(-self.tau) - self.phi(0.0) @ self.B
        return float(np.max(np.abs(r)))

    def adjoint_boundary_residual(self) -> float:
        """Max entry of ``Psi(0) A0 + Psi(tau) A1 - B Psi(0)``."""
        r = self.psi(0.0) @ self.lin.A0 + self.psi(self.tau) @ self.lin.A1 - self.B @ self.psi(0.0)
        return float(np.max(np.abs(r)))


def centre_basis(hh: DoubleHopfPoint, p: HkbParams) -> CentreBasis:
    q = hh.params(p)
    lin = jacobians(q)
    v = np.stack([hh.v_i, hh.v_a])
    w = np.stack([hh.w_i, hh.w_a])
    for k, nu in enumerate(hh.nus):
        D = characteristic_matrix(1j * nu, q, lin)
        if np.max(np.abs(D @ v[k])) > 1e-8 or np.max(np.abs(w[k] @ D)) > 1e-8:
            raise NullVectorError("stored null vectors do not annihilate Delta(i nu)")
    basis = CentreBasis(hh.nus, v, w, q.tau, lin)
    basis.M = basis._raw_pairing()
    return basis


# ---------------------------------------------------------------------------
# polynomial helpers in (zeta1, conj zeta1, zeta2, conj zeta2)

NVAR = 4


def _unit(i):
    e = [0] * NVAR
    e[i] = 1
    return tuple(e)


def _add(m1, m2):
    return tuple(x + y for x, y in zip(m1, m2))


def _conj_mono(m):
    return (m[1], m[0], m[3], m[2])


def _monomials(degree):
    out = []
    for combo in itertools.combinations_with_replacement(range(NVAR), degree):
        e = [0] * NVAR
        for i in combo:
            e[i] += 1
        out.append(tuple(e))
    return out


def _mono_eigen(m, nus):
    n1, n2 = nus
    return 1j * (n1 * (m[0] - m[1]) + n2 * (m[2] - m[3]))


def _graded_vectors(X, forms: MultilinearForms):
    """Coefficient tables of ``Q(X,X)`` and ``C(X,X,X)`` for ``X = sum_i z_i X_i``."""
    quad, cub = {}, {}
    for i, j in itertools.product(range(NVAR), repeat=2):
        m = _add(_unit(i), _unit(j))
        quad[m] = quad.get(m, 0) + forms.quadratic(X[i], X[j])
    for i, j, k in itertools.product(range(NVAR), repeat=3):
        m = _add(_add(_unit(i), _unit(j)), _unit(k))
        cub[m] = cub.get(m, 0) + forms.cubic(X[i], X[j], X[k])
    return quad, cub


def _linear_generators(basis: CentreBasis):
    """8-vectors ``X_i`` with ``x_t = sum_i z_i X_i`` (present and delayed samples)."""
    X = []
    for k, nu in enumerate(basis.nus):
        V = np.concatenate([basis.v[k], basis.v[k] * np.exp(-1j * nu * basis.tau)])
        X += [0.5 * V, 0.5 * V.conj()]
    return X


# ---------------------------------------------------------------------------
# quadratic centre-manifold coefficients


@dataclass
class CmTerm:
    lam: complex
    c: np.ndarray           # (4,) coefficient of exp(lam theta)
    alpha: np.ndarray       # (4,) coefficients of the eigenfunction terms


@dataclass
class CmExpansion:
    """Quadratic part of ``h``: ``h(theta; z) = sum_m h_m(theta) z^m``."""

    basis: CentreBasis
    terms: dict = field(default_factory=dict)

    @property
    def eigen(self):
        out = []
        for k, nu in enumerate(self.basis.nus):
            out += [(1j * nu, self.basis.v[k]), (-1j * nu, self.basis.v[k].conj())]
        return out

    @property
    def is_zero(self) -> bool:
        return all(np.allclose(t.c, 0) and np.allclose(t.alpha, 0) for t in self.terms.values())

    def coefficient(self, m, theta) -> np.ndarray:
        t = self.terms[m]
        theta = np.asarray(theta, dtype=float)[..., None]
        out = np.exp(t.lam * theta) * t.c
        for a, (lk, vk) in zip(t.alpha, self.eigen):
            out = out + a * vk * np.exp(lk * theta)
        return out

    def evaluate(self, theta, u) -> np.ndarray:
        """Real ``h(theta; u)`` for real centre coordinates ``u``."""
        z = complex_coordinates(u)
        out = 0
        for m in self.terms:
            zm = np.prod([z[i] ** e for i, e in enumerate(m)])
            out = out + zm * self.coefficient(m, theta)
        return np.real(out) if not np.isscalar(out) else np.zeros(np.shape(theta) + (4,))

    def delayed_pair(self, m) -> np.ndarray:
        return np.concatenate([self.coefficient(m, 0.0), self.coefficient(m, -self.basis.tau)])


def complex_coordinates(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    z1, z2 = u[0] - 1j * u[1], u[2] - 1j * u[3]
    return np.array([z1, np.conj(z1), z2, np.conj(z2)])


def _adjoint_rows(basis: CentreBasis):
    # unit-normalised projections for the four eigenvalues (i nu1, -i nu1, i nu2, -i nu2)
    rows = []
    for k in range(2):
        rows += [0.5 * basis.w[k], 0.5 * basis.w[k].conj()]
    return rows


def solve_h_quadratic(hh: DoubleHopfPoint, p: HkbParams, basis: CentreBasis,
                      forms: MultilinearForms | None = None, tol=1e-10) -> CmExpansion:
    """Quadratic centre-manifold coefficients from the homological equations.

    For each quadratic monomial ``z^m`` with eigenvalue ``lam_m`` the
    coefficient is ``exp(lam_m theta) c_m + sum_k q_k(theta) p_k F_m / (lam_k - lam_m)``
    where ``Delta(lam_m) c_m = F_m``.
    """
    q = hh.params(p)
    forms = forms or multilinear_forms(q)
    exp = CmExpansion(basis)
    X = _linear_generators(basis)
    quad, _ = _graded_vectors(X, forms)
    rows = _adjoint_rows(basis)
    eig = exp.eigen
    for m in _monomials(2):
        Fm = quad.get(m, np.zeros(4, dtype=complex))
        lam_m = _mono_eigen(m, basis.nus)
        if not np.any(Fm):
            exp.terms[m] = CmTerm(lam_m, np.zeros(4, complex), np.zeros(4, complex))
            continue
        D = characteristic_matrix(lam_m, q, basis.lin)
        s = np.linalg.svd(D, compute_uv=False)
        if s[-1] <= tol * max(1.0, s[0]):
            raise ResonanceError(f"Delta(lambda) singular for monomial {m}")
        c = np.linalg.solve(D, Fm)
        alpha = np.zeros(4, dtype=complex)
        for k, ((lk, _), pk) in enumerate(zip(eig, rows)):
            den = lk - lam_m
            if abs(den) < SMALL_DIVISOR:
                raise ResonanceError(f"resonant denominator for monomial {m}")
            alpha[k] = (pk @ Fm) / den
        exp.terms[m] = CmTerm(lam_m, c, alpha)
    return exp


def pair_psi_with_h(basis: CentreBasis, cm: CmExpansion, u) -> np.ndarray:
    """``(Psi, h(.; u))`` in closed form; vanishes when ``h`` lies in the complement."""
    z = complex_coordinates(u)
    A1 = basis.lin.A1
    Minv = np.linalg.inv(basis.M)
    # complex adjoint functions P_j = w_j exp(-i nu_j xi); Psi rows are Re and -Im
    out = np.zeros(4)
    for j, nj in enumerate(basis.nus):
        total = 0j
        for m, t in cm.terms.items():
            zm = np.prod([z[i] ** e for i, e in enumerate(m)])
            val = pair_exponentials(basis.w[j], 1j * nj, t.c, t.lam, A1, basis.tau)
            for a, (lk, vk) in zip(t.alpha, cm.eigen):
                val += a * pair_exponentials(basis.w[j], 1j * nj, vk, lk, A1, basis.tau)
            total += zm * val
        # h is real, so (Re P, h) = Re (P, h)
        out[2 * j], out[2 * j + 1] = total.real, -total.imag
    return Minv @ out


# ---------------------------------------------------------------------------
# normal form


@dataclass
class NormalForm:
    a: np.ndarray            # (2, 2)
    c: np.ndarray            # (2, 2)
    rho: np.ndarray          # (2, 2): rows modes, columns (a, tau)
    nu1: float
    nu2: float
    base: tuple[float, float]
    label: str = ""
    # RMS of x = (x1, x2) per unit amplitude r_k along each critical eigenvector
    amplitude_scale: tuple[float, float] = (1.0, 1.0)

    def as_dict(self) -> dict:
        return {
            "point": self.label,
            "a_c": float(self.base[0]),
            "tau_c": float(self.base[1]),
            "nu": [float(self.nu1), float(self.nu2)],
            "a": self.a.tolist(),
            "c": self.c.tolist(),
            "rho": self.rho.tolist(),
        }


def _poly_mul(p1, p2):
    out = {}
    for m1, c1 in p1.items():
        for m2, c2 in p2.items():
            m = _add(m1, m2)
            out[m] = out.get(m, 0) + c1 * c2
    return out


def _poly_diff(pol, i):
    out = {}
    for m, c in pol.items():
        if m[i]:
            mm = list(m)
            mm[i] -= 1
            out[tuple(mm)] = out.get(tuple(mm), 0) + m[i] * c
    return out


def _poly_conj(pol):
    return {_conj_mono(m): np.conj(c) for m, c in pol.items()}


def centre_flow_polynomials(basis: CentreBasis, cm: CmExpansion, forms: MultilinearForms):
    """Quadratic and cubic parts of ``d zeta_j/dt`` as monomial dictionaries."""
    X = _linear_generators(basis)
    quad, cub = _graded_vectors(X, forms)
    cross = {}
    for i in range(NVAR):
        for m in cm.terms:
            H = cm.delayed_pair(m)
            if not np.any(H):
                continue
            mm = _add(_unit(i), m)
            cross[mm] = cross.get(mm, 0) + 2.0 * forms.quadratic(X[i], H)
    G2, G3 = [], []
    for j in range(2):
        w = basis.w[j]
        G2.append({m: complex(w @ vec) for m, vec in quad.items() if np.any(vec)})
        g3 = {m: complex(w @ vec) for m, vec in cub.items()}
        for m, vec in cross.items():
            g3[m] = g3.get(m, 0) + complex(w @ vec)
        G3.append(g3)
    return G2, G3


def _near_identity_cubic(G2, G3, nus):
    """Cubic terms after removing the quadratic part by a near-identity change."""
    lam_var = [1j * nus[0], -1j * nus[0], 1j * nus[1], -1j * nus[1]]
    # full vector field over the four variables (conjugate equations included)
    G2f = [G2[0], _poly_conj(G2[0]), G2[1], _poly_conj(G2[1])]
    G3f = [G3[0], _poly_conj(G3[0]), G3[1], _poly_conj(G3[1])]
    H = []
    for v in range(NVAR):
        h = {}
        for m, g in G2f[v].items():
            den = _mono_eigen(m, nus) - lam_var[v]
            if abs(den) < SMALL_DIVISOR:
                raise ResonanceError(f"quadratic resonance for monomial {m}")
            h[m] = g / den
        H.append(h)
    out = []
    for v in (0, 2):
        res = dict(G3f[v])
        for i in range(NVAR):
            for m, c in _poly_mul(_poly_diff(G2f[v], i), H[i]).items():
                res[m] = res.get(m, 0) + c
            for m, c in _poly_mul(_poly_diff(H[v], i), G2f[i]).items():
                res[m] = res.get(m, 0) - c
        out.append(res)
    return out


def unfolding_rhos(hh: DoubleHopfPoint, p: HkbParams) -> np.ndarray:
    """``rho[j, k] = Re d lam_j / d mu_k`` with ``mu = (a, tau)``."""
    q = hh.params(p)
    rho = np.zeros((2, 2))
    for j, (mode, nu) in enumerate(((ModeKind.IN_PHASE, hh.nu_i), (ModeKind.ANTI_PHASE, hh.nu_a))):
        for k, name in enumerate(("a", "tau")):
            rho[j, k] = ls.eigenvalue_sensitivity(1j * nu, q, mode, name).real
    return rho


def normal_form_coefficients(hh: DoubleHopfPoint, p: HkbParams, basis: CentreBasis | None = None,
                             cm: CmExpansion | None = None,
                             forms: MultilinearForms | None = None) -> NormalForm:
    """Polar normal-form coefficients ``a_jk``, ``c_jk`` and ``rho_jk`` at a double-Hopf point."""
    q = hh.params(p)
    forms = forms or multilinear_forms(q)
    basis = basis or centre_basis(hh, p)
    for k1 in range(0, 5):
        for k2 in range(0, 5 - k1):
            if (k1, k2) != (0, 0) and abs(k1 * hh.nu_i - k2 * hh.nu_a) < SMALL_DIVISOR:
                raise ResonanceError(f"strong {k1}:{k2} resonance")
    cm = cm if cm is not None else solve_h_quadratic(hh, p, basis, forms)
    G2, G3 = centre_flow_polynomials(basis, cm, forms)
    if any(G2):
        N3 = _near_identity_cubic(G2, G3, basis.nus)
    else:
        N3 = G3
    g = np.zeros((2, 2), dtype=complex)
    g[0, 0] = N3[0].get((2, 1, 0, 0), 0)
    g[0, 1] = N3[0].get((1, 0, 1, 1), 0)
    g[1, 0] = N3[1].get((1, 1, 1, 0), 0)
    g[1, 1] = N3[1].get((0, 0, 2, 1), 0)
    scale = tuple(float(np.sqrt(0.5 * np.sum(np.abs(basis.v[k][:2]) ** 2))) for k in range(2))
    return NormalForm(g.real.copy(), g.imag.copy(), unfolding_rhos(hh, p), hh.nu_i, hh.nu_a,
                      (hh.a_c, hh.tau_c), hh.label, scale)


def centre_flow_rhs(basis: CentreBasis, forms: MultilinearForms, b=(0.0, 0.0)):
    """Cubic-truncated centre flow in real coordinates with linear unfolding terms ``b``.

    Returns ``f(t, u)`` suitable for ``scipy.integrate.solve_ivp``.
    """
    X = _linear_generators(basis)
    b = np.asarray(b, dtype=float)
    nus = basis.nus

    def rhs(t, u):
        z = complex_coordinates(u)
        x8 = sum(zi * Xi for zi, Xi in zip(z, X))
        F = forms.cubic(x8, x8, x8) + forms.quadratic(x8, x8)
        dz = [(b[k] + 1j * nus[k]) * z[2 * k] + basis.w[k] @ F for k in range(2)]
        return np.array([dz[0].real, -dz[0].imag, dz[1].real, -dz[1].imag])

    return rhs


# ---------------------------------------------------------------------------
# resonance screening


def resonance_check(nu1: float, nu2: float, k_max: int, tol: float = 1e-9):
    """Smallest coprime ``(k1, k2)`` with ``|nu1/nu2 - k1/k2| <= tol``, or ``None``.

    Returns ``(k1, k2, 'weak' | 'strong')``; the resonance is weak when
    ``k1 + k2 > 4``.
    """
    if nu1 <= 0 or nu2 <= 0:
        raise ValueError("frequencies must be positive")
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    r = nu1 / nu2
    for k2 in range(1, k_max + 1):
        k1 = round(r * k2)
        if 1 <= k1 <= k_max and math.gcd(k1, k2) == 1 and abs(r - k1 / k2) <= tol:
            return k1, k2, "weak" if k1 + k2 > 4 else "strong"
    return None


# ---------------------------------------------------------------------------
# reference tables and export

REFERENCE_POINTS = {
    "HH1": {"a_c": -0.68609, "tau_c": 0.19214, "nu_i": 7.83301, "nu_a": 8.51761},
    "HH2": {"a_c": -0.83431, "tau_c": 0.57621, "nu_i": 8.58402, "nu_a": 7.77241},
    "HH3": {"a_c": -1.33683, "tau_c": 0.95920, "nu_i": 7.61733, "nu_a": 8.75879},
    "HH4": {"a_c": -3.37162, "tau_c": 0.95457, "nu_i": 7.23890, "nu_a": 9.21666},
}

REFERENCE_COEFFICIENTS = {
    "HH1": {"a": [[-1.45930, -2.98167], [-3.17291, -1.62071]],
            "rho": [[0.41422, -2.53782], [0.44713, 2.99651]]},
    "HH2": {"a": [[-1.57279, -3.07152], [-2.88168, -1.40684]],
            "rho": [[0.25537, 3.09705], [0.24324, -2.58847]]},
    "HH3": {"a": [[-1.05553, -2.17940], [-2.28045, -1.17705]],
            "rho": [[0.04553, -2.04607], [0.03689, 2.44805]]},
    "HH4": {"a": [[-0.61111, -1.29100], [-1.31866, -0.69641]],
            "rho": [[-0.00656, -1.18880], [-0.01192, 1.42407]]},
}


def label_points(points: list[DoubleHopfPoint], p: HkbParams) -> list[DoubleHopfPoint]:
    """Attach reference labels by nearest ``(a_c, tau_c)`` for the default parameter set."""
    default = HkbParams()
    if not (math.isclose(p.gamma, default.gamma) and math.isclose(p.omega, default.omega)):
        return points
    out = []
    for hh in points:
        best = min(REFERENCE_POINTS, key=lambda k: math.hypot(REFERENCE_POINTS[k]["a_c"] - hh.a_c,
                                                              REFERENCE_POINTS[k]["tau_c"] - hh.tau_c))
        ref = REFERENCE_POINTS[best]
        if math.hypot(ref["a_c"] - hh.a_c, ref["tau_c"] - hh.tau_c) < 1e-2:
            hh = DoubleHopfPoint(hh.a_c, hh.tau_c, hh.nu_i, hh.nu_a, hh.v_i, hh.v_a,
                                 hh.w_i, hh.w_a, label=best)
        out.append(hh)
    return out
