"""Unfolding of the double-Hopf normal form in the amplitude equations

    r1' = r1 (b1 + a11 r1^2 + a12 r2^2)
    r2' = r2 (b2 + a21 r1^2 + a22 r2^2)

with ``b = rho @ (a - a_c, tau - tau_c)``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .centre_manifold import NormalForm

LINE_TOL = 1e-12


class StateKind(enum.Enum):
    ORIGIN = "origin"
    IN_PHASE_LC = "in-phase-lc"
    ANTI_PHASE_LC = "anti-phase-lc"
    QUASI_PERIODIC = "quasi-periodic"


class Stability(enum.Enum):
    SINK = "sink"
    SADDLE = "saddle"
    SOURCE = "source"
    NONHYPERBOLIC = "nonhyperbolic"


class RegionId(enum.Enum):
    I = "I"
    II = "II"
    III = "III"
    IV = "IV"
    V = "V"
    VI = "VI"


class DegenerateNormalForm(ValueError):
    pass


class OnBoundaryError(ValueError):
    pass


# steady states present in each region, and which limit cycle is stable
REGION_CONTENTS = {
    RegionId.I: {StateKind.ORIGIN},
    RegionId.II: {StateKind.ORIGIN, StateKind.IN_PHASE_LC},
    RegionId.III: {StateKind.ORIGIN, StateKind.IN_PHASE_LC, StateKind.ANTI_PHASE_LC},
    RegionId.IV: {StateKind.ORIGIN, StateKind.IN_PHASE_LC, StateKind.ANTI_PHASE_LC,
                  StateKind.QUASI_PERIODIC},
    RegionId.V: {StateKind.ORIGIN, StateKind.IN_PHASE_LC, StateKind.ANTI_PHASE_LC},
    RegionId.VI: {StateKind.ORIGIN, StateKind.ANTI_PHASE_LC},
}

REGION_ATTRACTORS = {
    RegionId.I: {StateKind.ORIGIN},
    RegionId.II: {StateKind.IN_PHASE_LC},
    RegionId.III: {StateKind.IN_PHASE_LC},
    RegionId.IV: {StateKind.IN_PHASE_LC, StateKind.ANTI_PHASE_LC},
    RegionId.V: {StateKind.ANTI_PHASE_LC},
    RegionId.VI: {StateKind.ANTI_PHASE_LC},
}


@dataclass(frozen=True)
class UnfoldingPoint:
    b1: float
    b2: float

    @property
    def b(self) -> np.ndarray:
        return np.array([self.b1, self.b2])


@dataclass(frozen=True)
class SteadyState:
    kind: StateKind
    r1: float
    r2: float
    stability: Stability
    eigenvalues: tuple[float, float]


@dataclass(frozen=True)
class SeparatingLine:
    index: int
    normal: np.ndarray        # line is {b : normal . b = 0}
    direction: np.ndarray     # unit direction in (b1, b2)
    direction_a_tau: np.ndarray  # same line mapped to (a, tau) offsets

    @property
    def angle_deg(self) -> float:
        return math.degrees(math.atan2(self.direction[1], self.direction[0])) % 180.0


def unfolding_params(nf: NormalForm, a: float, tau: float) -> UnfoldingPoint:
    d = np.array([a - nf.base[0], tau - nf.base[1]])
    b = nf.rho @ d
    return UnfoldingPoint(float(b[0]), float(b[1]))


def offsets_from_unfolding(nf: NormalForm, up: UnfoldingPoint) -> tuple[float, float]:
    """Inverse map ``(b1, b2) -> (a, tau)``."""
    d = np.linalg.solve(nf.rho, up.b)
    return float(nf.base[0] + d[0]), float(nf.base[1] + d[1])


def amplitude_jacobian(nf: NormalForm, up: UnfoldingPoint, r1: float, r2: float) -> np.ndarray:
    """Jacobian of the amplitude equations at ``(r1, r2)``."""
    a = nf.a
    return np.array([
        [up.b1 + 3 * a[0, 0] * r1 ** 2 + a[0, 1] * r2 ** 2, 2 * a[0, 1] * r1 * r2],
        [2 * a[1, 0] * r1 * r2, up.b2 + a[1, 0] * r1 ** 2 + 3 * a[1, 1] * r2 ** 2],
    ])


def amplitude_rhs(nf: NormalForm, up: UnfoldingPoint, r1, r2):
    a = nf.a
    return (r1 * (up.b1 + a[0, 0] * r1 ** 2 + a[0, 1] * r2 ** 2),
            r2 * (up.b2 + a[1, 0] * r1 ** 2 + a[1, 1] * r2 ** 2))


def _stability(J) -> tuple[Stability, tuple[float, float]]:
    ev = np.linalg.eigvals(J)
    re = np.sort(ev.real)
    if np.any(np.abs(re) <= 1e-14):
        kind = Stability.NONHYPERBOLIC
    elif re[1] < 0:
        kind = Stability.SINK
    elif re[0] > 0:
        kind = Stability.SOURCE
    else:
        kind = Stability.SADDLE
    return kind, (float(re[0]), float(re[1]))


def _mixed_radicands(nf: NormalForm, up: UnfoldingPoint):
    a = nf.a
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    if abs(det) <= 1e-12:
        raise DegenerateNormalForm("a11 a22 - a12 a21 vanishes")
    s1 = (a[0, 1] * up.b2 - a[1, 1] * up.b1) / det
    s2 = (a[1, 0] * up.b1 - a[0, 0] * up.b2) / det
    return s1, s2


def steady_states(nf: NormalForm, up: UnfoldingPoint) -> list[SteadyState]:
    """All steady states of the amplitude equations with their stability."""
    a = nf.a
    found = [(StateKind.ORIGIN, 0.0, 0.0)]
    if -up.b1 / a[0, 0] > 0:
        found.append((StateKind.IN_PHASE_LC, math.sqrt(-up.b1 / a[0, 0]), 0.0))
    if -up.b2 / a[1, 1] > 0:
        found.append((StateKind.ANTI_PHASE_LC, 0.0, math.sqrt(-up.b2 / a[1, 1])))
    s1, s2 = _mixed_radicands(nf, up)
    if s1 > 0 and s2 > 0:
        found.append((StateKind.QUASI_PERIODIC, math.sqrt(s1), math.sqrt(s2)))
    out = []
    for kind, r1, r2 in found:
        stab, ev = _stability(amplitude_jacobian(nf, up, r1, r2))
        out.append(SteadyState(kind, r1, r2, stab, ev))
    return out


def separating_lines(nf: NormalForm) -> list[SeparatingLine]:
    """Lines 1-4 through the origin of the ``(b1, b2)`` plane."""
    if abs(np.linalg.det(nf.rho)) <= 1e-14:
        raise np.linalg.LinAlgError("rho matrix is singular")
    a = nf.a
    normals = [np.array([1.0, 0.0]), np.array([0.0, 1.0]),
               np.array([-a[1, 1], a[0, 1]]), np.array([a[1, 0], -a[0, 0]])]
    out = []
    for k, n in enumerate(normals, 1):
        d = np.array([-n[1], n[0]])
        d = d / np.linalg.norm(d)
        if d[0] < 0 or (d[0] == 0 and d[1] < 0):
            d = -d
        dat = np.linalg.solve(nf.rho, d)
        out.append(SeparatingLine(k, n, d, dat / np.linalg.norm(dat)))
    return out


def line_values(nf: NormalForm, up: UnfoldingPoint) -> np.ndarray:
    return np.array([ln.normal @ up.b for ln in separating_lines(nf)])


def _check_supported(nf: NormalForm):
    a = nf.a
    det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
    if not (a[0, 0] < 0 and a[1, 1] < 0 and det < 0):
        raise NotImplementedError("region labelling implemented for a11, a22 < 0 and "
                                  "a11 a22 - a12 a21 < 0")


def classify_region(nf: NormalForm, up: UnfoldingPoint) -> RegionId:
    """Region I-VI of the unfolding containing ``up``."""
    _check_supported(nf)
    vals = line_values(nf, up)
    if np.any(np.abs(vals) <= LINE_TOL * max(1.0, np.linalg.norm(up.b))):
        raise OnBoundaryError("point lies on a separating line")
    if up.b1 < 0 and up.b2 < 0:
        return RegionId.I
    if up.b1 > 0 and up.b2 < 0:
        return RegionId.II
    if up.b1 < 0 and up.b2 > 0:
        return RegionId.VI
    s1, s2 = _mixed_radicands(nf, up)
    if s1 > 0 and s2 > 0:
        return RegionId.IV
    return RegionId.III if s1 <= 0 else RegionId.V


def region_sectors(nf: NormalForm) -> dict:
    """Angular sectors ``(start_deg, end_deg)`` of each region in the ``(b1, b2)`` plane."""
    _check_supported(nf)
    lines = separating_lines(nf)
    t3, t4 = lines[2].angle_deg, lines[3].angle_deg
    lo, hi = sorted((t3, t4))
    return {RegionId.I: (180.0, 270.0), RegionId.II: (270.0, 360.0),
            RegionId.III: (0.0, lo), RegionId.IV: (lo, hi),
            RegionId.V: (hi, 90.0), RegionId.VI: (90.0, 180.0)}


def region_polygons(nf: NormalForm, radius: float = 1.0, in_a_tau: bool = False) -> dict:
    """Region wedges as closed polygons (in ``(b1, b2)`` or mapped to ``(a, tau)``)."""
    out = {}
    for rid, (t0, t1) in region_sectors(nf).items():
        th = np.radians(np.linspace(t0, t1, 33))
        pts = np.vstack([[0.0, 0.0], np.column_stack([np.cos(th), np.sin(th)]) * radius])
        if in_a_tau:
            d = np.linalg.solve(nf.rho, pts.T).T
            pts = d + np.asarray(nf.base)
        out[rid.value] = pts.tolist()
    return out


def physical_rms(nf: NormalForm, r1: float, r2: float) -> float:
    """RMS of ``(x1, x2)`` at first order from amplitudes ``r1``, ``r2``."""
    s1, s2 = nf.amplitude_scale
    return float(math.sqrt((s1 * r1) ** 2 + (s2 * r2) ** 2))


@dataclass(frozen=True)
class DiagramRow:
    param: float
    kind: StateKind
    r1: float
    r2: float
    amplitude: float
    stability: Stability


def one_param_diagram(nf: NormalForm, axis: str, rng, fixed_other: float,
                      n: int = 201) -> list[DiagramRow]:
    """Steady-state branches of the amplitude equations along ``a`` or ``tau``."""
    if axis not in ("a", "tau"):
        raise ValueError("axis must be 'a' or 'tau'")
    rows = []
    for val in np.linspace(rng[0], rng[1], n):
        a, tau = (val, fixed_other) if axis == "a" else (fixed_other, val)
        up = unfolding_params(nf, a, tau)
        for st in steady_states(nf, up):
            rows.append(DiagramRow(float(val), st.kind, st.r1, st.r2,
                                   physical_rms(nf, st.r1, st.r2), st.stability))
    return rows


DIAGRAM_HEADER = "param,state,r1,r2,amplitude,stability"


def diagram_csv(rows: list[DiagramRow]) -> str:
    lines = [DIAGRAM_HEADER]
    for r in rows:
        lines.append(f"{r.param!r},{r.kind.value},{r.r1!r},{r.r2!r},{r.amplitude!r},"
                     f"{r.stability.value}")
    return "\n".join(lines) + "\n"
