"""Stability of the normal modes of the linear delayed HKB equation.

Each normal mode obeys the scalar characteristic equation

    Delta(lam) = lam**2 - (gamma + a)*lam + omega**2 + s*a*lam*exp(-lam*tau) = 0

with ``s = +1`` for the in-phase mode and ``s = -1`` for the anti-phase mode.
Purely imaginary roots exist only at the two crossing frequencies
``nu_plus > nu_minus``; roots cross left-to-right at ``nu_plus`` and
right-to-left at ``nu_minus`` as ``tau`` increases.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .model import HkbParams, ModeKind

TWO_PI = 2.0 * math.pi
BOUNDARY_TOL = 1e-10


class StabilityBoundaryError(ValueError):
    """Raised when a parameter point lies on a stability boundary."""


class RootSearchError(RuntimeError):
    pass


class RegionClass(enum.IntEnum):
    NEITHER = 0
    IN_ONLY = 1
    ANTI_ONLY = 2
    BOTH = 3


class Plane(enum.Enum):
    A_TAU = "a-tau"
    GAMMA_TAU = "gamma-tau"
    GAMMA_A = "gamma-a"

    @property
    def axes(self) -> tuple[str, str]:
        x, y = self.value.split("-")
        return x, y


@dataclass(frozen=True)
class CrossingFrequencies:
    nu_plus: float
    nu_minus: float


@dataclass(frozen=True)
class CrossingDelaySet:
    mode: ModeKind
    theta1: float
    theta2: float
    nu_plus: float
    nu_minus: float
    taus_destabilizing: tuple[float, ...]
    taus_stabilizing: tuple[float, ...]
    n_max: int


@dataclass
class BoundaryCurve:
    mode: ModeKind
    points: np.ndarray          # (k, 2) polyline in chart coordinates
    direction: int              # +1 destabilising, -1 stabilising (w.r.t. the swept axis)
    label: str = ""

    def as_dict(self) -> dict:
        return {
            "mode": self.mode.value,
            "direction": int(self.direction),
            "label": self.label,
            "points": [[float(x), float(y)] for x, y in self.points],
        }


@dataclass
class StabilityChart:
    plane: Plane
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    resolution: tuple[int, int]
    fixed: HkbParams
    grid: np.ndarray                      # (ny, nx) of RegionClass codes
    boundary_curves: list[BoundaryCurve] = field(default_factory=list)

    @property
    def x_centers(self) -> np.ndarray:
        return _centers(self.x_range, self.resolution[0])

    @property
    def y_centers(self) -> np.ndarray:
        return _centers(self.y_range, self.resolution[1])

    def cell_params(self, row: int, col: int) -> HkbParams:
        xname, yname = self.plane.axes
        return self.fixed.replace(**{xname: float(self.x_centers[col]),
                                     yname: float(self.y_centers[row])})


# ---------------------------------------------------------------------------
# characteristic function


def characteristic(lam, p: HkbParams, mode: ModeKind):
    lam = np.asarray(lam, dtype=complex)
    return (lam * lam - (p.gamma + p.a) * lam + p.omega ** 2
            + mode.sign * p.a * lam * np.exp(-lam * p.tau))


def characteristic_dlam(lam, p: HkbParams, mode: ModeKind):
    lam = np.asarray(lam, dtype=complex)
    e = np.exp(-lam * p.tau)
    return 2 * lam - (p.gamma + p.a) + mode.sign * p.a * e * (1 - lam * p.tau)


def characteristic_dparam(lam, p: HkbParams, mode: ModeKind, name: str):
    """Partial derivative of the characteristic function w.r.t. a parameter."""
    lam = np.asarray(lam, dtype=complex)
    e = np.exp(-lam * p.tau)
    s = mode.sign
    if name == "a":
        return -lam + s * lam * e
    if name == "tau":
        return -s * p.a * lam * lam * e
    if name == "gamma":
        return -lam + 0 * e
    if name == "omega":
        return 2 * p.omega + 0 * lam
    raise KeyError(name)


def eigenvalue_sensitivity(lam, p: HkbParams, mode: ModeKind, name: str) -> complex:
    """``d lam / d param`` along a simple root ``lam`` by implicit differentiation."""
    return complex(-characteristic_dparam(lam, p, mode, name) / characteristic_dlam(lam, p, mode))


# ---------------------------------------------------------------------------
# crossing frequencies and delays (vectorised core)


def _frequency_arrays(gamma, a, omega):
    gamma, a, omega = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (gamma, a, omega)))
    P = a * a + 2 * omega * omega - (gamma + a) ** 2
    # P^2 - 4 omega^4 in factored form, exact in sign when gamma (gamma + 2a) = 0
    D = -gamma * (gamma + 2 * a) * (P + 2 * omega * omega)
    ok = (P > 0) & (D > 0)
    sq = np.sqrt(np.where(ok, D, 0.0))
    nu_p = np.where(ok, np.sqrt(np.where(ok, 0.5 * (P + sq), 1.0)), np.nan)
    nu_m = np.where(ok, np.sqrt(np.where(ok, 0.5 * (P - sq), 1.0)), np.nan)
    return nu_p, nu_m


def _theta(gamma, a, omega, nu, sign):
    with np.errstate(divide="ignore", invalid="ignore"):
        c = (gamma + a) / (sign * a)
        s = (nu * nu - omega * omega) / (sign * a * nu)
    return np.mod(np.arctan2(s, c), TWO_PI)


def _crossing_arrays(gamma, a, omega, sign):
    nu_p, nu_m = _frequency_arrays(gamma, a, omega)
    th1 = _theta(gamma, a, omega, nu_p, sign)
    th2 = _theta(gamma, a, omega, nu_m, sign)
    return nu_p, nu_m, th1, th2


def _count_below(tau, theta, nu):
    """Number of ``n >= 0`` with ``(theta + 2 n pi)/nu < tau`` (0 where nu is nan)."""
    with np.errstate(invalid="ignore"):
        r = (tau * nu - theta) / TWO_PI
        n = np.where(np.isfinite(r) & (r > 0), np.ceil(r), 0.0)
    return n.astype(int)


def _distance_to_crossing(tau, theta, nu):
    with np.errstate(invalid="ignore"):
        r = (tau * nu - theta) / TWO_PI
        k = np.maximum(np.round(r), 0.0)
        d = np.abs(tau - (theta + TWO_PI * k) / nu)
    return np.where(np.isfinite(d), d, np.inf)


def _unstable_count_arrays(gamma, a, omega, tau, sign):
    gamma, a, omega, tau = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (gamma, a, omega, tau)))
    trace0 = gamma if sign > 0 else gamma + 2 * a
    count = np.where(trace0 > 0, 2, 0)
    nu_p, nu_m, th1, th2 = _crossing_arrays(gamma, a, omega, sign)
    count = count + 2 * _count_below(tau, th1, nu_p) - 2 * _count_below(tau, th2, nu_m)
    dist = np.minimum(_distance_to_crossing(tau, th1, nu_p), _distance_to_crossing(tau, th2, nu_m))
    dist = np.where((a == 0) | (tau == 0), np.inf, dist)
    return count, dist, trace0


# ---------------------------------------------------------------------------
# public operations


def critical_frequencies(p: HkbParams) -> CrossingFrequencies | None:
    nu_p, nu_m = _frequency_arrays(p.gamma, p.a, p.omega)
    if not np.isfinite(nu_p):
        return None
    return CrossingFrequencies(float(nu_p), float(nu_m))


def crossing_delays(p: HkbParams, mode: ModeKind, n_max: int) -> CrossingDelaySet | None:
    """Delays at which a root pair of ``mode`` sits on the imaginary axis.

    Returns ``None`` when no crossing frequencies exist.
    """
    if n_max < 0:
        raise ValueError("n_max must be non-negative")
    if p.a == 0:
        raise ZeroDivisionError("crossing angles are undefined for a = 0")
    freqs = critical_frequencies(p)
    if freqs is None:
        return None
    th1 = float(_theta(p.gamma, p.a, p.omega, freqs.nu_plus, mode.sign))
    th2 = float(_theta(p.gamma, p.a, p.omega, freqs.nu_minus, mode.sign))
    n = np.arange(n_max + 1)
    return CrossingDelaySet(
        mode=mode, theta1=th1, theta2=th2,
        nu_plus=freqs.nu_plus, nu_minus=freqs.nu_minus,
        taus_destabilizing=tuple(float(t) for t in (th1 + TWO_PI * n) / freqs.nu_plus),
        taus_stabilizing=tuple(float(t) for t in (th2 + TWO_PI * n) / freqs.nu_minus),
        n_max=n_max,
    )


def crossing_direction(p: HkbParams, which: str) -> int:
    """Sign of ``Re d lam/d tau`` at the crossing frequency ``which`` ('plus' or 'minus')."""
    freqs = critical_frequencies(p)
    if freqs is None:
        raise ValueError("no imaginary-axis crossings for these parameters")
    if which.lower() not in ("plus", "minus"):
        raise ValueError("which must be 'plus' or 'minus'")
    nu = freqs.nu_plus if which.lower() == "plus" else freqs.nu_minus
    lam = 1j * nu
    # (dlam/dtau)^-1 from the characteristic equation, with exp(lam tau)
    # eliminated; valid for either mode since only its sign is used.
    q = lam * lam - (p.gamma + p.a) * lam + p.omega ** 2
    inv = (-(2 * lam - (p.gamma + p.a)) / (q * lam)) + 1 / (lam * lam) - p.tau / lam
    re = inv.real
    return 1 if re > 0 else -1


def count_unstable_roots(p: HkbParams, mode: ModeKind) -> int:
    """Number of characteristic roots of ``mode`` with positive real part."""
    count, dist, trace0 = _unstable_count_arrays(p.gamma, p.a, p.omega, p.tau, mode.sign)
    if abs(float(trace0)) <= BOUNDARY_TOL:
        raise StabilityBoundaryError("parameter point on the tau = 0 Hopf line")
    if float(dist) <= BOUNDARY_TOL:
        raise StabilityBoundaryError("tau lies on a crossing delay")
    count = int(count)
    if count < 0:
        raise RuntimeError("negative unstable-root count; crossing bookkeeping failed")
    return count


def _root_search(p: HkbParams, mode: ModeKind, re_range, im_range, seeds, tol) -> list[complex]:
    if p.tau == 0:
        roots = np.roots([1.0, -(p.gamma + p.a) + mode.sign * p.a, p.omega ** 2])
        return sorted((complex(r) for r in roots), key=lambda z: (-z.real, -z.imag))
    re = np.linspace(*re_range, seeds[0])
    im = np.linspace(*im_range, seeds[1])
    lam = (re[None, :] + 1j * im[:, None]).ravel()
    for _ in range(80):
        with np.errstate(all="ignore"):
            step = characteristic(lam, p, mode) / characteristic_dlam(lam, p, mode)
        lam = lam - step
        bad = ~np.isfinite(lam) | (lam.real > 1e3) | (lam.real < -1e3)
        lam[bad] = np.nan
    with np.errstate(all="ignore"):
        res = np.abs(characteristic(lam, p, mode))
    good = np.isfinite(res) & (res <= tol) & (lam.imag >= -1e-9)
    found: list[complex] = []
    for z in sorted(lam[good], key=lambda z: (-z.real, -z.imag)):
        if abs(z.imag) < 1e-9:
            z = complex(z.real, 0.0)
        if all(abs(z - y) > 1e-6 for y in found):
            found.append(complex(z))
    full: list[complex] = []
    for z in found:
        full.append(z)
        if z.imag > 0:
            full.append(z.conjugate())
    full.sort(key=lambda z: (-z.real, -z.imag))
    return full


def rightmost_roots(p: HkbParams, mode: ModeKind, count: int,
                    re_range=(-20.0, 5.0), im_range=(0.0, 60.0),
                    seeds=(26, 61), tol=1e-10) -> list[complex]:
    """Characteristic roots with the largest real parts (conjugates included).

    Newton iteration is started from a rectangular seed grid; converged
    roots are deduplicated at 1e-6.  Raises :class:`RootSearchError` if fewer
    than ``count`` distinct roots are found.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    full = _root_search(p, mode, re_range, im_range, seeds, tol)
    if len(full) < count:
        raise RootSearchError(f"only {len(full)} distinct roots converged")
    return full[:count]


def count_unstable_by_roots(p: HkbParams, mode: ModeKind) -> int:
    """Unstable-root count from the numerical root search (validation route)."""
    roots = _root_search(p, mode, (-20.0, 5.0), (0.0, 60.0), (26, 61), 1e-10)
    if not roots:
        raise RootSearchError("no roots converged")
    return sum(1 for z in roots if z.real > 0)


def turning_point_indicator(p: HkbParams, nu) -> float:
    """``xi = 1 + omega^2/nu^2 - (gamma + a) tau``; its zeros are turning points in (gamma, a)."""
    nu = np.asarray(nu, dtype=float)
    if np.any(nu <= 0):
        raise ValueError("nu must be positive")
    return 1.0 + p.omega ** 2 / nu ** 2 - (p.gamma + p.a) * p.tau


def gamma_a_parametrisation(nu, tau, omega, mode: ModeKind):
    """``(gamma(nu), a(nu))`` on the ``Re lam = 0`` curve for fixed ``tau``."""
    nu = np.asarray(nu, dtype=float)
    s = np.sin(nu * tau)
    c = np.cos(nu * tau)
    with np.errstate(divide="ignore", invalid="ignore"):
        k = (nu * nu - omega * omega) / (nu * s)
    a = mode.sign * k
    gamma = k * (c - mode.sign)
    return gamma, a


def _split_runs(mask: np.ndarray) -> list[slice]:
    runs, start = [], None
    for i, m in enumerate(mask):
        if m and start is None:
            start = i
        elif not m and start is not None:
            runs.append(slice(start, i))
            start = None
    if start is not None:
        runs.append(slice(start, len(mask)))
    return [r for r in runs if r.stop - r.start >= 2]


def gamma_a_boundary(tau: float, omega: float, mode: ModeKind, nu_range,
                     n_samples: int = 2000, a_range=(-10.0, 10.0),
                     singular_tol: float = 1e-12) -> list[BoundaryCurve]:
    """Sampled ``Re lam = 0`` curves of ``mode`` in the ``(gamma, a)`` plane.

    Generic branches are segmented where ``sin(nu tau)`` vanishes and where
    the crossing direction ``xi`` changes sign; the special lines of the case
    ``nu tau = n pi`` are appended when ``omega tau`` is a multiple of pi.
    """
    lo, hi = nu_range
    if lo <= 0 or hi <= lo:
        raise ValueError("nu_range must be positive and increasing")
    curves: list[BoundaryCurve] = []
    if tau > 0:
        nu = np.linspace(lo, hi, n_samples)
        gamma, a = gamma_a_parametrisation(nu, tau, omega, mode)
        regular = np.abs(np.sin(nu * tau)) >= singular_tol
        xi = 1.0 + omega ** 2 / nu ** 2 - (gamma + a) * tau
        for run in _split_runs(regular & np.isfinite(gamma) & np.isfinite(a)):
            sign = np.sign(xi[run])
            start = run.start
            for i in range(run.start + 1, run.stop + 1):
                if i == run.stop or sign[i - run.start] != sign[start - run.start]:
                    if i - start >= 2:
                        curves.append(BoundaryCurve(
                            mode, np.column_stack([gamma[start:i], a[start:i]]),
                            int(sign[start - run.start]) or 1, "generic"))
                    start = i
    n = round(omega * tau / math.pi)
    if abs(omega * tau - n * math.pi) <= 1e-12 * max(1.0, omega * tau):
        a_line = np.linspace(*a_range, n_samples)
        factor = mode.sign * (-1) ** n - 1
        curves.append(BoundaryCurve(mode, np.column_stack([factor * a_line, a_line]), 0,
                                    f"special n={n}"))
    return curves


# ---------------------------------------------------------------------------
# charts


def _centers(rng, n):
    lo, hi = rng
    return lo + (np.arange(n) + 0.5) * (hi - lo) / n


def _tau_plane_curves(plane: Plane, fixed: HkbParams, x_range, tau_range, n_samples):
    xname = plane.axes[0]
    x = np.linspace(*x_range, n_samples)
    gamma = x if xname == "gamma" else np.full_like(x, fixed.gamma)
    a = x if xname == "a" else np.full_like(x, fixed.a)
    curves = []
    for mode in ModeKind:
        nu_p, nu_m, th1, th2 = _crossing_arrays(gamma, a, fixed.omega, mode.sign)
        for nu, th, direction, tag in ((nu_p, th1, 1, "tau_n1"), (nu_m, th2, -1, "tau_n2")):
            for run in _split_runs(np.isfinite(nu) & np.isfinite(th) & (a != 0)):
                th_u = np.unwrap(th[run])
                tmin = np.min(th_u / nu[run])
                tmax = np.max((th_u + 0.0) / nu[run])
                n_lo = int(math.floor((tau_range[0] - tmax) * np.max(nu[run]) / TWO_PI)) - 1
                n_hi = int(math.ceil((tau_range[1] - tmin) * np.max(nu[run]) / TWO_PI)) + 1
                for n in range(n_lo, n_hi + 1):
                    tau = (th_u + TWO_PI * n) / nu[run]
                    inside = (tau >= tau_range[0]) & (tau <= tau_range[1]) & (tau >= 0)
                    for sub in _split_runs(inside):
                        pts = np.column_stack([x[run][sub], tau[sub]])
                        curves.append(BoundaryCurve(mode, pts, direction, tag))
    return curves


def classify_arrays(gamma, a, omega, tau) -> np.ndarray:
    """Vectorised region classification (codes of :class:`RegionClass`)."""
    ci, _, _ = _unstable_count_arrays(gamma, a, omega, tau, 1)
    ca, _, _ = _unstable_count_arrays(gamma, a, omega, tau, -1)
    return (ci == 0).astype(int) * RegionClass.IN_ONLY + (ca == 0).astype(int) * RegionClass.ANTI_ONLY


def classify_point(p: HkbParams) -> RegionClass:
    stable_i = count_unstable_roots(p, ModeKind.IN_PHASE) == 0
    stable_a = count_unstable_roots(p, ModeKind.ANTI_PHASE) == 0
    return RegionClass(int(stable_i) * 1 + int(stable_a) * 2)


def stability_chart(plane, ranges, resolution=(400, 400), fixed: HkbParams | None = None,
                    n_boundary_samples: int = 2000, nu_range=None) -> StabilityChart:
    """Region map and boundary polylines for one of the three parameter planes."""
    plane = Plane(plane)
    fixed = fixed or HkbParams()
    (x_range, y_range) = (tuple(map(float, ranges[0])), tuple(map(float, ranges[1])))
    nx, ny = (int(resolution[0]), int(resolution[1]))
    if nx <= 0 or ny <= 0:
        raise ValueError("resolution must be positive")
    for lo, hi in (x_range, y_range):
        if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
            raise ValueError("ranges must be finite with hi > lo")
    xc, yc = _centers(x_range, nx), _centers(y_range, ny)
    X, Y = np.meshgrid(xc, yc)
    xname, yname = plane.axes
    vals = {"gamma": fixed.gamma, "a": fixed.a, "tau": fixed.tau}
    vals[xname], vals[yname] = X, Y
    grid = classify_arrays(vals["gamma"], vals["a"], fixed.omega, vals["tau"])
    if plane is Plane.GAMMA_A:
        nu_range = nu_range or (1e-3 * fixed.omega, 10.0 * fixed.omega)
        curves = []
        for mode in ModeKind:
            for c in gamma_a_boundary(fixed.tau, fixed.omega, mode, nu_range,
                                      n_boundary_samples, a_range=y_range):
                inside = ((c.points[:, 0] >= x_range[0]) & (c.points[:, 0] <= x_range[1])
                          & (c.points[:, 1] >= y_range[0]) & (c.points[:, 1] <= y_range[1]))
                for sub in _split_runs(inside):
                    curves.append(BoundaryCurve(c.mode, c.points[sub], c.direction, c.label))
    else:
        curves = _tau_plane_curves(plane, fixed, x_range, y_range, n_boundary_samples)
    return StabilityChart(plane, x_range, y_range, (nx, ny), fixed, grid, curves)


REGION_COLOURS = {
    RegionClass.NEITHER: "#ffffff",
    RegionClass.IN_ONLY: "#4f7fd9",
    RegionClass.ANTI_ONLY: "#d9534f",
    RegionClass.BOTH: "#8e5bb5",
}
MODE_COLOURS = {ModeKind.IN_PHASE: "#1f3f8f", ModeKind.ANTI_PHASE: "#8f1f1f"}


def chart_csv(chart: StabilityChart) -> str:
    xname, yname = chart.plane.axes
    lines = [f"# plane={chart.plane.value} rows={yname} cols={xname} "
             f"x_range={list(chart.x_range)} y_range={list(chart.y_range)}"]
    for row in chart.grid:
        lines.append(",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def chart_boundaries_json(chart: StabilityChart) -> dict:
    xname, yname = chart.plane.axes
    return {
        "plane": chart.plane.value,
        "axes": [xname, yname],
        "x_range": list(chart.x_range),
        "y_range": list(chart.y_range),
        "fixed": chart.fixed.as_dict(),
        "curves": [c.as_dict() for c in chart.boundary_curves],
    }


def chart_svg(chart: StabilityChart, width: int = 600, height: int = 600) -> str:
    """Raster of the region map with boundary polylines overlaid."""
    nx, ny = chart.resolution
    margin = 50
    cw, ch = width / nx, height / ny
    (x0, x1), (y0, y1) = chart.x_range, chart.y_range

    def to_px(x, y):
        return (margin + (x - x0) / (x1 - x0) * width,
                margin + height - (y - y0) / (y1 - y0) * height)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width + 2 * margin}" '
           f'height="{height + 2 * margin}" viewBox="0 0 {width + 2 * margin} {height + 2 * margin}">',
           '<g shape-rendering="crispEdges">']
    for r in range(ny):
        row = chart.grid[r]
        y = margin + height - (r + 1) * ch
        start = 0
        for c in range(1, nx + 1):
            if c == nx or row[c] != row[start]:
                colour = REGION_COLOURS[RegionClass(int(row[start]))]
                out.append(f'<rect x="{margin + start * cw:.3f}" y="{y:.3f}" '
                           f'width="{(c - start) * cw:.3f}" height="{ch:.3f}" fill="{colour}"/>')
                start = c
    out.append("</g>")
    for curve in chart.boundary_curves:
        pts = " ".join("{:.2f},{:.2f}".format(*to_px(x, y)) for x, y in curve.points)
        out.append(f'<polyline points="{pts}" fill="none" stroke="{MODE_COLOURS[curve.mode]}" '
                   'stroke-width="1"/>')
    xname, yname = chart.plane.axes
    out.append(f'<rect x="{margin}" y="{margin}" width="{width}" height="{height}" '
               'fill="none" stroke="black"/>')
    out.append(f'<text x="{margin + width / 2}" y="{height + 1.7 * margin}" '
               f'text-anchor="middle" font-size="14">{xname}</text>')
    out.append(f'<text x="{margin / 3}" y="{margin + height / 2}" font-size="14">{yname}</text>')
    for val, anchor in ((x0, "start"), (x1, "end")):
        px, _ = to_px(val, y0)
        out.append(f'<text x="{px}" y="{height + 1.3 * margin}" text-anchor="{anchor}" '
                   f'font-size="11">{val:g}</text>')
    for val in (y0, y1):
        _, py = to_px(x0, val)
        out.append(f'<text x="{margin - 4}" y="{py}" text-anchor="end" font-size="11">{val:g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
