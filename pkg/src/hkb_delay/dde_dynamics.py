"""Method-of-steps integration of the delayed HKB system and attractor measures."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass
from types import SimpleNamespace
from typing import Callable

import numpy as np

from .model import HkbParams, rhs_full

BLOWUP = 1e8
PHASE_BAND_DEG = 10.0
EQUILIBRIUM_RMS = 1e-5


class BlowUpError(FloatingPointError):
    pass


class OrbitClass(enum.Enum):
    EQUILIBRIUM = "equilibrium"
    IN_PHASE = "in-phase"
    ANTI_PHASE = "anti-phase"
    QUADRATURE = "quadrature"
    TORUS = "torus"
    UNCLASSIFIED = "unclassified"


@dataclass
class Trajectory:
    t0: float
    dt: float
    samples: np.ndarray      # (n, 4) or (n, batch, 4)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.samples.shape[0])

    def member(self, k: int) -> "Trajectory":
        return Trajectory(self.t0, self.dt, self.samples[:, k, :])

    def to_csv(self) -> str:
        if self.samples.ndim != 2:
            raise ValueError("export a single member of a batch")
        lines = ["t,x1,x2,v1,v2"]
        for t, s in zip(self.times, self.samples):
            lines.append(",".join(repr(float(v)) for v in (t, *s)))
        return "\n".join(lines) + "\n"


def _batched_params(p: HkbParams, a_values):
    ns = SimpleNamespace(**p.as_dict())
    if a_values is not None:
        ns.a = np.asarray(a_values, dtype=float)
    return ns


def step_count(tau: float, dt: float) -> tuple[float, int]:
    """Step aligned to the delay grid: ``dt' = tau/m`` with ``dt' <= dt``."""
    if tau == 0:
        return dt, 0
    m = max(20, int(math.ceil(tau / dt - 1e-12)))
    return tau / m, m


def integrate(p: HkbParams, history: Callable, t_end: float, dt: float,
              a_values=None) -> Trajectory:
    """Classical RK4 by the method of steps.

    ``history(t)`` returns the state on ``[-tau, 0]`` with shape ``(4,)`` or
    ``(batch, 4)``.  Delayed values at stage midpoints come from the cubic
    Hermite interpolant of the stored solution and derivative, which keeps
    the scheme fourth order.  Passing ``a_values`` (one per batch member)
    integrates several coupling strengths at once.
    """
    if t_end <= 0:
        raise ValueError("t_end must be positive")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if p.tau > 0 and dt > p.tau / 20 * (1 + 1e-12):
        raise ValueError("dt must not exceed tau/20")
    q = _batched_params(p, a_values)
    h, m = step_count(p.tau, dt)
    n_steps = int(math.ceil(t_end / h - 1e-9))
    y0 = np.asarray(history(0.0), dtype=float)
    if a_values is not None and y0.ndim == 1:
        y0 = np.broadcast_to(y0, (len(np.atleast_1d(a_values)), 4)).copy()
    shape = y0.shape
    if a_values is not None:
        q.a = q.a.reshape(shape[:-1])
    ys = np.empty((n_steps + 1,) + shape)
    ys[0] = y0
    if m == 0:
        f = lambda y, yd: rhs_full(y, y, q)
        for n in range(n_steps):
            y = ys[n]
            k1 = f(y, None)
            k2 = f(y + 0.5 * h * k1, None)
            k3 = f(y + 0.5 * h * k2, None)
            k4 = f(y + h * k3, None)
            ys[n + 1] = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.abs(ys[n + 1]) < BLOWUP):
                raise BlowUpError(f"state exceeded {BLOWUP:g} at t={h * (n + 1):.4g}")
        return Trajectory(0.0, h, ys)
    # history on the grid and at half steps
    hist = np.empty((m + 1,) + shape)
    hist_mid = np.empty((m,) + shape)
    for k in range(m + 1):
        hist[k] = np.broadcast_to(history(-p.tau + k * h), shape)
    for k in range(m):
        hist_mid[k] = np.broadcast_to(history(-p.tau + (k + 0.5) * h), shape)
    ders = np.empty((n_steps + 1,) + shape)

    def delayed(j):
        """Delayed state at grid index ``j`` (relative to t=0) and at ``j + 1/2``."""
        if j < 0:
            return hist[j + m], hist_mid[j + m], hist[j + m + 1]
        ya, yb = ys[j], ys[j + 1]
        fa, fb = ders[j], ders[j + 1]
        return ya, 0.5 * (ya + yb) + h * (fa - fb) / 8.0, yb

    for n in range(n_steps):
        y = ys[n]
        d0, dm, d1 = delayed(n - m)
        k1 = rhs_full(y, d0, q)
        ders[n] = k1
        k2 = rhs_full(y + 0.5 * h * k1, dm, q)
        k3 = rhs_full(y + 0.5 * h * k2, dm, q)
        k4 = rhs_full(y + h * k3, d1, q)
        ys[n + 1] = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.abs(ys[n + 1]) < BLOWUP):
            raise BlowUpError(f"state exceeded {BLOWUP:g} at t={h * (n + 1):.4g}")
    return Trajectory(0.0, h, ys)


# ---------------------------------------------------------------------------
# measurement


@dataclass
class OrbitMeasures:
    rms_amplitude: float
    period: float
    phase_shift_deg: float
    classification: OrbitClass
    section_dispersion: float = float("nan")
    envelope_limit: float = float("nan")

    def as_dict(self) -> dict:
        def clean(v):
            return None if not math.isfinite(v) else float(v)
        return {
            "rms_amplitude": clean(self.rms_amplitude),
            "period": clean(self.period),
            "phase_shift_deg": clean(self.phase_shift_deg),
            "classification": self.classification.value,
            "section_dispersion": clean(self.section_dispersion),
            "envelope_limit": clean(self.envelope_limit),
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"


def local_maxima(x: np.ndarray, dt: float, t0: float = 0.0):
    """Times and values of interior local maxima, refined by a parabola through 3 samples."""
    i = np.nonzero((x[1:-1] > x[:-2]) & (x[1:-1] >= x[2:]))[0] + 1
    ym, y0, yp = x[i - 1], x[i], x[i + 1]
    den = ym - 2 * y0 + yp
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(den != 0, 0.5 * (ym - yp) / den, 0.0)
    off = np.clip(off, -0.5, 0.5)
    return t0 + (i + off) * dt, y0 - 0.25 * (ym - yp) * off


def autocorrelation_period(x: np.ndarray, dt: float) -> float:
    """Lag of the dominant autocorrelation peak after the first zero crossing."""
    x = x - x.mean()
    n = x.size
    if n < 8 or not np.any(x):
        return float("nan")
    nfft = 1 << (2 * n - 1).bit_length()
    F = np.fft.rfft(x, nfft)
    ac = np.fft.irfft(F * np.conj(F), nfft)[:n]
    # unbiased estimate: the raw sum at lag k has only n - k terms, whose
    # linear taper would pull the peak towards shorter lags
    ac = ac / (n - np.arange(n))
    ac = ac / ac[0]
    neg = np.nonzero(ac < 0)[0]
    if neg.size == 0:
        return float("nan")
    start = neg[0]
    search = ac[start: n // 2]
    if search.size < 3:
        return float("nan")
    # first peak reaching 90% of the dominant one, to avoid period multiples
    peak = np.max(search)
    cand = np.nonzero((search[1:-1] >= search[:-2]) & (search[1:-1] >= search[2:])
                      & (search[1:-1] >= 0.9 * peak))[0]
    k = int(cand[0] + 1 if cand.size else np.argmax(search)) + start
    if k <= 0 or k >= n - 1 or ac[k] < 0.3:
        return float("nan")
    ym, y0, yp = ac[k - 1], ac[k], ac[k + 1]
    den = ym - 2 * y0 + yp
    off = 0.5 * (ym - yp) / den if den != 0 else 0.0
    return float((k + off) * dt)


def _envelope_limit(tmax, vmax):
    """Aitken extrapolation of the limit of the maxima envelope."""
    if vmax.size < 6:
        return float("nan")
    k = vmax.size // 3
    e1, e2, e3 = vmax[:k].mean(), vmax[k:2 * k].mean(), vmax[2 * k:3 * k].mean()
    den = e1 + e3 - 2 * e2
    if abs(den) < 1e-12 * max(abs(e1), 1e-300):
        return float(e3)
    lim = (e1 * e3 - e2 * e2) / den
    # only meaningful for a monotone approach
    if (e2 - e1) * (e3 - e2) <= 0:
        return float(e3)
    return float(lim)


def _phase_class(phase):
    for centre, cls in ((0.0, OrbitClass.IN_PHASE), (180.0, OrbitClass.ANTI_PHASE),
                        (90.0, OrbitClass.QUADRATURE), (270.0, OrbitClass.QUADRATURE),
                        (360.0, OrbitClass.IN_PHASE)):
        if abs(phase - centre) <= PHASE_BAND_DEG:
            return cls
    return OrbitClass.UNCLASSIFIED


def measure_orbit(traj: Trajectory, settle_fraction: float = 0.75,
                  torus_threshold: float = 0.05) -> OrbitMeasures:
    """RMS amplitude, period, phase shift and class of the settled part of ``traj``."""
    if not 0 <= settle_fraction < 1:
        raise ValueError("settle_fraction must lie in [0, 1)")
    s = traj.samples
    if s.ndim != 2:
        raise ValueError("measure a single trajectory")
    start = int(settle_fraction * s.shape[0])
    tail = s[start:]
    t0 = traj.t0 + start * traj.dt
    x1, x2 = tail[:, 0], tail[:, 1]
    rms = float(np.sqrt(np.mean(x1 ** 2 + x2 ** 2)))
    nan = float("nan")
    if rms < EQUILIBRIUM_RMS:
        return OrbitMeasures(rms, nan, nan, OrbitClass.EQUILIBRIUM)
    r = np.sqrt(x1 ** 2 + x2 ** 2)
    tm, vm = local_maxima(r, traj.dt, t0)
    lim = _envelope_limit(tm, vm)
    if math.isfinite(lim) and vm.size and lim < 0.1 * vm[-1]:
        return OrbitMeasures(rms, nan, nan, OrbitClass.EQUILIBRIUM, envelope_limit=lim)
    T = autocorrelation_period(x1, traj.dt)
    if not math.isfinite(T):
        return OrbitMeasures(rms, nan, nan, OrbitClass.UNCLASSIFIED, envelope_limit=lim)
    t1, _ = local_maxima(x1, traj.dt, t0)
    t2, _ = local_maxima(x2, traj.dt, t0)
    # keep only dominant maxima (one per period)
    t1 = _dominant(t1, x1, traj.dt, t0, T)
    t2 = _dominant(t2, x2, traj.dt, t0, T)
    if t1.size < 2 or t2.size < 1:
        return OrbitMeasures(rms, T, nan, OrbitClass.UNCLASSIFIED, envelope_limit=lim)
    if t1.size >= 3:
        # the autocorrelation peak of a finite window is biased by O(1/n);
        # the mean spacing of the dominant maxima is not
        T_fit = float(np.polyfit(np.arange(t1.size), t1, 1)[0])
        if abs(T_fit - T) <= 0.05 * T:
            T = T_fit
    k = np.searchsorted(t2, t1[-1], side="right") - 1
    if k < 0:
        return OrbitMeasures(rms, T, nan, OrbitClass.UNCLASSIFIED, envelope_limit=lim)
    phase = float((360.0 * (t1[-1] - t2[k]) / T) % 360.0)
    disp = _section_dispersion(tail, traj.dt, t0, t1, rms)
    if disp > torus_threshold:
        return OrbitMeasures(rms, T, phase, OrbitClass.TORUS, disp, lim)
    return OrbitMeasures(rms, T, phase, _phase_class(phase), disp, lim)


def _dominant(tmax, x, dt, t0, T):
    """Choose the largest maximum in each window of one period."""
    if tmax.size == 0:
        return tmax
    vals = np.interp(tmax, t0 + dt * np.arange(x.size), x)
    out = []
    start = tmax[0]
    while start <= tmax[-1]:
        sel = (tmax >= start) & (tmax < start + T)
        if np.any(sel):
            idx = np.nonzero(sel)[0]
            out.append(tmax[idx[np.argmax(vals[idx])]])
            start = out[-1] + 0.5 * T
        else:
            start += T
    return np.array(out)


def _section_dispersion(tail, dt, t0, t1, rms):
    """Persistent spread of ``x2`` sampled at successive maxima of ``x1`` (relative to rms).

    A linear trend is removed first, and the spread of the later half is
    compared with the earlier half: a decaying spread is a transient
    approach to a periodic orbit, so it is reported as zero.
    """
    if t1.size < 12:
        return 0.0
    grid = t0 + dt * np.arange(tail.shape[0])
    sec = np.interp(t1, grid, tail[:, 1])
    idx = np.arange(sec.size)
    resid = sec - np.polyval(np.polyfit(idx, sec, 1), idx)
    half = sec.size // 2
    early = np.sqrt(np.mean(resid[:half] ** 2))
    late = np.sqrt(np.mean(resid[half:] ** 2))
    if early > 0 and late < 0.7 * early:
        return 0.0
    return float(late / rms)


# ---------------------------------------------------------------------------


def random_history(seed: int, amplitude: float = 0.05, omega: float = 2.6 * math.pi,
                   bias: str | None = None):
    """Small harmonic history with seed-determined phases.

    ``bias`` in {'in', 'anti'} makes the two oscillators start nearly
    in-phase or anti-phase.
    """
    rng = np.random.default_rng(seed)
    ph = rng.uniform(0, 2 * np.pi, 2)
    if bias == "in":
        ph[1] = ph[0] + rng.normal(0, 0.2)
    elif bias == "anti":
        ph[1] = ph[0] + np.pi + rng.normal(0, 0.2)
    elif bias is not None:
        raise ValueError("bias must be 'in', 'anti' or None")
    amp = amplitude * rng.uniform(0.8, 1.2, 2)

    def history(t):
        x = amp * np.cos(omega * t + ph)
        v = -amp * omega * np.sin(omega * t + ph)
        return np.array([x[0], x[1], v[0], v[1]])

    return history


def settle_to_attractor(p: HkbParams, seed: int, periods: float = 200, discard: float = 0.75,
                        bias: str | None = None, amplitude: float = 0.05,
                        dt: float | None = None) -> OrbitMeasures:
    """Integrate from a small random history for ``periods`` forcing periods and measure."""
    period = 2 * math.pi / p.omega
    if dt is None:
        dt = min(p.tau / 20, period / 60) if p.tau > 0 else period / 60
    traj = integrate(p, random_history(seed, amplitude, p.omega, bias), periods * period, dt)
    return measure_orbit(traj, discard)
