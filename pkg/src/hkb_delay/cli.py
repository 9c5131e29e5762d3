"""Batch commands for charts, tables, unfoldings, simulation and continuation.

Every command writes its artefacts into ``--out`` (default ``./out``) with
atomic temp-file-plus-rename writes.  Exit codes: 0 ok, 2 configuration
error, 3 numerical failure, 4 partial result (a branch stopped early but its
data were written).

The optional ``--config`` file is flat ``key = value`` text with one
``[section]`` per command plus a shared ``[params]`` section; flags given on
the command line override file values.
"""

from __future__ import annotations

import argparse
import configparser
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import centre_manifold as cm
from . import continuation as cont
from . import dde_dynamics as dde
from . import linear_stability as ls
from . import torus_continuation as tc
from . import unfolding as uf
from .model import PARAM_KEYS, HkbParams, ModeKind

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_PARTIAL = 0, 2, 3, 4

DEFAULT_RANGES = {
    "a-tau": ((-10.0, 10.0), (0.0, 2.0)),
    "gamma-tau": ((-1.0, 5.0), (0.0, 2.0)),
    "gamma-a": ((-2.0, 2.0), (-2.0, 2.0)),
}


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# option schema: name -> (type, default, help)

def _float_pair(text):
    parts = text.replace(",", " ").split() if isinstance(text, str) else list(text)
    if len(parts) != 2:
        raise ValueError("expected two numbers")
    return tuple(float(x) for x in parts)


def _int_pair(text):
    parts = text.replace(",", " ").split() if isinstance(text, str) else list(text)
    if len(parts) != 2:
        raise ValueError("expected two integers")
    return tuple(int(x) for x in parts)


def _int_triple(text):
    parts = text.replace(",", " ").split() if isinstance(text, str) else list(text)
    if len(parts) != 3:
        raise ValueError("expected three integers")
    return tuple(int(x) for x in parts)


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str_or_none(text):
    return None if text in (None, "", "none") else str(text)


COMMON = {
    "out": (str, "out", "output directory"),
    "format": (str, None, "restrict exports to one format (csv, json, svg)"),
    "seed": (int, 0, "random seed"),
    "tolerance": (float, None, "comparison / solver tolerance"),
    "verify": (_bool, False, "run built-in cross-checks"),
}

OPTIONS = {
    "chart": {
        "plane": (str, "a-tau", "a-tau, gamma-tau or gamma-a"),
        "x_range": (_float_pair, None, "range of the horizontal axis"),
        "y_range": (_float_pair, None, "range of the vertical axis"),
        "resolution": (_int_pair, (400, 400), "cells along x and y"),
        "samples": (int, 2000, "boundary samples per branch"),
        "verify_cells": (int, 50, "cells spot-checked by --verify"),
    },
    "tables": {},
    "unfold": {
        "point": (str, "HH1", "double-Hopf label (HH1..HH4 or P1..)"),
        "axis": (str, "a", "diagram axis: a or tau"),
        "range": (_float_pair, None, "diagram range (default point +- 0.05)"),
        "fixed": (float, None, "value of the other parameter (default critical value)"),
        "n": (int, 201, "diagram samples"),
        "radius": (float, 0.05, "radius of the region wedges in (b1, b2)"),
    },
    "simulate": {
        "periods": (float, 200.0, "integration horizon in forcing periods"),
        "dt": (float, None, "step size (default min(tau/20, period/60))"),
        "bias": (_str_or_none, None, "history bias: in, anti or none"),
        "amplitude": (float, 0.05, "history amplitude"),
        "discard": (float, 0.75, "fraction of the run discarded before measuring"),
        "sweep_a": (_float_pair, None, "sweep the coupling a over this range"),
        "sweep_n": (int, 21, "number of sweep values"),
    },
    "continue": {
        "a_range": (_float_pair, (-0.7, 0.4), "range of a for orbit branches"),
        "modes": (str, "in-phase,anti-phase", "comma-separated orbit families"),
        "max_points": (int, 300, "points per orbit branch"),
        "switch": (_bool, True, "switch at every pitchfork of the symmetric branches"),
        "hopf_curves": (_bool, False, "continue both Hopf curves in (a, tau)"),
        "a_window": (_float_pair, (-2.0, 1.0), "a window for Hopf curves"),
        "tau_window": (_float_pair, (0.0, 0.6), "tau window for Hopf curves"),
        "tau_grid": (_float_pair, None, "trace torus/pitchfork points over this tau range"),
        "tau_grid_n": (int, 5, "number of delays in the tracing grid"),
    },
    "torus": {
        "mesh": (_int_triple, (12, 12, 4), "segments N, M and degree P"),
        "a_range": (_float_pair, (-0.7, 0.5), "range of a for the torus branch"),
        "max_points": (int, 300, "points on the torus branch"),
        "to_locking": (_bool, False, "continue until the frequency ratio locks"),
        "lock_tol": (float, 1e-2, "|ratio - 1| at which the branch is declared locked"),
        "pass_locking": (_bool, False, "continue through the locking window and stop at its exit"),
        "locking_delta": (float, None, "run near-locking continuation at this level"),
        "locking_points": (int, 20, "points on the near-locking branch"),
    },
    "verify": {},
}


def _parse_value(cmd, key, raw):
    table = dict(COMMON, **OPTIONS[cmd]) if cmd != "params" else {k: (float, None, "") for k in PARAM_KEYS}
    if key not in table:
        raise ConfigError(f"unknown key '{key}' in section [{cmd}]")
    try:
        return table[key][0](raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for '{key}': {exc}") from None


def read_config(path: str | None, cmd: str) -> tuple[dict, dict]:
    """Parameter overrides and command options from a config file."""
    if path is None:
        return {}, {}
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    params, opts = {}, {}
    for section in parser.sections():
        if section != "params" and section not in OPTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            value = _parse_value(section, key.replace("-", "_"), raw)
            if section == "params":
                params[key] = value
            elif section == cmd:
                opts[key.replace("-", "_")] = value
    return params, opts


class RunConfig:
    """Resolved parameters and options of one command invocation."""

    def __init__(self, cmd: str, params: HkbParams, options: dict, explicit_params: dict):
        self.cmd = cmd
        self.params = params
        self.options = options
        self.explicit_params = explicit_params
        tol = options.get("tolerance")
        if tol is not None and not (tol > 0 and math.isfinite(tol)):
            raise ConfigError("tolerance must be positive")
        fmt = options.get("format")
        if fmt is not None and fmt not in ("csv", "json", "svg"):
            raise ConfigError("format must be csv, json or svg")

    def __getattr__(self, name):
        try:
            return self.options[name]
        except KeyError:
            raise AttributeError(name) from None

    def wants(self, fmt: str) -> bool:
        return self.options.get("format") in (None, fmt)


def build_config(args: argparse.Namespace) -> RunConfig:
    cmd = args.command
    file_params, file_opts = read_config(args.config, cmd)
    options = {k: spec[1] for k, spec in dict(COMMON, **OPTIONS[cmd]).items()}
    options.update(file_opts)
    for key in list(COMMON) + list(OPTIONS[cmd]):
        val = getattr(args, key, None)
        if val is not None:
            options[key] = _parse_value(cmd, key, val)
    explicit = dict(file_params)
    for key in PARAM_KEYS:
        val = getattr(args, f"p_{key}", None)
        if val is not None:
            explicit[key] = float(val)
    try:
        params = HkbParams.from_mapping(explicit)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(cmd, params, options, explicit)


# ---------------------------------------------------------------------------
# output


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False, default=_json_default) + "\n"


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def _clean(v):
    """Replace non-finite floats by None so that JSON stays strict."""
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (float, np.floating)):
        return float(v) if math.isfinite(v) else None
    return v


class Emitter:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self.written: list[str] = []

    def emit(self, name: str, text: str) -> None:
        fmt = name.rsplit(".", 1)[-1]
        if fmt == "txt" or self.cfg.wants(fmt):
            write_atomic(self.out / name, text)
            self.written.append(name)


# ---------------------------------------------------------------------------
# commands


def cmd_chart(cfg: RunConfig, em: Emitter) -> int:
    plane = cfg.plane
    if plane not in DEFAULT_RANGES:
        raise ConfigError(f"unknown plane '{plane}'")
    xr = cfg.x_range or DEFAULT_RANGES[plane][0]
    yr = cfg.y_range or DEFAULT_RANGES[plane][1]
    for lo, hi in (xr, yr):
        if not hi > lo:
            raise ConfigError("chart ranges must have positive width")
    if min(cfg.resolution) <= 0:
        raise ConfigError("resolution must be positive")
    chart = ls.stability_chart(plane, (xr, yr), cfg.resolution, cfg.params, cfg.samples)
    tag = plane.replace("-", "_")
    em.emit(f"chart_{tag}.csv", ls.chart_csv(chart))
    em.emit(f"chart_{tag}.json", dump_json(ls.chart_boundaries_json(chart)))
    em.emit(f"chart_{tag}.svg", ls.chart_svg(chart))
    if cfg.verify:
        report = verify_chart(chart, cfg.verify_cells, cfg.seed)
        em.emit(f"chart_{tag}_verify.json", dump_json(report))
        print(f"verify: {report['agree']}/{report['checked']} cells agree "
              f"({report['skipped']} near-boundary cells skipped)")
        if report["agree"] != report["checked"]:
            return EXIT_NUMERICAL
    return EXIT_OK


def verify_chart(chart: ls.StabilityChart, n: int, seed: int) -> dict:
    """Compare random grid cells with counts from the rightmost roots."""
    rng = np.random.default_rng(seed)
    ny, nx = chart.grid.shape
    checked = agree = skipped = 0
    mismatches = []
    for _ in range(n):
        r, c = int(rng.integers(ny)), int(rng.integers(nx))
        q = chart.cell_params(r, c)
        try:
            code = 0
            for bit, mode in ((1, ModeKind.IN_PHASE), (2, ModeKind.ANTI_PHASE)):
                if ls.count_unstable_by_roots(q, mode) == 0:
                    code |= bit
        except (ls.StabilityBoundaryError, ls.RootSearchError):
            skipped += 1
            continue
        checked += 1
        if code == int(chart.grid[r, c]):
            agree += 1
        else:
            mismatches.append({"row": r, "col": c, "grid": int(chart.grid[r, c]), "roots": code})
    return {"checked": checked, "agree": agree, "skipped": skipped, "mismatches": mismatches,
            "seed": seed}


def _reference_applicable(p: HkbParams) -> bool:
    d = HkbParams()
    return all(math.isclose(getattr(p, k), getattr(d, k), rel_tol=0, abs_tol=1e-12)
               for k in ("gamma", "alpha", "beta", "b", "omega"))


def compute_tables(p: HkbParams):
    points = cm.label_points(cm.double_hopf_points(p), p)
    forms = [cm.normal_form_coefficients(hh, p) for hh in points]
    return points, forms


def table_report(points, forms, tol, reference: bool) -> tuple[list[str], bool]:
    lines = [f"tolerance {tol:g}"]
    if not reference:
        lines.append("no tabulated reference for these parameters; comparison skipped")
        return lines, True
    ok = True
    by_label = {hh.label: (hh, nf) for hh, nf in zip(points, forms)}
    devs = []
    for label in sorted(cm.REFERENCE_POINTS):
        if label not in by_label:
            lines.append(f"{label}: MISSING")
            ok = False
            continue
        hh, nf = by_label[label]
        ref_p = cm.REFERENCE_POINTS[label]
        ref_c = cm.REFERENCE_COEFFICIENTS[label]
        got = {"a_c": hh.a_c, "tau_c": hh.tau_c, "nu_i": hh.nu_i, "nu_a": hh.nu_a}
        for key, val in ref_p.items():
            devs.append((f"{label}.{key}", abs(got[key] - val)))
        for name, mat in (("a", nf.a), ("rho", nf.rho)):
            for j in range(2):
                for k in range(2):
                    devs.append((f"{label}.{name}{j + 1}{k + 1}",
                                 abs(mat[j, k] - ref_c[name][j][k])))
    for name, d in devs:
        status = "PASS" if d <= tol else "FAIL"
        ok &= d <= tol
        lines.append(f"{name}: deviation {d:.3e} {status}")
    worst = max(devs, key=lambda t: t[1]) if devs else ("-", 0.0)
    lines.append(f"max deviation {worst[1]:.3e} at {worst[0]}")
    lines.append(f"report {'PASS' if ok else 'FAIL'}")
    return lines, ok


def cmd_tables(cfg: RunConfig, em: Emitter) -> int:
    p = cfg.params
    try:
        points, forms = compute_tables(p)
    except (RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise NumericalError(f"normal-form computation failed: {exc}") from None
    tol = cfg.tolerance or 1e-3
    rows = ["point,a_c,tau_c,nu_i,nu_a"]
    for hh in points:
        rows.append(f"{hh.label},{hh.a_c!r},{hh.tau_c!r},{hh.nu_i!r},{hh.nu_a!r}")
    em.emit("table_double_hopf.csv", "\n".join(rows) + "\n")
    rows = ["point,a11,a12,a21,a22,c11,c12,c21,c22,rho11,rho12,rho21,rho22"]
    for nf in forms:
        vals = list(nf.a.ravel()) + list(nf.c.ravel()) + list(nf.rho.ravel())
        rows.append(nf.label + "," + ",".join(repr(float(v)) for v in vals))
    em.emit("table_normal_form.csv", "\n".join(rows) + "\n")
    reference = _reference_applicable(p)
    lines, ok = table_report(points, forms, tol, reference)
    em.emit("tables.json", dump_json({"params": p.as_dict(),
                                      "normal_forms": [nf.as_dict() for nf in forms],
                                      "reference": reference, "pass": ok}))
    em.emit("tables_report.txt", "\n".join(lines) + "\n")
    print(lines[-1])
    return EXIT_OK


def _find_point(p: HkbParams, label: str):
    points, _ = cm.label_points(cm.double_hopf_points(p), p), None
    for hh in points:
        if hh.label == label:
            return hh
    raise ConfigError(f"no double-Hopf point labelled {label}; found {[h.label for h in points]}")


def cmd_unfold(cfg: RunConfig, em: Emitter) -> int:
    p = cfg.params
    if cfg.axis not in ("a", "tau"):
        raise ConfigError("axis must be a or tau")
    hh = _find_point(p, cfg.point)
    nf = cm.normal_form_coefficients(hh, p)
    base = nf.base[0] if cfg.axis == "a" else nf.base[1]
    rng = cfg.range or (base - 0.05, base + 0.05)
    if not rng[1] > rng[0]:
        raise ConfigError("range must have positive width")
    fixed = cfg.fixed if cfg.fixed is not None else (nf.base[1] if cfg.axis == "a" else nf.base[0])
    rows = uf.one_param_diagram(nf, cfg.axis, rng, fixed, cfg.n)
    tag = f"{hh.label}_{cfg.axis}"
    em.emit(f"unfold_{tag}.csv", uf.diagram_csv(rows))
    lines = [{"index": ln.index, "normal": ln.normal.tolist(), "direction": ln.direction.tolist(),
              "direction_a_tau": ln.direction_a_tau.tolist()} for ln in uf.separating_lines(nf)]
    try:
        regions = uf.region_polygons(nf, cfg.radius)
        regions_at = uf.region_polygons(nf, cfg.radius, in_a_tau=True)
    except NotImplementedError as exc:
        regions, regions_at = {"unsupported": str(exc)}, {}
    em.emit(f"unfold_{hh.label}_regions.json",
            dump_json({"normal_form": nf.as_dict(), "lines": lines,
                       "regions_b": regions, "regions_a_tau": regions_at}))
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, em: Emitter) -> int:
    p = cfg.params
    period = 2 * math.pi / p.omega
    dt = cfg.dt or (min(p.tau / 20, period / 60) if p.tau > 0 else period / 60)
    if p.tau > 0 and dt > p.tau / 20 * (1 + 1e-12):
        raise ConfigError("dt must not exceed tau/20")
    if not 0 <= cfg.discard < 1:
        raise ConfigError("discard must lie in [0, 1)")
    hist = dde.random_history(cfg.seed, cfg.amplitude, p.omega, cfg.bias)
    t_end = cfg.periods * period
    try:
        if cfg.sweep_a is not None:
            a_vals = np.linspace(cfg.sweep_a[0], cfg.sweep_a[1], cfg.sweep_n)
            traj = dde.integrate(p, hist, t_end, dt, a_values=a_vals)
            rows = ["a,rms,period,phase_deg,classification"]
            for k, a in enumerate(a_vals):
                m = dde.measure_orbit(traj.member(k), cfg.discard)
                rows.append(f"{float(a)!r},{m.rms_amplitude!r},{m.period!r},"
                            f"{m.phase_shift_deg!r},{m.classification.value}")
            em.emit("simulate_sweep.csv", "\n".join(rows) + "\n")
            return EXIT_OK
        traj = dde.integrate(p, hist, t_end, dt)
    except dde.BlowUpError as exc:
        raise NumericalError(str(exc)) from None
    meas = dde.measure_orbit(traj, cfg.discard)
    em.emit("trajectory.csv", traj.to_csv())
    em.emit("measures.json", dump_json({"params": p.as_dict(), "seed": cfg.seed,
                                        "measures": meas.as_dict()}))
    print(f"{meas.classification.value} rms={meas.rms_amplitude:.6g}")
    return EXIT_OK


def _modes(text: str):
    out = []
    for name in text.split(","):
        name = name.strip()
        try:
            out.append(ModeKind(name))
        except ValueError:
            raise ConfigError(f"unknown mode '{name}'") from None
    return out


def _branch_exports(em: Emitter, name: str, br: cont.Branch):
    em.emit(f"branch_{name}.csv", br.to_csv())
    em.emit(f"branch_{name}_events.json", br.events_json())


def cmd_continue(cfg: RunConfig, em: Emitter) -> int:
    p = cfg.params
    if "tau" not in cfg.explicit_params:
        p = p.replace(tau=0.1926)
    a_lo, a_hi = cfg.a_range
    if not a_hi > a_lo:
        raise ConfigError("a_range must have positive width")
    partial = False
    if cfg.hopf_curves:
        hh = cm.double_hopf_points(p, a_range=cfg.a_window, tau_range=cfg.tau_window)
        for mode in ModeKind:
            for direction in (1, -1):
                start = (hh[0].a_c, hh[0].tau_c) if hh else (p.a, p.tau)
                br = cont.continue_hopf_curve(mode, start, p, cfg.a_window, cfg.tau_window,
                                              direction=direction)
                rows = ["a,tau,nu"] + [f"{a!r},{t!r},{n!r}" for a, t, n in
                                       (pt.solution for pt in br.points)]
                tag = f"hopf_{mode.value}_{'fwd' if direction > 0 else 'bwd'}"
                em.emit(f"{tag}.csv", "\n".join(rows) + "\n")
                em.emit(f"{tag}_events.json", br.events_json())
                partial |= br.status != "complete"
    q = p.replace(a=a_lo)
    branches = {}
    for mode in _modes(cfg.modes):
        try:
            orbit = cont.periodic_orbit_from_hopf(q, mode)
        except (RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
            raise NumericalError(f"no Hopf start for {mode.value}: {exc}") from None
        br = cont.continue_orbit_branch(orbit, "a", (orbit.params.a - 1e-3, a_hi),
                                        max_points=cfg.max_points, label=mode.value)
        branches[mode] = br
        _branch_exports(em, mode.value, br)
        partial |= br.status != "complete"
    if cfg.switch:
        partial |= _switch_all(cfg, em, branches, (a_lo, a_hi))
    if cfg.tau_grid is not None:
        taus = np.linspace(cfg.tau_grid[0], cfg.tau_grid[1], cfg.tau_grid_n)
        recs = cont.trace_orbit_bifurcations(p, ModeKind.IN_PHASE, taus, p.a if "a" in
                                             cfg.explicit_params else -0.686, a_hi)
        rows = ["tau,kind,a"] + [f"{r['tau']!r},{r['kind']},{r['a']!r}" for r in recs]
        em.emit("orbit_bifurcations.csv", "\n".join(rows) + "\n")
    return EXIT_PARTIAL if partial else EXIT_OK


def _switch_all(cfg: RunConfig, em: Emitter, branches: dict, rng) -> bool:
    """Switch at every pitchfork of the symmetric branches.

    A switched branch ends where it rejoins a symmetric branch; pitchforks
    already reached that way are skipped, so each arc is computed once (with
    both signs, which are swap images of each other).
    """
    closed = []
    partial = False
    for mode, br in branches.items():
        pfs = [e for e in br.events if e.kind is cont.EventKind.PITCHFORK]
        for k, pf in enumerate(pfs):
            a_pf = pf.params["a"]
            if any(m is mode and abs(a_pf - a) < 1e-2 for m, a in closed):
                continue
            for sign in (1, -1):
                try:
                    sw = cont.detect_and_switch_pitchfork(br, pf, sign=sign, rng=rng,
                                                          max_points=cfg.max_points)
                except (RuntimeError, np.linalg.LinAlgError) as exc:
                    print(f"branch switching at {mode.value} a={a_pf:.6g} failed: {exc}")
                    partial = True
                    continue
                _branch_exports(em, f"switched_{mode.value}_{k}_{'plus' if sign > 0 else 'minus'}", sw)
                partial |= sw.status != "complete"
                if sign > 0 and sw.points:
                    m = sw.points[-1].measures
                    end = ModeKind.IN_PHASE if m["sym_in"] <= m["sym_anti"] else ModeKind.ANTI_PHASE
                    closed.append((end, sw.points[-1].params.a))
    return partial


def _torus_start(p: HkbParams, mesh: tc.TorusMesh, a_hi: float):
    orbit = cont.periodic_orbit_from_hopf(p.replace(a=-0.69), ModeKind.IN_PHASE)
    br = cont.continue_orbit_branch(orbit, "a", (orbit.params.a - 1e-3, a_hi), max_points=60,
                                    stop=lambda pt: pt.measures.get("n_unstable", 1) == 0)
    ev = [e for e in br.events if e.kind is cont.EventKind.TORUS]
    if not ev:
        raise NumericalError("no torus bifurcation on the in-phase branch")
    at = tc.locate_torus_point(br, ev[0])
    return tc.torus_init_from_bifurcation(at, mesh=mesh)


def cmd_torus(cfg: RunConfig, em: Emitter) -> int:
    p = cfg.params
    if "tau" not in cfg.explicit_params:
        p = p.replace(tau=0.1926)
    mesh = tc.TorusMesh(*cfg.mesh)
    try:
        start = _torus_start(p, mesh, cfg.a_range[1])
    except (RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        raise NumericalError(f"torus start failed: {exc}") from None
    em.emit("torus_start.csv", start.to_csv())
    em.emit("torus_start.json", start.metadata_json())
    br = tc.continue_torus(start, "a", 1, cfg.a_range, max_points=cfg.max_points,
                           lock_tol=cfg.lock_tol, pass_locking=cfg.pass_locking)
    em.emit("torus_branch.csv", br.to_csv())
    em.emit("torus_branch_events.json", br.events_json())
    last = br.points[-1]
    em.emit("torus_last.csv", last.to_csv())
    em.emit("torus_last.json", last.metadata_json())
    print(f"torus branch {br.status}: {len(br.points)} points, last ratio {last.frequency_ratio:.6f}")
    code = EXIT_OK
    locked = any(e.kind is cont.EventKind.LOCKING for e in br.events)
    if cfg.to_locking and not locked:
        code = EXIT_PARTIAL
    if cfg.locking_delta is not None:
        seed = br.points[-1]
        lb = tc.continue_near_locking(seed, cfg.locking_delta, max_points=cfg.locking_points)
        em.emit("locking_branch.csv", lb.to_csv())
        if lb.status != "complete":
            code = EXIT_PARTIAL
    return code


def cmd_verify(cfg: RunConfig, em: Emitter) -> int:
    """Fast self-checks: tables, chart anchor and resonance screen."""
    p = HkbParams()
    checks = {}
    points, forms = compute_tables(p)
    _, ok = table_report(points, forms, cfg.tolerance or 1e-3, True)
    checks["tables"] = ok
    chart = ls.stability_chart("a-tau", ((-1.0, 0.0), (0.0, 0.5)), (40, 40), p, 200)
    rep = verify_chart(chart, 20, cfg.seed)
    checks["chart"] = rep["agree"] == rep["checked"]
    checks["resonance"] = all(cm.resonance_check(hh.nu_i, hh.nu_a, 1000) is None for hh in points)
    lines = [f"{name}: {'PASS' if ok else 'FAIL'}" for name, ok in sorted(checks.items())]
    em.emit("verify_report.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK if all(checks.values()) else EXIT_NUMERICAL


COMMANDS = {"chart": cmd_chart, "tables": cmd_tables, "unfold": cmd_unfold,
            "simulate": cmd_simulate, "continue": cmd_continue, "torus": cmd_torus,
            "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hkb-delay", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None, metavar="PATH")
        sp.add_argument("--out", default=None, metavar="DIR")
        sp.add_argument("--format", default=None, choices=("csv", "json", "svg"))
        sp.add_argument("--seed", default=None, type=int)
        sp.add_argument("--tolerance", default=None, type=float)
        sp.add_argument("--verify", action="store_true", default=None)
        for key in PARAM_KEYS:
            sp.add_argument(f"--{key}", dest=f"p_{key}", default=None, type=float)
        for key, (conv, _, help_) in OPTIONS[name].items():
            flag = "--" + key.replace("_", "-")
            if conv is _bool:
                sp.add_argument(flag, dest=key, action=argparse.BooleanOptionalAction,
                                default=None, help=help_)
            elif conv in (_float_pair, _int_pair):
                sp.add_argument(flag, dest=key, nargs=2, default=None, help=help_)
            elif conv is _int_triple:
                sp.add_argument(flag, dest=key, nargs=3, default=None, help=help_)
            else:
                sp.add_argument(flag, dest=key, default=None, help=help_)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = build_config(args)
        em = Emitter(cfg)
        return COMMANDS[args.command](cfg, em)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, RuntimeError, ArithmeticError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
