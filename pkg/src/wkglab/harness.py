"""Decay regression, bootstrap monitoring, run orchestration and the command-line interface."""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .fields import CartesianStack, GridSpec, InitialData, make_initial_data
from .kg_ode import RayData
from .norms import (EnergyEstimateReport, EnergyRecord, HardyReport, HypField, energy_estimate_check,
                    energy_m, field_energies, hardy_check, sobolev_check, write_energy_csv,
                    write_inequality_csv)
from .solver import (BoostTrackingReport, Evolver, HyperboloidSampler, ModelParams, NumericalAbort,
                     RayPointSampler, RunConfig, RunResult, T0, boost_tracking_residual,
                     config_from_mapping, parse_config)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_ABORT = 0, 1, 2, 3
DECAY_WINDOW = (4.0, 30.0)


# decay fits ---------------------------------------------------------------------------

@dataclass
class DecayFit:
    """value ~ A s^p by least squares in log-log over the fit window."""
    label: str
    s: np.ndarray
    values: np.ndarray
    p: float
    A: float
    window: tuple
    residual: float  # rms of the log residuals
    excluded: int  # nonpositive or non-finite samples dropped from the window


def fit_decay(s, values, label: str = "", s_min: float = 5.0, s_max: float = np.inf) -> DecayFit:
    s = np.asarray(s, float).ravel()
    v = np.asarray(values, float).ravel()
    if s.shape != v.shape:
        raise ValueError("s and values must have the same length")
    win = (s >= s_min) & (s <= s_max)
    good = win & np.isfinite(v) & (v > 0)
    excluded = int(np.sum(win & ~good))
    if good.sum() < 6:
        raise ValueError(f"need at least 6 positive samples with s in [{s_min}, {s_max}]")
    sw, vw = s[good], v[good]
    if sw.max() < 2.0 * sw.min():
        raise ValueError("samples must span at least one dyad in s")
    x, y = np.log(sw), np.log(vw)
    xm = x.mean()
    p = float(np.sum((x - xm) * (y - y.mean())) / np.sum((x - xm) ** 2))
    logA = float(y.mean() - p * xm)
    res = y - (logA + p * x)
    return DecayFit(label, sw, vw, p, math.exp(logA), (float(sw.min()), float(sw.max())),
                    float(np.sqrt(np.mean(res**2))), excluded)


def geometric_resample(t, f, lo: float, hi: float, n: int = 120):
    """Interpolate a time series onto a geometric grid so each dyad weighs the same."""
    tg = np.geomspace(lo, hi, n)
    return tg, np.interp(tg, t, f)


# tracked quantities and the bootstrap monitor -------------------------------------------

@dataclass(frozen=True)
class Tracked:
    """d_t^k L^J of u or v; ``base`` is the sampler field name."""
    label: str
    which: str
    base: str
    k: int
    boosts: int

    @property
    def order(self) -> int:
        return self.k + self.boosts


def tracked_quantities(mode: str, N_track: int) -> list[Tracked]:
    """Radial mode: d_t^k, k <= N_track.  full3d: base fields, one d_t and single boosts."""
    out = []
    for w in ("u", "v"):
        if mode == "radial1d":
            for k in range(N_track + 1):
                out.append(Tracked(w if k == 0 else f"dt{k}{w}", w, w, k, 0))
        else:
            for k in range(min(N_track, 1) + 1):
                out.append(Tracked(w if k == 0 else f"dt{k}{w}", w, w, k, 0))
            if N_track >= 1:
                out += [Tracked(f"L{a}{w}", w, f"L{a}{w}", 0, 1) for a in (1, 2, 3)]
    return out


# (family, field, base exponent, low-order only)
FAMILIES = (("wave/high", "u", 0.0, False), ("wave/low", "u", 0.0, True),
            ("KG/high", "v", 0.5, False), ("KG/low", "v", 0.0, True))


def family_target(family: str, boosts: int, delta: float) -> float:
    """Target growth exponent: k delta, 0, 1/2 + k delta, k delta with k the boost count."""
    if family == "wave/low":
        return 0.0
    base = 0.5 if family == "KG/high" else 0.0
    return base + boosts * delta


def _family_members(tracked, family_field, low, N_track):
    return [q for q in tracked if q.which == family_field and (not low or q.order <= N_track - 2)]


def _energy_of(rec: EnergyRecord, q: Tracked) -> float:
    try:
        fe = rec.fields[q.label]
    except KeyError:
        raise ValueError(f"record at s = {rec.s} lacks tracked field {q.label!r}") from None
    return fe.E_m if q.which == "u" else fe.E_mc


@dataclass
class BootstrapRow:
    family: str
    label: str
    target: float
    max_ratio: float
    s_at_max: float


@dataclass
class BootstrapReport:
    C1: float
    calibrated: bool
    eps: float
    rows: list
    family_max: dict
    passed: dict

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())


def _ratio(num, den):
    if den > 0:
        return num / den
    return 0.0 if num == 0 else np.inf


def monitor_bootstrap(records, tracked, eps: float, delta: float, N_track: int,
                      C1: float | None = None, window=DECAY_WINDOW, s_cal: float = 4.0,
                      headroom: float = 2.0) -> BootstrapReport:
    """E^{1/2} / (C1 eps s^target) per family and tracked field over the s window.

    Wave families use E_m of d^I L^J u, KG families E_{m,c} of d^I L^J v.
    Without an explicit C1 it is calibrated at s_cal as ``headroom`` times the
    largest normalized energy there.  With C1 fixed the ratios are monotone
    in the energies.
    """
    recs = sorted((r for r in records if window[0] - 1e-9 <= r.s <= window[1] + 1e-9), key=lambda r: r.s)
    members = {fam: _family_members(tracked, w, low, N_track) for fam, w, _, low in FAMILIES}
    calibrated = C1 is None
    if calibrated:
        if recs:
            rc = min(recs, key=lambda r: abs(r.s - s_cal))
            norm = [_ratio(math.sqrt(_energy_of(rc, q)), eps * rc.s ** family_target(fam, q.boosts, delta))
                    for fam, qs in members.items() for q in qs]
            C1 = headroom * max(norm, default=0.0)
        if not C1 or not np.isfinite(C1):
            C1 = 1.0
    rows, fmax, passed = [], {}, {}
    for fam, qs in members.items():
        best = 0.0
        for q in qs:
            tgt = family_target(fam, q.boosts, delta)
            r = [_ratio(math.sqrt(_energy_of(rec, q)), C1 * eps * rec.s**tgt) for rec in recs]
            i = int(np.argmax(r)) if r else 0
            m = float(r[i]) if r else 0.0
            rows.append(BootstrapRow(fam, q.label, tgt, m, float(recs[i].s) if recs else float("nan")))
            best = max(best, m)
        fmax[fam] = best
        passed[fam] = best <= 1.0
    return BootstrapReport(float(C1), calibrated, eps, rows, fmax, passed)


def bootstrap_ratio_series(records, q: Tracked, family: str, C1: float, eps: float, delta: float):
    """(s, ratio) of one tracked field in one family, for plots and tests."""
    tgt = family_target(family, q.boosts, delta)
    s = np.array([r.s for r in records])
    return s, np.array([_ratio(math.sqrt(_energy_of(r, q)), C1 * eps * r.s**tgt) for r in records])


# run orchestration ---------------------------------------------------------------------

@dataclass
class RunDiagnostics:
    config: RunConfig
    tracked: list
    result: RunResult | None = None
    abort: NumericalAbort | None = None
    records: list = field(default_factory=list)
    sobolev: list = field(default_factory=list)  # dict rows
    scan: list = field(default_factory=list)  # dict rows of the (s/t)-weighted v scan
    forms_spread: float = 0.0  # max relative disagreement of the three E_m forms
    coercivity: tuple = (1.0, 1.0)  # min and max of E_gc / E_mc over emitted hyperboloids
    hardy: HardyReport | None = None
    flux: EnergyEstimateReport | None = None
    boost: BoostTrackingReport | None = None
    u_fields: list = field(default_factory=list)
    seconds: float = 0.0


def default_s_levels(mode: str, t_end: float, dt: float, step: float | None = None) -> np.ndarray:
    """Hyperboloids whose cap inside K, reaching t = (s^2+1)/2, closes before t_end."""
    step = (0.5 if mode == "radial1d" else 1.0) if step is None else step
    s_max = math.sqrt(max(2.0 * (t_end - 8 * dt) - 1.0, 4.0))
    return np.arange(2.0, s_max + 1e-9, step)


def wave_source(params: ModelParams, hv: HypField) -> np.ndarray:
    """P^{ab} d_a v d_b v + R v^2 on the hyperboloid nodes."""
    d = [hv.ft] + list(hv.cartesian())
    P = params.P
    out = params.R * hv.f**2
    for a in range(4):
        for b in range(4):
            if P[a, b] != 0:
                out = out + P[a, b] * d[a] * d[b]
    return out


def _rel_spread(vals) -> float:
    vals = np.asarray(vals, float)
    m = np.max(np.abs(vals))
    return float((vals.max() - vals.min()) / m) if m > 0 else 0.0


class _Collector:
    """on_complete callback turning each finished hyperboloid into diagnostics."""

    def __init__(self, diag: RunDiagnostics, params: ModelParams, window=(0.0, 0.9)):
        self.d, self.p, self.window = diag, params, window
        self.sources: list = []
        self.cmin, self.cmax = np.inf, -np.inf

    def __call__(self, smp) -> bool:
        p, d = self.p, self.d
        u = smp.data["u"][0]
        h = p.H.reshape((4, 4) + (1,) * u.ndim) * u if np.any(p.H) else None
        fields = {}
        for q in d.tracked:
            hf = HypField.from_sample(smp, q.base, q.k)
            fields[q.label] = field_energies(hf, p.c if q.which == "v" else 0.0,
                                             h if q.which == "v" else None)
        d.records.append(EnergyRecord(smp.s, fields))
        fv = fields["v"]
        ratio = fv.E_gc / fv.E_mc if fv.E_mc > 0 else 1.0
        self.cmin, self.cmax = min(self.cmin, ratio), max(self.cmax, ratio)
        d.coercivity = (self.cmin, self.cmax)
        hu, hv = HypField.from_sample(smp, "u"), HypField.from_sample(smp, "v")
        for nm, hf in (("u", hu), ("v", hv)):
            d.forms_spread = max(d.forms_spread, _rel_spread([energy_m(hf, 0.0, fm) for fm in ("i", "ii", "iii")]))
            rep = sobolev_check(hf)
            d.sobolev.append({"s": smp.s, "field": nm, "lhs": rep.lhs, "rhs": rep.rhs, "ratio": rep.ratio})
        self.sources.append(wave_source(p, hv))
        d.u_fields.append(HypField(hu.grid, hu.s, hu.f.copy(), hu.ft.copy()))
        d.scan.append(_weighted_scan(hv, hu, p, smp, self.window))
        return False  # the raw sample is not kept


def _weighted_scan(hv: HypField, hu: HypField, p: ModelParams, smp, window) -> dict:
    """sup over r/t in the window of |v| (s/t)^{-2+7 delta} s^{3/2} and companions."""
    r = hv.grid.radius()
    rt = r / hv.t
    m = hv.inside & (rt >= window[0]) & (rt <= window[1])
    env = np.sqrt(hv.f**2 + (hv.ft / p.c) ** 2)
    w = env * (hv.s / hv.t) ** (-2.0 + 7.0 * p.delta) * hv.s**1.5
    row = {"s": hv.s, "v_weighted": float(np.max(w[m])) if m.any() else 0.0,
           "sup_t_u": float(np.max((hv.t * np.abs(hu.f))[hv.inside])) if hv.inside.any() else 0.0}
    for a in (1, 2, 3):
        key = f"L{a}u"
        if key in smp.data:
            row[f"sup_t_{key}"] = float(np.max((hv.t * np.abs(smp.data[key][0]))[hv.inside]))
    return row


def run_diagnostics(cfg: RunConfig, s_levels=None, data: InitialData | None = None,
                    extra_samplers: Sequence = (), track_boosts: bool | None = None) -> RunDiagnostics:
    """Evolve ``cfg`` and collect energies, inequality checks and scans on hyperboloids.

    A numerical abort is recorded in ``abort`` instead of raised.
    """
    t0 = time.perf_counter()
    p, grid = cfg.params, cfg.grid
    full = grid.mode == "full3d"
    boosts = full if track_boosts is None else track_boosts
    tracked = tracked_quantities(grid.mode, p.N_track if not full or boosts else 0)
    if full and not boosts:
        tracked = [q for q in tracked if q.boosts == 0]
    diag = RunDiagnostics(cfg, tracked)
    if s_levels is None:
        s_levels = default_s_levels(grid.mode, cfg.t_end, grid.dt)
    names = sorted({q.base for q in tracked} | {"u", "v"})
    nderiv = max(q.k for q in tracked) + 1
    col = _Collector(diag, p)
    samplers = [HyperboloidSampler(grid, s, names, nderiv, on_complete=col) for s in s_levels]
    if data is None:
        data = make_initial_data(grid, cfg.profile, p.eps)
    try:
        ev = Evolver(p, grid, data, samplers + list(extra_samplers), track_boosts=boosts,
                     checkpoint_every=cfg.checkpoint_every, outdir=cfg.outdir)
        diag.result = ev.run(cfg.t_end)
    except NumericalAbort as exc:
        diag.abort = exc
        diag.seconds = time.perf_counter() - t0
        return diag
    if len(diag.u_fields) >= 2:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            diag.hardy = hardy_check(diag.u_fields)
            diag.flux = energy_estimate_check(diag.u_fields, col.sources)
    if boosts and full:
        diag.boost = boost_tracking_residual(ev, 1)
    diag.seconds = time.perf_counter() - t0
    return diag


def calibrated_config(eps: float = 1e-2, dr: float = 0.04, s_max: float = 30.0,
                      profile: str = "bump") -> RunConfig:
    """Radial coupled run whose box holds every hyperboloid cap up to s_max."""
    t_end = (s_max**2 + 1.0) / 2.0 + 1.5
    L = math.ceil(t_end + 16.0)
    n = int(round(L / dr)) + 1
    return RunConfig("radial1d", n, float(L), 0.5, t_end, profile, params=ModelParams.calibrated(eps))


def smoke_config(n: int = 96, t_end: float = 20.0, L: float = 26.5, eps: float = 1e-2) -> RunConfig:
    """Full3d calibrated run; L leaves the support plus the guard band inside the box."""
    return RunConfig("full3d", n, L, 0.5, t_end, "bump", params=ModelParams.calibrated(eps))


# refined decay ---------------------------------------------------------------------------

@dataclass
class DecayCheck:
    fit: DecayFit
    target: float
    tol: float
    kind: str  # "eq": |p - target| <= tol, "le": p <= target + tol

    @property
    def passed(self) -> bool:
        if self.kind == "eq":
            return abs(self.fit.p - self.target) <= self.tol
        return self.fit.p <= self.target + self.tol


@dataclass
class DecayReport:
    checks: list
    shifted: list = field(default_factory=list)  # informational fits against t - t_data

    def get(self, label: str) -> DecayCheck:
        for c in self.checks:
            if c.fit.label == label:
                return c
        raise KeyError(label)

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)


def central_series(diag: RunDiagnostics, window=DECAY_WINDOW, n: int = 120, smooth: float = 0.1) -> dict:
    """Central-ray |u|, KG envelope of v and of perp v = d_t v, on a geometric t grid.

    The series are low-passed with a Gaussian of width ``smooth`` (time units)
    before differencing: grid-scale leapfrog modes focus at the origin and
    would dominate d_t v, while the physical content sits near frequency c.
    """
    res, c = diag.result, diag.config.params.c
    t = res.central_t
    sig = smooth / (t[1] - t[0]) if smooth > 0 and len(t) > 1 else 0.0
    lp = (lambda f: gaussian_filter1d(f, sig, mode="nearest")) if sig > 0 else (lambda f: f)
    u, v = lp(res.central_u), lp(res.central_v)
    vt = np.gradient(v, t)
    vtt = np.gradient(vt, t)
    tg, au = geometric_resample(t, np.abs(u), *window, n)
    _, ev = geometric_resample(t, np.sqrt(v**2 + (vt / c) ** 2), *window, n)
    _, ep = geometric_resample(t, np.sqrt(vt**2 + (vtt / c) ** 2), *window, n)
    return {"t": tg, "u": au, "v_env": ev, "perpv_env": ep}


def _fit_or_nan(s, v, label, s_min) -> DecayFit:
    """A failed fit (too few positive samples) is reported with p = nan, which fails its check."""
    try:
        return fit_decay(s, v, label, s_min)
    except ValueError:
        return DecayFit(label, np.asarray(s, float), np.asarray(v, float), float("nan"), float("nan"),
                        (s_min, float("inf")), float("nan"), len(v))


def refined_decay_suite(diag: RunDiagnostics, window=DECAY_WINDOW, s_min: float = 5.0) -> DecayReport:
    """Exponent fits along the central ray and on hyperboloids over the s window.

    Central ray (x = 0, s = t): |u| against t^{-1}, the KG envelopes of v and
    perp v against s^{-3/2}.  Hyperboloids: the (s/t)-weighted v scan must stay
    bounded, sup t|L^J u| may grow at most like s^{k delta}, and the low-order
    wave energies may not grow (exponent at most 0.1).
    """
    p = diag.config.params
    checks = []
    if diag.result is not None and len(diag.result.central_t) and diag.result.central_t[-1] >= window[1]:
        cs = central_series(diag, window)
        checks.append(DecayCheck(_fit_or_nan(cs["t"], cs["u"], "u_center", s_min), -1.0, 0.2, "eq"))
        checks.append(DecayCheck(_fit_or_nan(cs["t"], cs["v_env"], "v_center", s_min), -1.5, 0.15, "eq"))
        checks.append(DecayCheck(_fit_or_nan(cs["t"], cs["perpv_env"], "perpv_center", s_min), -1.5, 0.15, "eq"))
        # same samples against the time elapsed since the data surface
        shifted = [_fit_or_nan(cs["t"] - T0, cs[k], f"{k}_shifted", s_min - T0) for k in ("u", "v_env", "perpv_env")]
    else:
        shifted = []
    rows = [r for r in diag.scan if window[0] - 1e-9 <= r["s"] <= window[1] + 1e-9]
    if len(rows) >= 6:
        s = np.array([r["s"] for r in rows])
        checks.append(DecayCheck(_fit_or_nan(s, [r["v_weighted"] for r in rows], "v_weighted_scan", s_min),
                                 0.0, 0.15, "le"))
        for key in [k for k in rows[0] if k.startswith("sup_t_")]:
            kb = 1 if key.startswith("sup_t_L") else 0
            checks.append(DecayCheck(_fit_or_nan(s, [r[key] for r in rows], key, s_min),
                                     kb * p.delta, 0.2, "le"))
        recs = [r for r in diag.records if window[0] - 1e-9 <= r.s <= window[1] + 1e-9]
        for q in diag.tracked:
            if q.which == "u" and q.order <= p.N_track - 2:
                E = [math.sqrt(r.fields[q.label].E_m) for r in recs]
                checks.append(DecayCheck(_fit_or_nan(s, E, f"E_low_{q.label}", s_min), 0.0, 0.1, "le"))
    return DecayReport(checks, shifted)


# rays --------------------------------------------------------------------------------------

class _RayRecorder:
    """Evaluator that records requested points and returns zero data."""

    def __init__(self):
        self.calls = []

    def __call__(self, T, X):
        T = np.atleast_1d(np.asarray(T, float))
        X = np.asarray(X, float).reshape(3, -1)
        self.calls.append((T.copy(), X.copy()))
        n = len(T)
        z = np.zeros(n)
        return RayData(CartesianStack(z, np.zeros((4, n)), np.zeros((4, 4, n))), np.zeros((4, 4, n)), z)


class _RayReplay:
    """Evaluator answering the recorded calls, in order, from sampled solver data."""

    def __init__(self, calls, stacks, H):
        self.calls, self.st, self.H = calls, stacks, H
        self.offsets = np.cumsum([0] + [len(c[0]) for c in calls])
        self.i = 0

    def __call__(self, T, X):
        T0, X0 = self.calls[self.i]
        if not (np.allclose(np.atleast_1d(T), T0) and np.allclose(np.asarray(X).reshape(3, -1), X0)):
            raise RuntimeError("ray task requested different points on replay")
        sl = slice(self.offsets[self.i], self.offsets[self.i + 1])
        self.i += 1
        st = self.st
        r = X0[0]
        stack = CartesianStack.from_radial(r, st["v"][sl], st["v_t"][sl], st["v_r"][sl],
                                           st["v_tt"][sl], st["v_tr"][sl], st["v_rr"][sl])
        u = st["u"][sl]
        h = self.H[:, :, None] * u[None, None, :] if np.any(self.H) else None
        return RayData(stack, h, np.zeros_like(u))


def ray_study(params: ModelParams, grid: GridSpec, tasks: Sequence[Callable], data: InitialData | None = None,
              t_margin: float = 0.5) -> list:
    """Run each task (a callable taking an evaluator) against solver data along rays.

    Tasks run once against a recorder to learn their points, then the solver
    samples those points (radial mode, positive x^1 axis) and the tasks are
    replayed on the sampled v stack with h = u H and f = 0.
    """
    recorders = []
    for task in tasks:
        rec = _RayRecorder()
        task(rec)
        recorders.append(rec)
    calls = [c for rec in recorders for c in rec.calls]
    T = np.concatenate([c[0] for c in calls])
    X = np.concatenate([c[1] for c in calls], axis=1)
    if np.any(np.abs(X[1:]) > 0) or np.any(X[0] < 0):
        raise ValueError("ray points must lie on the positive x^1 axis")
    rs = RayPointSampler(grid, T, X[0])
    Evolver(params, grid, data, [rs]).run(float(T.max()) + t_margin)
    stacks = rs.stacks()
    out, pos, start = [], 0, 0
    for task, rec in zip(tasks, recorders):
        k = len(rec.calls)
        mine = calls[pos:pos + k]
        stop = start + sum(len(c[0]) for c in mine)
        out.append(task(_RayReplay(mine, {key: val[start:stop] for key, val in stacks.items()}, params.H)))
        pos, start = pos + k, stop
    return out


# output ------------------------------------------------------------------------------------

def _write_rows(path, rows):
    if rows:
        write_inequality_csv(rows, path)


def write_run_outputs(diag: RunDiagnostics, outdir: str, decay: DecayReport | None = None,
                      boot: BootstrapReport | None = None) -> None:
    os.makedirs(outdir, exist_ok=True)
    if diag.records:
        write_energy_csv(diag.records, os.path.join(outdir, "energies.csv"))
    _write_rows(os.path.join(outdir, "sobolev.csv"), diag.sobolev)
    _write_rows(os.path.join(outdir, "scan.csv"), diag.scan)
    if diag.hardy is not None:
        h = diag.hardy
        _write_rows(os.path.join(outdir, "hardy.csv"),
                    [{"s": float(s), "static_lhs": float(a), "static_rhs": float(b), "lhs": float(c),
                      "rhs": float(d)} for s, a, b, c, d in zip(h.s, h.static_lhs, h.static_rhs, h.lhs, h.rhs)])
    if diag.result is not None and len(diag.result.central_t):
        r = diag.result
        _write_rows(os.path.join(outdir, "central.csv"),
                    [{"t": float(a), "u": float(b), "v": float(c)}
                     for a, b, c in zip(r.central_t, r.central_u, r.central_v)])
    if boot is not None:
        _write_rows(os.path.join(outdir, "bootstrap.csv"),
                    [{"family": b.family, "field": b.label, "target": b.target, "max_ratio": b.max_ratio,
                      "s_at_max": b.s_at_max} for b in boot.rows])
    if decay is not None and decay.checks:
        _write_rows(os.path.join(outdir, "decay.csv"),
                    [{"quantity": c.fit.label, "p": c.fit.p, "A": c.fit.A, "target": c.target, "tol": c.tol,
                      "kind": c.kind, "residual": c.fit.residual, "excluded": c.fit.excluded,
                      "passed": c.passed} for c in decay.checks]
                    + [{"quantity": f.label, "p": f.p, "A": f.A, "target": "", "tol": "", "kind": "info",
                        "residual": f.residual, "excluded": f.excluded, "passed": ""} for f in decay.shifted])
    write_plot_script(outdir)


PLOT_SCRIPT = '''"""Plots for the CSV files in this directory (needs matplotlib)."""
import os

import matplotlib.pyplot as plt

here = os.path.dirname(os.path.abspath(__file__))


def load(name):
    path = os.path.join(here, name)
    if not os.path.exists(path):
        return None
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return {k: [float(r[k]) for r in rows if r[k] not in ("", "True", "False")] for k in rows[0]} if rows else None


e = load("energies.csv")
if e:
    plt.figure()
    for k in e:
        if k.endswith(":E_m") or k.endswith(":E_mc"):
            plt.loglog(e["s"], e[k], label=k)
    plt.xlabel("s")
    plt.legend(fontsize=6)
    plt.savefig(os.path.join(here, "energies.png"), dpi=120)
c = load("central.csv")
if c:
    plt.figure()
    plt.loglog(c["t"], [abs(x) for x in c["u"]], label="|u(t,0)|")
    plt.loglog(c["t"], [abs(x) for x in c["v"]], label="|v(t,0)|")
    plt.xlabel("t")
    plt.legend()
    plt.savefig(os.path.join(here, "central.png"), dpi=120)
'''


def write_plot_script(outdir: str) -> str:
    path = os.path.join(outdir, "plot.py")
    with open(path, "w") as fh:
        fh.write(PLOT_SCRIPT)
    return path


def write_summary(outdir: str, command: str, checks: dict, extra: dict | None = None) -> dict:
    os.makedirs(outdir, exist_ok=True)
    summ = {"command": command, "passed": all(checks.values()), "checks": checks}
    summ.update(extra or {})
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(summ, fh, indent=2, default=float)
    return summ


# command-line interface ---------------------------------------------------------------------

_FLAG_KEYS = {"mode": "mode", "n": "n", "L": "L", "cfl": "cfl", "t_end": "t_end", "eps": "eps", "c": "c",
              "delta": "delta", "R": "R", "profile": "profile", "outdir": "outdir", "N_track": "N_track",
              "C1": "C1", "checkpoint_every": "checkpoint_every"}


def _config_from_args(args) -> RunConfig:
    d = {}
    if args.config:
        with open(args.config) as fh:
            d.update(parse_config(fh.read()))
    for k in _FLAG_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            d[k] = v
    for item in args.set or []:
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        d[k.strip()] = v.strip()
    return config_from_mapping(d)


def _print_checks(checks: dict):
    for k, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {k}")


def cmd_solve(args) -> int:
    cfg = _config_from_args(args)
    outdir = cfg.outdir or args.out or "wkglab_run"
    s_levels = None
    if args.s_step is not None:
        s_levels = default_s_levels(cfg.mode, cfg.t_end, cfg.grid.dt, args.s_step)
    diag = run_diagnostics(cfg, s_levels)
    if diag.abort is not None:
        print(f"numerical abort: {diag.abort}", file=sys.stderr)
        write_summary(outdir, "solve", {"no_abort": False}, {"abort": diag.abort.kind})
        return EXIT_ABORT
    p = cfg.params
    boot = monitor_bootstrap(diag.records, diag.tracked, p.eps, p.delta, p.N_track, p.C1)
    decay = refined_decay_suite(diag) if args.check_decay else None
    checks = {
        "energy_forms_agree": diag.forms_spread <= 1e-8,
        "coercivity": 0.5 <= diag.coercivity[0] and diag.coercivity[1] <= 2.0,
        "sobolev_finite": all(np.isfinite(r["ratio"]) for r in diag.sobolev),
        "hardy": diag.hardy is None or bool(np.all(diag.hardy.lhs <= diag.hardy.rhs * (1 + 1e-12))),
        # free runs have zero source integral, so allow 1% discretization drift
        "energy_inequality": diag.flux is None or diag.flux.slack >= -0.01 * float(np.max(diag.flux.ineq_lhs)),
    }
    for fam, ok in boot.passed.items():
        checks[f"bootstrap {fam}"] = ok
    if decay is not None:
        if not decay.checks:
            checks["decay window covered"] = False
        for c in decay.checks:
            checks[f"decay {c.fit.label}"] = c.passed
    if diag.boost is not None:
        checks["boost_tracking"] = diag.boost.defect <= 1e-10 * max(diag.boost.scale, 1e-300)
    write_run_outputs(diag, outdir, decay, boot)
    maxE = max((max(fe.E_mc for fe in r.fields.values()) for r in diag.records), default=0.0)
    print(f"mode={cfg.mode} n={cfg.n} t={diag.result.t:.4g} steps={diag.result.steps} "
          f"hyperboloids={len(diag.records)} max_energy={maxE:.6e} C1={boot.C1:.4g} "
          f"seconds={diag.seconds:.1f}")
    _print_checks(checks)
    write_summary(outdir, "solve", checks, {"seed": args.seed, "max_energy": maxE, "C1": boot.C1,
                                            "seconds": diag.seconds})
    return EXIT_OK if all(checks.values()) else EXIT_FAIL


def cmd_kernel_sweep(args) -> int:
    from .wave_kernel import SWEEP_MU, SWEEP_NU, kernel_sweep, sweep_points, write_sweep_csv
    pts = sweep_points(mus=args.mu or SWEEP_MU, nus=args.nu or SWEEP_NU)
    rep = kernel_sweep(pts, epsrel=args.epsrel, workers=args.workers)
    os.makedirs(args.out, exist_ok=True)
    write_sweep_csv(rep, os.path.join(args.out, "sweep.csv"))
    ratios = np.array([r.ratio for r in rep.rows])
    checks = {"ratios_finite": bool(len(ratios)) and bool(np.all(np.isfinite(ratios)))}
    if args.tighten:
        tight = kernel_sweep(pts, epsrel=args.epsrel * 1e-3, workers=args.workers)
        checks["tolerance_stable"] = abs(tight.max_ratio / rep.max_ratio - 1) <= 0.2
    print(f"points={len(rep.rows)} skipped={rep.skipped} max_ratio={rep.max_ratio:.6g}")
    _print_checks(checks)
    write_summary(args.out, "kernel-sweep", checks, {"max_ratio": rep.max_ratio, "points": len(rep.rows),
                                                     "skipped": rep.skipped})
    return EXIT_OK if all(checks.values()) else EXIT_FAIL


def cmd_ode_batch(args) -> int:
    from .kg_ode import ode_batch
    cal = ode_batch(args.seed, args.n)
    A = float(args.headroom * cal.ratios.max())
    val = ode_batch(args.seed + 1, args.n, prefactor=A)
    os.makedirs(args.out, exist_ok=True)
    _write_rows(os.path.join(args.out, "ode_batch.csv"),
                [{"batch": b, "index": i, "ratio": float(r)}
                 for b, rep in (("calibration", cal), ("validation", val)) for i, r in enumerate(rep.ratios)])
    checks = {"zero_violations": val.violations == 0,
              "batches_agree": abs(val.ratios.max() / cal.ratios.max() - 1) <= 0.2}
    print(f"prefactor={A:.6g} calibration_max={cal.ratios.max():.6g} "
          f"validation_max={val.ratios.max():.6g} violations={val.violations}")
    _print_checks(checks)
    write_summary(args.out, "ode-batch", checks, {"seed": args.seed, "prefactor": A})
    return EXIT_OK if all(checks.values()) else EXIT_FAIL


def cmd_commutator_suite(args) -> int:
    from .calculus import identity_suite
    rows = identity_suite(n_fields=args.n_fields, seed=args.seed)
    os.makedirs(args.out, exist_ok=True)
    _write_rows(os.path.join(args.out, "commutators.csv"),
                [{"identity": r.name, "field": r.field, "exact": r.exact,
                  **{f"err{i}": e for i, e in enumerate(r.errors)},
                  **{f"order{i}": o for i, o in enumerate(r.orders)}} for r in rows])
    bad = [r for r in rows if not r.exact and not all(abs(o - 2.0) <= 0.2 for o in r.orders)]
    checks = {"orders_2_pm_0.2": not bad}
    print(f"rows={len(rows)} exact={sum(r.exact for r in rows)} off_order={len(bad)}")
    for r in bad[:10]:
        print(f"  {r.name} field {r.field}: orders {r.orders}")
    _print_checks(checks)
    write_summary(args.out, "commutator-suite", checks, {"seed": args.seed})
    return EXIT_OK if all(checks.values()) else EXIT_FAIL


def inequality_constants(n: int, L: float = 40.0, eps: float = 0.05, t_end: float = 34.0,
                         s_levels=None) -> dict:
    """Sobolev and Hardy constants on a calibrated radial run."""
    s_levels = np.arange(2.0, 8.01, 0.5) if s_levels is None else s_levels
    cfg = RunConfig("radial1d", n, L, 0.5, t_end, params=ModelParams.calibrated(eps))
    d = run_diagnostics(cfg, s_levels)
    if d.abort is not None:
        raise d.abort
    return {"sobolev": max(r["ratio"] for r in d.sobolev), "hardy": d.hardy.constant,
            "hardy_static": d.hardy.static_constant,
            "holds": bool(np.all(d.hardy.lhs <= d.hardy.rhs)), "diag": d}


def cmd_inequality_suite(args) -> int:
    a = inequality_constants(args.n, args.L, args.eps, args.t_end)
    b = inequality_constants(2 * args.n - 1, args.L, args.eps, args.t_end)
    rows, checks = [], {"hardy_holds": a["holds"] and b["holds"]}
    for key in ("sobolev", "hardy", "hardy_static"):
        rel = abs(b[key] / a[key] - 1) if a[key] > 0 else 0.0
        rows.append({"constant": key, "coarse": a[key], "fine": b[key], "rel_change": rel})
        checks[f"{key}_stable_20pct"] = rel <= 0.2
    os.makedirs(args.out, exist_ok=True)
    _write_rows(os.path.join(args.out, "inequalities.csv"), rows)
    for r in rows:
        print(f"{r['constant']}: coarse={r['coarse']:.6g} fine={r['fine']:.6g} change={r['rel_change']:.3%}")
    _print_checks(checks)
    write_summary(args.out, "inequality-suite", checks)
    return EXIT_OK if all(checks.values()) else EXIT_FAIL


def cmd_report(args) -> int:
    runs = []
    for root, _, files in os.walk(args.dir):
        if "summary.json" in files:
            with open(os.path.join(root, "summary.json")) as fh:
                runs.append((os.path.relpath(root, args.dir), json.load(fh)))
    if not runs:
        print(f"no runs found in {args.dir}", file=sys.stderr)
        return EXIT_FAIL
    runs.sort()
    rows = [{"run": name, "command": s.get("command", ""), "passed": s.get("passed", False),
             "failed_checks": ";".join(k for k, ok in s.get("checks", {}).items() if not ok)}
            for name, s in runs]
    out = os.path.join(args.dir, "report.csv")
    _write_rows(out, rows)
    for name, _ in runs:
        if os.path.exists(os.path.join(args.dir, name, "energies.csv")):
            write_plot_script(os.path.join(args.dir, name))
    for r in rows:
        print(f"{'PASS' if r['passed'] else 'FAIL'}  {r['run']} ({r['command']}) {r['failed_checks']}")
    return EXIT_OK if all(r["passed"] for r in rows) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wkglab", description="Wave / Klein-Gordon numerical lab")
    sub = ap.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="seed for every randomized suite")
    common.add_argument("--out", default=None, help="output directory")

    sp = sub.add_parser("solve", parents=[common], help="evolve the model and run diagnostics")
    sp.add_argument("--config", help="key=value run configuration file")
    sp.add_argument("--mode", choices=["radial", "radial1d", "3d", "full3d"])
    sp.add_argument("--n", type=int)
    sp.add_argument("--L", type=float)
    sp.add_argument("--cfl", type=float)
    sp.add_argument("--t-end", dest="t_end", type=float)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--c", type=float)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--R", type=float)
    sp.add_argument("--N-track", dest="N_track", type=int)
    sp.add_argument("--C1", type=float)
    sp.add_argument("--profile", choices=["bump", "gaussian_truncated"])
    sp.add_argument("--outdir")
    sp.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config entry such as P.00=1 or H.11=1")
    sp.add_argument("--s-step", type=float, help="spacing of the diagnostic hyperboloids")
    sp.add_argument("--check-decay", action="store_true", help="enable the decay-exponent regression")
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("kernel-sweep", parents=[common], help="wave sup-norm bound sweep")
    sp.add_argument("--mu", type=float, nargs="+")
    sp.add_argument("--nu", type=float, nargs="+")
    sp.add_argument("--epsrel", type=float, default=1e-8)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--tighten", action="store_true", help="repeat at 1e-3 times the tolerance")
    sp.set_defaults(func=cmd_kernel_sweep)

    sp = sub.add_parser("ode-batch", parents=[common], help="randomized ODE bound batch")
    sp.add_argument("--n", type=int, default=100)
    sp.add_argument("--headroom", type=float, default=1.2)
    sp.set_defaults(func=cmd_ode_batch)

    sp = sub.add_parser("commutator-suite", parents=[common], help="commutator identity convergence")
    sp.add_argument("--n-fields", type=int, default=10)
    sp.set_defaults(func=cmd_commutator_suite)

    sp = sub.add_parser("inequality-suite", parents=[common], help="Sobolev and Hardy constants")
    sp.add_argument("--n", type=int, default=801)
    sp.add_argument("--L", type=float, default=40.0)
    sp.add_argument("--eps", type=float, default=0.05)
    sp.add_argument("--t-end", dest="t_end", type=float, default=34.0)
    sp.set_defaults(func=cmd_inequality_suite)

    sp = sub.add_parser("report", help="aggregate run directories")
    sp.add_argument("dir", nargs="?", default=".")
    sp.set_defaults(func=cmd_report)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    if getattr(args, "out", None) is None and args.command != "report":
        args.out = f"wkglab_{args.command.replace('-', '_')}"
    try:
        return args.func(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
