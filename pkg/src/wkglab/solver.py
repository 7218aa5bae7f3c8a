"""Leapfrog evolution of the coupled wave / Klein-Gordon model.

    -box u = P^{ab} d_a v d_b v + R v^2
    -box v + u H^{ab} d_a d_b v + c^2 v = 0

from data at t = 2 supported in the unit ball.  The scheme is second order in
Cartesian time.  Hyperboloids H_s and rays are diagnostic surfaces, sampled
on the fly from a ring buffer of the latest time levels, so that long runs
never hold the full history in memory.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fields import (GUARD_CELLS, FieldSlice, GridSpec, InitialData,
                     lagrange_weights, make_initial_data)

T0 = 2.0
NLEV = {"radial1d": 48, "full3d": 8}  # ring buffer depth per mode
H_BOUND = 1.0 / 3.0
RADIAL_MARGIN = 40  # cells updated beyond the cone; the leapfrog precursor there is ~1e-13 relative


class NumericalAbort(RuntimeError):
    """Run stopped because the discretization or the model left its valid regime."""

    def __init__(self, kind: str, message: str, t: float | None = None):
        super().__init__(f"{kind}: {message}")
        self.kind = kind
        self.t = t


# parameters and configuration -------------------------------------------------

def _sym4(m, name) -> np.ndarray:
    a = np.asarray(m, dtype=float)
    if a.shape != (4, 4):
        raise ValueError(f"{name} must be 4x4")
    if not np.allclose(a, a.T):
        raise ValueError(f"{name} must be symmetric")
    return a


@dataclass
class ModelParams:
    P: np.ndarray = field(default_factory=lambda: np.zeros((4, 4)))
    R: float = 0.0
    H: np.ndarray = field(default_factory=lambda: np.zeros((4, 4)))
    c: float = 1.0
    eps: float = 1e-2
    delta: float = 1.0 / 64.0
    N_track: int = 2
    C1: float | None = None
    N_ref: int = 8

    def __post_init__(self):
        self.P = _sym4(self.P, "P")
        self.H = _sym4(self.H, "H")
        if not self.c > 0:
            raise ValueError("the mass c must satisfy c^2 > 0 with c > 0")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        lo, hi = 1.0 / (10 * self.N_ref), 1.0 / (5 * self.N_ref)
        if not lo - 1e-15 <= self.delta <= hi + 1e-15:
            raise ValueError(f"delta must lie in [{lo}, {hi}] for N_ref = {self.N_ref}")
        if not 0 <= self.N_track <= 3:
            raise ValueError("N_track must be between 0 and 3")

    def check_radial(self):
        """Radial mode needs isotropic spatial blocks and no time-space mixing."""
        for name, M in (("H", self.H), ("P", self.P)):
            if np.any(M[0, 1:] != 0):
                raise ValueError(f"radial mode requires {name}^(0a) = 0")
            sp = M[1:, 1:]
            if not np.allclose(sp, sp[0, 0] * np.eye(3)):
                raise ValueError(f"radial mode requires {name}^(ab) = const * delta^(ab)")

    @classmethod
    def calibrated(cls, eps: float = 1e-2) -> "ModelParams":
        """The coupled configuration used for the decay regression."""
        return cls(P=np.eye(4), R=1.0, H=np.eye(4), c=1.0, eps=eps)


@dataclass
class RunConfig:
    mode: str = "radial1d"
    n: int = 4096
    L: float = 64.0
    cfl: float = 0.5
    t_end: float = 64.0
    profile: str = "bump"
    outdir: str | None = None
    checkpoint_every: int = 0
    params: ModelParams = field(default_factory=ModelParams)

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.mode, self.L, self.n, self.cfl)


def parse_config(text: str) -> dict:
    """Line-based ``key = value`` pairs; ``#`` starts a comment."""
    out = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {ln}: expected key=value")
        k, v = (p.strip() for p in line.split("=", 1))
        if not k:
            raise ValueError(f"line {ln}: empty key")
        out[k] = v
    return out


_INT_KEYS = {"n", "N_track", "checkpoint_every", "N_ref"}
_FLOAT_KEYS = {"L", "cfl", "t_end", "eps", "c", "delta", "R", "C1"}
_STR_KEYS = {"mode", "profile", "outdir"}


def config_from_mapping(d: dict) -> RunConfig:
    """Build a RunConfig from string or typed values; P.ab / H.ab set tensor entries."""
    P, H = np.zeros((4, 4)), np.zeros((4, 4))
    kw, pk = {}, {}
    for k, v in d.items():
        if v is None:
            continue
        if k[:2] in ("P.", "H.") and len(k) == 4 and k[2:].isdigit():
            i, j = int(k[2]), int(k[3])
            if i > 3 or j > 3:
                raise ValueError(f"tensor index out of range in {k}")
            M = P if k[0] == "P" else H
            M[i, j] = M[j, i] = float(v)
        elif k == "mode":
            kw["mode"] = {"radial": "radial1d", "3d": "full3d"}.get(str(v), str(v))
        elif k in _STR_KEYS:
            kw[k] = str(v)
        elif k in ("n", "checkpoint_every"):
            kw[k] = int(v)
        elif k in ("L", "cfl", "t_end"):
            kw[k] = float(v)
        elif k in ("N_track", "N_ref"):
            pk[k] = int(v)
        elif k in ("eps", "c", "delta", "R", "C1"):
            pk[k] = float(v)
        else:
            raise ValueError(f"unknown configuration key {k!r}")
    params = ModelParams(P=P, H=H, **pk)
    return RunConfig(params=params, **kw)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return config_from_mapping(parse_config(fh.read()))


# stencils -------------------------------------------------------------------

def radial_laplacian(f: np.ndarray, dr: float, m: int) -> np.ndarray:
    """f_rr + (2/r) f_r on nodes 0..m-1 (needs f[m]); 6(f1-f0)/dr^2 at the origin."""
    out = np.empty(m)
    out[0] = 6.0 * (f[1] - f[0]) / dr**2
    j = np.arange(1, m)
    out[1:] = (f[2:m + 1] - 2.0 * f[1:m] + f[:m - 1]) / dr**2 + (f[2:m + 1] - f[:m - 1]) / (dr * dr * j)
    return out


def radial_dr(f: np.ndarray, dr: float) -> np.ndarray:
    out = np.zeros_like(f)
    out[1:-1] = (f[2:] - f[:-2]) / (2.0 * dr)
    return out


def radial_drr(f: np.ndarray, dr: float) -> np.ndarray:
    out = np.zeros_like(f)
    out[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / dr**2
    out[0] = 2.0 * (f[1] - f[0]) / dr**2
    return out


def _shift(f, axis, k, sl):
    """f at offset k along axis, over the index box ``sl``."""
    idx = list(sl)
    s = idx[axis]
    idx[axis] = slice(s.start + k, s.stop + k)
    return f[tuple(idx)]


def _d1(f, a, sl, h):
    return (_shift(f, a, 1, sl) - _shift(f, a, -1, sl)) / (2.0 * h)


def _d2(f, a, sl, h):
    return (_shift(f, a, 1, sl) - 2.0 * f[sl] + _shift(f, a, -1, sl)) / (h * h)


def _dab(f, a, b, sl, h):
    idx = list(sl)

    def at(ka, kb):
        j = list(idx)
        j[a] = slice(idx[a].start + ka, idx[a].stop + ka)
        j[b] = slice(idx[b].start + kb, idx[b].stop + kb)
        return f[tuple(j)]
    return (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4.0 * h * h)


# ring buffer and samplers ---------------------------------------------------------

class LevelBuffer:
    """Last NLEV time levels of named arrays, addressed by absolute level index."""

    def __init__(self, shape, depth: int = 8):
        self.shape, self.depth = shape, depth
        self.data: dict = {}
        self.latest: dict = {}

    def put(self, name: str, level: int, arr: np.ndarray):
        if name not in self.data:
            self.data[name] = np.zeros((self.depth,) + self.shape)
        self.data[name][level % self.depth] = arr
        self.latest[name] = level

    def gather(self, name: str, levels: np.ndarray, idx) -> np.ndarray:
        """Values at (levels[k, p], idx[p]) for a (K, P) level table."""
        buf = self.data[name]
        flat = buf.reshape(self.depth, -1)
        return flat[levels % self.depth, idx[None, :]]


def _time_stencil(tau: np.ndarray, t0: float, dt: float):
    """6-level window start and local coordinate for evaluation times tau."""
    pos = (tau - t0) / dt
    fl = np.floor(pos + 1e-12).astype(int)
    i0 = np.maximum(fl - 2, 0)
    return i0, pos - i0, fl


def _count_ready(tau: np.ndarray, ptr: int, newest: int, t0: float, dt: float,
                 depth: int) -> int:
    """Number of pending (sorted) evaluation times to process now.

    Points wait until their 6-level window is available.  Ready points are
    then held back in batches while the buffer still retains their window.
    """
    if newest < 5 or ptr >= len(tau):
        return 0
    stop = int(np.searchsorted(tau, t0 + (newest - 1) * dt, side="right"))
    if stop <= ptr:
        return 0
    i0, _, _ = _time_stencil(tau[ptr:stop], t0, dt)
    ok = i0 + 5 <= newest
    ready = len(ok) if ok.all() else int(np.argmin(ok))
    if ready and ptr + ready < len(tau) and i0[0] > newest - depth + 3:
        return 0
    return ready


@dataclass
class HyperboloidSample:
    """Fields restricted to H_s: ``data[name][k]`` is d_t^k of the field at the nodes."""
    grid: GridSpec
    s: float
    t: np.ndarray  # sqrt(s^2 + r^2) at the nodes
    inside: np.ndarray  # r < t - 1
    data: dict

    def field_slice(self, name: str, k: int = 0) -> FieldSlice:
        return FieldSlice(self.grid, self.s, self.data[name][k], name if k == 0 else f"dt{k}{name}", "s")


class HyperboloidSampler:
    """Collects d_t^k (k <= nderiv) of the named fields on H_s while the run advances."""

    def __init__(self, grid: GridSpec, s: float, names: Sequence[str], nderiv: int = 1,
                 on_complete: Callable | None = None):
        self.grid, self.s, self.names, self.nderiv = grid, float(s), list(names), nderiv
        r = grid.radius()
        self.t = np.broadcast_to(np.sqrt(self.s**2 + r * r), grid.shape).copy()
        self.inside = np.broadcast_to(r < self.t - 1.0, grid.shape).copy()
        flat_t = self.t.reshape(-1)
        idx = np.nonzero(self.inside.reshape(-1))[0]
        order = np.argsort(flat_t[idx], kind="stable")
        self.idx = idx[order]
        self.tau = flat_t[self.idx]
        self.ptr = 0
        self.data = None  # allocated when the first nodes become ready
        self.on_complete = on_complete
        self.done = len(self.idx) == 0
        self.result: HyperboloidSample | None = None
        self.t_needed = float(self.tau[-1]) if len(self.tau) else self.s

    def advance(self, buf: LevelBuffer, t0: float, dt: float):
        if self.done:
            return
        newest = min(buf.latest.get(nm, -1) for nm in self.names)
        ready = _count_ready(self.tau, self.ptr, newest, t0, dt, buf.depth)
        if ready == 0:
            return
        if self.data is None:
            self.data = {nm: np.zeros((self.nderiv + 1,) + self.grid.shape) for nm in self.names}
        sel = slice(self.ptr, self.ptr + ready)
        idx, tau = self.idx[sel], self.tau[sel]
        i0, xi, fl = _time_stencil(tau, t0, dt)
        levels = i0[None, :] + np.arange(6)[:, None]
        # values: 4-point cubic centered on the bracketing interval
        j0 = np.clip(fl - 1 - i0, 0, 2)
        Wc = lagrange_weights(np.arange(4.0), xi - j0)
        Wd = [lagrange_weights(np.arange(6.0), xi, deriv=k) / dt**k for k in range(1, self.nderiv + 1)]
        cols = np.arange(len(idx))
        for nm in self.names:
            g = buf.gather(nm, levels, idx)  # (6, P)
            flat = self.data[nm].reshape(self.nderiv + 1, -1)
            flat[0, idx] = sum(Wc[k] * g[j0 + k, cols] for k in range(4))
            for k in range(1, self.nderiv + 1):
                flat[k, idx] = np.sum(Wd[k - 1] * g, axis=0)
        self.ptr += ready
        if self.ptr == len(self.idx):
            self.done = True
            self.result = HyperboloidSample(self.grid, self.s, self.t, self.inside, self.data)
            if self.on_complete is not None:
                keep = self.on_complete(self.result)
                if keep is False:
                    self.result = None
                    self.data = None


class RayPointSampler:
    """Radial mode: v stack (to second order) and u at prescribed (t, r) points.

    Points lie on the positive x^1 axis.  Spatial values come from cubic
    interpolation in r of v, v_r, v_rr on each of six time levels.
    """

    def __init__(self, grid: GridSpec, t: np.ndarray, r: np.ndarray):
        if grid.mode != "radial1d":
            raise ValueError("ray sampling is implemented for radial mode")
        self.grid = grid
        t = np.asarray(t, float)
        r = np.abs(np.asarray(r, float))
        order = np.argsort(t, kind="stable")
        self.order = order
        self.tau, self.r = t[order], r[order]
        self.ptr = 0
        n = len(t)
        self.out = {k: np.zeros(n) for k in ("v", "v_t", "v_tt", "v_r", "v_tr", "v_rr", "u", "u_t")}
        self.done = n == 0

    def _space_weights(self, r):
        dr = self.grid.dx
        pos = r / dr
        j0 = np.clip(np.floor(pos).astype(int) - 1, 0, self.grid.n - 4)
        return j0, lagrange_weights(np.arange(4.0), pos - j0)

    def advance(self, buf: LevelBuffer, t0: float, dt: float):
        if self.done:
            return
        newest = min(buf.latest.get(k, -1) for k in ("v", "v_r", "v_rr", "u"))
        ready = _count_ready(self.tau, self.ptr, newest, t0, dt, buf.depth)
        if ready == 0:
            return
        sel = slice(self.ptr, self.ptr + ready)
        tau, r = self.tau[sel], self.r[sel]
        i0, xi, _ = _time_stencil(tau, t0, dt)
        levels = i0[None, :] + np.arange(6)[:, None]
        j0, Ws = self._space_weights(r)
        sp = {}
        for nm in ("v", "v_r", "v_rr", "u"):
            acc = 0.0
            for k in range(4):
                acc = acc + Ws[k] * buf.gather(nm, levels, j0 + k)
            sp[nm] = acc  # (6, P)
        W = [lagrange_weights(np.arange(6.0), xi, deriv=k) / dt**k for k in range(3)]
        o = self.out
        o["v"][sel] = np.sum(W[0] * sp["v"], 0)
        o["v_t"][sel] = np.sum(W[1] * sp["v"], 0)
        o["v_tt"][sel] = np.sum(W[2] * sp["v"], 0)
        o["v_r"][sel] = np.sum(W[0] * sp["v_r"], 0)
        o["v_tr"][sel] = np.sum(W[1] * sp["v_r"], 0)
        o["v_rr"][sel] = np.sum(W[0] * sp["v_rr"], 0)
        o["u"][sel] = np.sum(W[0] * sp["u"], 0)
        o["u_t"][sel] = np.sum(W[1] * sp["u"], 0)
        self.ptr += ready
        self.done = self.ptr == len(self.tau)

    def stacks(self):
        """Results in the caller's original point order."""
        inv = np.empty_like(self.order)
        inv[self.order] = np.arange(len(self.order))
        return {k: v[inv] for k, v in self.out.items()}


# evolution ------------------------------------------------------------------------

@dataclass
class RunResult:
    t: float
    steps: int
    central_t: np.ndarray
    central_u: np.ndarray
    central_v: np.ndarray
    max_hbar00: float
    hyperboloids: list
    final_u: np.ndarray
    final_v: np.ndarray
    checkpoints: list


def cfl_limit(mode: str) -> float:
    """Stability limit of dt/dx for the 7-point (and radial) leapfrog."""
    return 1.0 / math.sqrt(3.0)


def hbar00_coefficient(H: np.ndarray, t, x) -> np.ndarray:
    """Hbar^{00} = (t/s)^2 H^00 - 2 (t/s)(x^a/s) H^{0a} + (x^a x^b / s^2) H^{ab}."""
    r2 = sum(xa * xa for xa in x)
    s2 = t * t - r2
    out = (t * t / s2) * H[0, 0]
    for a in range(3):
        if H[0, a + 1] != 0:
            out = out - 2.0 * t * x[a] / s2 * H[0, a + 1]
        for b in range(3):
            if H[a + 1, b + 1] != 0:
                out = out + x[a] * x[b] / s2 * H[a + 1, b + 1]
    return out


class Evolver:
    """Leapfrog state machine.  ``run`` advances to t_end and feeds the samplers."""

    def __init__(self, params: ModelParams, grid: GridSpec, data: InitialData | None = None,
                 samplers: Sequence = (), track_boosts: bool = False,
                 checkpoint_every: int = 0, outdir: str | None = None):
        self.p, self.g = params, grid
        if grid.mode == "radial1d":
            params.check_radial()
        if grid.cfl > cfl_limit(grid.mode):
            raise NumericalAbort("cfl", f"cfl {grid.cfl} exceeds the stability limit "
                                        f"{cfl_limit(grid.mode):.4f}")
        self.data = data if data is not None else make_initial_data(grid, eps=params.eps)
        self.samplers = list(samplers)
        self.track_boosts = track_boosts and grid.mode == "full3d"
        self.checkpoint_every, self.outdir = checkpoint_every, outdir
        self.dt, self.h = grid.dt, grid.dx
        self.buf = LevelBuffer(grid.shape, NLEV[grid.mode])
        self.r = grid.radius()
        if grid.mode == "full3d":
            ax = grid.axis()
            self.X = np.meshgrid(ax, ax, ax, indexing="ij", sparse=True)
        self.central: list = []
        self.max_hb = 0.0
        self.checkpoints: list = []
        self.level = 0

    # right-hand sides -------------------------------------------------------------
    def _radial_window(self, t):
        n = self.g.n
        m = int((t - 1.0) / self.h) + 1 + RADIAL_MARGIN
        return max(min(m, n - 1), 2)

    def _cube_window(self, t):
        """Index box covering |x_i| <= t - 1 + 2 guard widths, one ghost node inside the box."""
        n, L = self.g.n, self.g.L
        R = max(t - 1.0, 0.0) + (2 * GUARD_CELLS + 1) * self.h
        lo = max(1, int(math.floor((L - R) / self.h)))
        hi = min(n - 1, int(math.ceil((L + R) / self.h)) + 1)
        return (slice(lo, hi),) * 3

    def _accel(self, t, u, v, vt_back, u_t_for_source):
        """Returns (a_u, a_v, window) with u_tt = a_u, v_tt = a_v on the window."""
        p, h = self.p, self.h
        if self.g.mode == "radial1d":
            m = self._radial_window(t)
            lap_v = radial_laplacian(v, h, m)
            lap_u = radial_laplacian(u, h, m)
            uu, vv = u[:m], v[:m]
            hspace = p.H[1, 1] * lap_v
            a_v = (lap_v - uu * hspace - p.c**2 * vv) / (1.0 + uu * p.H[0, 0])
            return lap_u, a_v, slice(0, m)
        sl = self._cube_window(t)
        lap = lambda f: sum(_d2(f, a, sl, h) for a in range(3))
        lap_v, lap_u = lap(v), lap(u)
        uu, vv = u[sl], v[sl]
        quasi = 0.0
        for a in range(3):
            for b in range(a, 3):
                Hab = p.H[a + 1, b + 1]
                if Hab == 0:
                    continue
                term = _d2(v, a, sl, h) if a == b else 2.0 * _dab(v, a, b, sl, h)
                quasi = quasi + Hab * term
        if np.any(p.H[0, 1:] != 0) and vt_back is not None:
            for a in range(3):
                if p.H[0, a + 1] != 0:
                    quasi = quasi + 2.0 * p.H[0, a + 1] * _d1(vt_back, a, sl, h)
        a_v = (lap_v - uu * quasi - p.c**2 * vv) / (1.0 + uu * p.H[0, 0])
        return lap_u, a_v, sl

    def _source(self, v, vt, sl):
        """P^{ab} d_a v d_b v + R v^2 on the window, with d_t v supplied."""
        p, h = self.p, self.h
        if self.g.mode == "radial1d":
            vr = radial_dr(v, h)[sl]
            vv = v[sl]
            return p.P[0, 0] * vt**2 + p.P[1, 1] * vr**2 + p.R * vv**2
        grads = [_d1(v, a, sl, h) for a in range(3)]
        d = [vt] + grads
        out = p.R * v[sl] ** 2
        for al in range(4):
            for be in range(al, 4):
                if p.P[al, be] != 0:
                    out = out + (1 if al == be else 2) * p.P[al, be] * d[al] * d[be]
        return out

    # checks ---------------------------------------------------------------------
    def _check(self, t, u, sl):
        p = self.p
        if self.g.mode == "radial1d":
            x = (self.r[sl], 0.0, 0.0)
            T = t
        else:
            x = tuple(np.broadcast_to(Xa, u.shape)[sl] for Xa in self.X)
            T = t
        r = np.sqrt(sum(np.asarray(xa, float) ** 2 for xa in x))
        inside = r < T - 1.0
        if np.any(p.H != 0) and inside.any():
            with np.errstate(divide="ignore", invalid="ignore"):
                hb = np.abs(u[sl] * hbar00_coefficient(p.H, T, x))
            hb = float(np.max(np.where(inside, hb, 0.0)))
            self.max_hb = max(self.max_hb, hb)
            if hb > H_BOUND:
                raise NumericalAbort("degeneracy", f"|Hbar00 u| = {hb:.3g} > 1/3 at t = {t:.4g}", t)
        if np.any(p.H != 0):
            sup_sp = 1.0 + float(np.max(np.abs(u[sl]))) * float(np.max(np.abs(p.H[1:, 1:])))
            inf_00 = 1.0 - float(np.max(np.abs(u[sl]))) * abs(p.H[0, 0])
            if inf_00 <= 0 or self.g.cfl * math.sqrt(sup_sp / inf_00) > cfl_limit(self.g.mode):
                raise NumericalAbort("cfl", f"quasilinear CFL violated at t = {t:.4g}", t)

    def _check_boundary(self, t, u, v):
        if t - 1.0 > self.g.L - GUARD_CELLS * self.h:
            raise NumericalAbort("boundary", f"support reaches the guard band at t = {t:.4g}", t)
        g = GUARD_CELLS
        for f in (u, v):
            if self.g.mode == "radial1d":
                band = f[-g:]
            else:
                band = np.concatenate([f[:g].ravel(), f[-g:].ravel(), f[:, :g].ravel(),
                                       f[:, -g:].ravel(), f[:, :, :g].ravel(), f[:, :, -g:].ravel()])
            if np.max(np.abs(band)) > 1e-14:
                raise NumericalAbort("boundary", f"field entered the guard band at t = {t:.4g}", t)

    # bookkeeping ----------------------------------------------------------------
    def _store(self, level, u, v):
        b = self.buf
        b.put("u", level, u)
        b.put("v", level, v)
        if self.g.mode == "radial1d":
            b.put("v_r", level, radial_dr(v, self.h))
            b.put("v_rr", level, radial_drr(v, self.h))
            self.central.append((T0 + level * self.dt, u[0], v[0]))
        else:
            c = self.g.n // 2 if self.g.n % 2 else None
            if c is not None:
                self.central.append((T0 + level * self.dt, u[c, c, c], v[c, c, c]))

    def _store_boosts(self, level, fields):
        """L_a f = x^a d_t f + t d_a f at ``level`` from (f, d_t f) pairs for u and v."""
        t = T0 + level * self.dt
        for nm, (f, ft) in zip(("u", "v"), fields):
            grads = np.gradient(f, self.h)
            for a in range(3):
                self.buf.put(f"L{a + 1}{nm}", level, self.X[a] * ft + t * grads[a])

    def _checkpoint(self, level, u, v):
        if not (self.checkpoint_every and self.outdir) or level % self.checkpoint_every:
            return
        os.makedirs(self.outdir, exist_ok=True)
        t = T0 + level * self.dt
        for nm, arr in (("u", u), ("v", v)):
            path = os.path.join(self.outdir, f"{nm}_{level:07d}.fslc")
            FieldSlice(self.g, t, arr, nm).write_binary(path)
            self.checkpoints.append(path)

    def _regularize(self, u, v):
        """Radial origin values from the even fit a + b r^2 through nodes 1 and 2.

        Nodes j >= 1 never read node 0 (its weight vanishes at j = 1), so an
        evolved origin node would be an undamped oscillator at the grid scale.
        """
        if self.g.mode == "radial1d":
            for f in (u, v):
                f[0] = (4.0 * f[1] - f[2]) / 3.0

    def _feed(self):
        for smp in self.samplers:
            smp.advance(self.buf, T0, self.dt)

    def run(self, t_end: float) -> RunResult:
        p, dt = self.p, self.dt
        d = self.data
        u0, v0 = np.array(d.u0, float), np.array(d.v0, float)
        u1, v1 = np.array(d.u1, float), np.array(d.v1, float)
        nsteps = int(math.ceil((t_end - T0) / dt - 1e-9))
        # first step by Taylor expansion with the equations at t = 2
        a_u, a_v, sl = self._accel(T0, u0, v0, v1, None)
        S = self._source(v0, v1[sl], sl)
        u_new, v_new = u0.copy(), v0.copy()
        u_new += dt * u1
        v_new += dt * v1
        u_new[sl] += 0.5 * dt * dt * (a_u + S)
        v_new[sl] += 0.5 * dt * dt * a_v
        self._check(T0, u0, sl)
        self._regularize(u_new, v_new)
        levels = [(u0, v0), (u_new, v_new)]
        self._store(0, u0, v0)
        self._store(1, u_new, v_new)
        if self.track_boosts:
            self._store_boosts(0, ((u0, u1), (v0, v1)))
        self._checkpoint(0, u0, v0)
        self._feed()
        v_back = None
        step = 1
        while step < nsteps:
            t = T0 + step * dt
            (u_m, v_m), (u_c, v_c) = levels[-2], levels[-1]
            if self.g.mode == "full3d" and np.any(p.H[0, 1:] != 0):
                v_back = (3 * v_c - 4 * v_m + levels[-3][1]) / (2 * dt) if len(levels) > 2 \
                    else (v_c - v_m) / dt
            a_u, a_v, sl = self._accel(t, u_c, v_c, v_back, None)
            v_n = np.zeros_like(v_c) if self.g.mode == "full3d" else v_c * 0.0
            v_n[sl] = 2.0 * v_c[sl] - v_m[sl] + dt * dt * a_v
            vt = (v_n[sl] - v_m[sl]) / (2.0 * dt)
            S = self._source(v_c, vt, sl)
            u_n = np.zeros_like(u_c)
            u_n[sl] = 2.0 * u_c[sl] - u_m[sl] + dt * dt * (a_u + S)
            self._regularize(u_n, v_n)
            if not (np.all(np.isfinite(u_n[sl])) and np.all(np.isfinite(v_n[sl]))):
                raise NumericalAbort("nonfinite", f"non-finite values at t = {t:.4g}", t)
            self._check(t, u_c, sl)
            if step % 50 == 0:
                self._check_boundary(t, u_c, v_c)
            step += 1
            levels.append((u_n, v_n))
            if len(levels) > 3:
                levels.pop(0)
            self._store(step, u_n, v_n)
            if self.track_boosts:
                (u0_, v0_), (u1_, v1_), (u2_, v2_) = levels[-3], levels[-2], levels[-1]
                self._store_boosts(step - 1, ((u1_, (u2_ - u0_) / (2 * dt)), (v1_, (v2_ - v0_) / (2 * dt))))
            self._checkpoint(step, u_n, v_n)
            self._feed()
        self._check_boundary(T0 + step * dt, *levels[-1])
        ct = np.array([c[0] for c in self.central])
        return RunResult(T0 + step * dt, step, ct, np.array([c[1] for c in self.central]),
                         np.array([c[2] for c in self.central]), self.max_hb,
                         [s.result for s in self.samplers if isinstance(s, HyperboloidSampler)],
                         levels[-1][0], levels[-1][1], self.checkpoints)


def evolve(params: ModelParams, grid: GridSpec, t_end: float, data: InitialData | None = None,
           samplers: Sequence = (), **kw) -> RunResult:
    return Evolver(params, grid, data, samplers, **kw).run(t_end)


def run_config(cfg: RunConfig, samplers: Sequence = (), **kw) -> RunResult:
    """Evolve the configured model from its configured initial data."""
    grid = cfg.grid
    data = make_initial_data(grid, cfg.profile, cfg.params.eps)
    return evolve(cfg.params, grid, cfg.t_end, data, samplers,
                  checkpoint_every=cfg.checkpoint_every, outdir=cfg.outdir, **kw)


# tracked derivatives ----------------------------------------------------------------

def tracked_field(mode: str, I: Sequence[int], J: Sequence[int]) -> tuple[str, int]:
    """Buffer name and number of extra time derivatives representing d^I L^J of u.

    Radial mode tracks d_t^k only; full3d adds single boosts.  Returns the
    base name (to be suffixed with ``u`` or ``v``) and k.
    """
    I, J = tuple(I), tuple(J)
    if any(i != 0 for i in I):
        raise ValueError("only time derivatives d_t are tracked in the I slot")
    if J and mode != "full3d":
        raise ValueError("boosts break radial symmetry; use full3d mode")
    if len(J) > 1:
        raise ValueError("at most one boost is tracked")
    return (f"L{J[0]}" if J else ""), len(I)


def track_derivatives(sample: HyperboloidSample, I, J, which: str = "u") -> np.ndarray:
    """d^I L^J of u or v on H_s together with its d_t, shape (2,) + grid shape."""
    base, k = tracked_field(sample.grid.mode, I, J)
    arr = sample.data[base + which]
    if k + 1 >= arr.shape[0]:
        raise ValueError(f"sampler stored only {arr.shape[0] - 1} time derivatives")
    return arr[k:k + 2]


@dataclass
class BoostTrackingReport:
    defect: float  # max |residual - predicted|, roundoff if tracking is consistent
    residual: float  # max |[D_t, L_a] u - D_a u|
    scale: float  # max |D_a u|
    dt: float


def boost_tracking_residual(ev: Evolver, a: int = 1) -> BoostTrackingReport:
    """Check the tracked L_a u against the commutator [d_t, L_a] = d_a on the grid.

    With centered differences D_t and the levelwise gradient D_a,
    D_t(L_a u) - L_a(D_t u) - D_a u = (G^+ - 2 G + G^-)/2 exactly, where
    G = D_a u at adjacent levels.  The right side is the O(dt^2) error term,
    so a vanishing defect means the tracked history obeys the table identity
    up to its second-order truncation.
    """
    if not ev.track_boosts:
        raise ValueError("run was made without boost tracking")
    b, dt, h = ev.buf, ev.dt, ev.h
    N = b.latest[f"L{a}u"]
    n = N - 1
    if n - 2 < 0 or b.latest["u"] < n + 2 or b.latest["u"] - (n - 2) >= b.depth:
        raise ValueError("not enough retained levels")
    U = {k: b.data["u"][k % b.depth] for k in range(n - 2, n + 3)}
    L = {k: b.data[f"L{a}u"][k % b.depth] for k in (n - 1, n + 1)}
    G = {k: np.gradient(U[k], h, axis=a - 1) for k in (n - 1, n, n + 1)}
    x = ev.X[a - 1]
    t = T0 + n * dt
    lhs = (L[n + 1] - L[n - 1]) / (2 * dt)
    dtu_p = (U[n + 2] - U[n]) / (2 * dt)
    dtu_m = (U[n] - U[n - 2]) / (2 * dt)
    dtu_c = (U[n + 1] - U[n - 1]) / (2 * dt)
    Ldt = x * (dtu_p - dtu_m) / (2 * dt) + t * np.gradient(dtu_c, h, axis=a - 1)
    res = lhs - Ldt - G[n]
    pred = 0.5 * (G[n + 1] - 2 * G[n] + G[n - 1])
    return BoostTrackingReport(float(np.max(np.abs(res - pred))), float(np.max(np.abs(res))),
                               float(np.max(np.abs(G[n]))), dt)
