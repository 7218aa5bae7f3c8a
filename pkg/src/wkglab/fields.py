"""Discrete scalar fields on constant-t planes and on hyperboloids.

Two grid modes are supported.  ``radial1d`` stores a spherically symmetric
field on nodes r_j = j*dr, j = 0..n-1, and identifies node j with the point
(r_j, 0, 0); ``full3d`` stores a field on a cube [-L, L]^3 with n nodes per
axis.  Pointwise formulas work on :class:`CartesianStack` objects so that the
two modes share all algebra.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

MODES = ("radial1d", "full3d")
GUARD_CELLS = 4


class HistoryError(ValueError):
    """The stored time history does not cover a requested range."""


@dataclass(frozen=True)
class GridSpec:
    mode: str
    L: float
    n: int
    cfl: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.n < 16:
            raise ValueError("n must be at least 16")
        if not 0.0 < self.cfl < 1.0:
            raise ValueError("cfl must lie in (0, 1)")
        if self.L <= 0:
            raise ValueError("extent must be positive")

    @property
    def dx(self) -> float:
        if self.mode == "radial1d":
            return self.L / (self.n - 1)
        return 2.0 * self.L / (self.n - 1)

    @property
    def dt(self) -> float:
        return self.cfl * self.dx

    @property
    def shape(self) -> tuple:
        return (self.n,) if self.mode == "radial1d" else (self.n,) * 3

    def axis(self) -> np.ndarray:
        if self.mode == "radial1d":
            return np.linspace(0.0, self.L, self.n)
        return np.linspace(-self.L, self.L, self.n)

    def radius(self) -> np.ndarray:
        """|x| at every node, in the grid's array shape."""
        a = self.axis()
        if self.mode == "radial1d":
            return a
        X, Y, Z = np.meshgrid(a, a, a, indexing="ij", sparse=True)
        return np.sqrt(X * X + Y * Y + Z * Z)

    def positions(self) -> np.ndarray:
        """Cartesian positions, shape (3,) + grid shape."""
        a = self.axis()
        if self.mode == "radial1d":
            return np.stack([a, np.zeros_like(a), np.zeros_like(a)])
        return np.stack(np.meshgrid(a, a, a, indexing="ij"))

    def quadrature_weights(self) -> np.ndarray:
        """Weights w with sum(w * g) ~ integral of g over R^3 (flat measure)."""
        if self.mode == "radial1d":
            r = self.axis()
            w = 4.0 * np.pi * r * r * self.dx
            w[-1] *= 0.5
            return w
        return np.full(self.shape, self.dx**3)

    def max_support_time(self, M: float = 1.0, t0: float = 2.0) -> float:
        """Latest t at which unit-ball data stays clear of the guard band."""
        return t0 + self.L - GUARD_CELLS * self.dx - M


@dataclass(frozen=True)
class CartesianStack:
    """Value, gradient and Hessian of a scalar at a set of spacetime points.

    ``d`` has shape (4, ...) with index 0 the time derivative; ``dd`` has shape
    (4, 4, ...).  Missing levels are ``None``.
    """
    f: np.ndarray
    d: np.ndarray | None = None
    dd: np.ndarray | None = None

    def require(self, order: int):
        if order >= 1 and self.d is None or order >= 2 and self.dd is None:
            raise ValueError(f"derivative stack lacks order-{order} data")

    @staticmethod
    def from_radial(r, f, f_t=None, f_r=None, f_tt=None, f_tr=None, f_rr=None):
        """Stack on the positive x^1 axis of a spherically symmetric field."""
        r = np.asarray(r, dtype=float)
        f = np.asarray(f, dtype=float)
        d = dd = None
        if f_t is not None:
            z = np.zeros_like(f)
            d = np.stack([f_t, f_r, z, z])
        if f_tt is not None:
            dd = np.zeros((4, 4) + f.shape)
            dd[0, 0] = f_tt
            dd[0, 1] = dd[1, 0] = f_tr
            dd[1, 1] = f_rr
            safe = np.where(r > 0, r, 1.0)
            tang = np.where(r > 0, f_r / safe, f_rr)
            dd[2, 2] = dd[3, 3] = tang
        return CartesianStack(f, d, dd)


@dataclass
class FieldSlice:
    grid: GridSpec
    level: float
    values: np.ndarray
    which: str = "u"
    level_kind: str = "t"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field slice contains NaN or Inf")
        if self.level_kind not in ("t", "s"):
            raise ValueError("level_kind must be 't' or 's'")

    # flat binary layout: magic, mode, level kind, n, L, level, label, payload
    _HDR = struct.Struct("<4sBBIdd")

    def to_bytes(self) -> bytes:
        label = self.which.encode("utf-8")
        head = self._HDR.pack(b"FSLC", MODES.index(self.grid.mode),
                              0 if self.level_kind == "t" else 1, self.grid.n, self.grid.L,
                              self.level)
        return (head + struct.pack("<H", len(label)) + label
                + struct.pack("<d", self.grid.cfl)
                + np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def from_bytes(cls, buf: bytes) -> "FieldSlice":
        magic, mode, kind, n, L, level = cls._HDR.unpack_from(buf, 0)
        if magic != b"FSLC":
            raise ValueError("not a field slice")
        off = cls._HDR.size
        (ln,) = struct.unpack_from("<H", buf, off)
        off += 2
        label = buf[off:off + ln].decode("utf-8")
        off += ln
        (cfl,) = struct.unpack_from("<d", buf, off)
        off += 8
        grid = GridSpec(MODES[mode], L, n, cfl)
        vals = np.frombuffer(buf, dtype="<f8", offset=off).reshape(grid.shape).copy()
        return cls(grid, level, vals, label, "t" if kind == 0 else "s")

    def write_binary(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def read_binary(cls, path) -> "FieldSlice":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def write_csv(self, path, max_nodes: int = 200_000) -> None:
        if self.values.size > max_nodes:
            raise ValueError("slice too large for CSV export")
        pos = self.grid.positions().reshape(3, -1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2", "x3", self.which])
            for i, v in enumerate(self.values.reshape(-1)):
                w.writerow([pos[0, i], pos[1, i], pos[2, i], repr(float(v))])


@lru_cache(maxsize=256)
def _lagrange_coeffs(nodes: tuple, deriv: int) -> np.ndarray:
    """Polynomial coefficients (highest power first) of each Lagrange basis derivative."""
    nodes = np.asarray(nodes, dtype=float)
    k = len(nodes)
    rows = []
    for j in range(k):
        others = np.delete(nodes, j)
        coef = np.poly(others) / np.prod(nodes[j] - others)
        for _ in range(deriv):
            coef = np.polyder(coef)
        rows.append(np.concatenate([np.zeros(k - len(coef)), coef]) if coef.size else np.zeros(k))
    out = np.array(rows)
    out.setflags(write=False)
    return out


def lagrange_weights(nodes: np.ndarray, x, deriv: int = 0) -> np.ndarray:
    """Weights of the Lagrange interpolant (or its derivative) through ``nodes``.

    ``x`` may be an array; the result has shape (len(nodes),) + x.shape.
    """
    C = _lagrange_coeffs(tuple(float(a) for a in np.ravel(nodes)), int(deriv))
    x = np.asarray(x, dtype=float)
    out = np.broadcast_to(C[:, 0].reshape((-1,) + (1,) * x.ndim), C.shape[:1] + x.shape).copy()
    for p in range(1, C.shape[1]):
        out *= x
        out += C[:, p].reshape((-1,) + (1,) * x.ndim)
    return out


def cubic_time_weights(times: np.ndarray, T: np.ndarray):
    """Indices and weights of 4-point cubic interpolation in a uniform time list.

    Returns (i0, W) with W of shape (4,) + T.shape; node k of the stencil is
    times[i0 + k].
    """
    times = np.asarray(times, dtype=float)
    dt = times[1] - times[0]
    pos = (T - times[0]) / dt
    i0 = np.clip(np.floor(pos).astype(int) - 1, 0, len(times) - 4)
    xi = pos - i0  # local coordinate with nodes at 0,1,2,3
    W = lagrange_weights(np.arange(4.0), xi)
    return i0, W


def sample_hyperboloid(history: Sequence[FieldSlice], s: float, which: str | None = None,
                       mask_cone: bool = True) -> FieldSlice:
    """Restrict a Cartesian time history to H_s by cubic interpolation in t.

    ``history`` is a sequence of equally spaced constant-t slices on one grid.
    Nodes outside the cone r < t - 1 are set to zero unless ``mask_cone`` is
    off (useful for test fields that are not supported in K).
    """
    if len(history) < 4:
        raise HistoryError("need at least four time levels for cubic interpolation")
    grid = history[0].grid
    times = np.array([h.level for h in history])
    if np.any(np.abs(np.diff(times) - (times[1] - times[0])) > 1e-9 * abs(times[1] - times[0])):
        raise ValueError("history levels must be equally spaced")
    r = grid.radius()
    T = np.sqrt(s * s + r * r)
    inside = r < T - 1.0 if mask_cone else np.ones(T.shape, bool)
    need_lo, need_hi = float(T[inside].min(initial=s)), float(T[inside].max(initial=s))
    if need_lo < times[0] - 1e-12 or need_hi > times[-1] + 1e-12:
        raise HistoryError(f"history covers t in [{times[0]}, {times[-1]}] but H_{s} needs "
                           f"[{need_lo}, {need_hi}]")
    data = np.stack([h.values for h in history])
    i0, W = cubic_time_weights(times, T)
    flat_i0 = i0.reshape(-1)
    flat_W = W.reshape(4, -1)
    flat_data = data.reshape(len(history), -1)
    idx = np.arange(flat_i0.size)
    vals = sum(flat_W[k] * flat_data[flat_i0 + k, idx] for k in range(4)).reshape(grid.shape)
    vals = np.where(inside, vals, 0.0)
    return FieldSlice(grid, s, vals, which or history[0].which, "s")


def bump_profile(r, amplitude: float = 1.0) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    return np.where(r < 1.0, amplitude * np.clip(1.0 - r * r, 0.0, None) ** 4, 0.0)


def gaussian_truncated_profile(r, amplitude: float = 1.0, width: float = 0.35) -> np.ndarray:
    """Gaussian times a C^3 cutoff, normalized to ``amplitude`` at the origin."""
    r = np.asarray(r, dtype=float)
    return amplitude * np.exp(-(r / width) ** 2) * bump_profile(r)


@dataclass
class InitialData:
    u0: np.ndarray
    u1: np.ndarray
    v0: np.ndarray
    v1: np.ndarray
    eps: float
    profile: str
    sobolev_proxy: float = field(default=0.0)


def discrete_sobolev_norm(grid: GridSpec, g: np.ndarray, order: int) -> float:
    """Discrete H^order norm: sum over |I| <= order of ||d^I g||_{L^2}."""
    w = grid.quadrature_weights()

    def walk(h, depth):
        # depth-first so that at most ``order`` derivative arrays are alive
        total = np.sqrt(np.sum(w * h * h))
        if depth == order:
            return total
        if grid.mode == "radial1d":
            # radial gradient magnitude carries the full |grad h|
            return total + walk(np.gradient(h, grid.dx), depth + 1)
        for a in range(3):
            total += walk(np.gradient(h, grid.dx, axis=a), depth + 1)
        return total

    return float(walk(np.asarray(g, float), 0))


def make_initial_data(grid: GridSpec, profile: str = "bump", eps: float = 1e-2,
                      N: int = 3) -> InitialData:
    """Unit-ball supported data (u0, u1, v0, v1) scaled by ``eps``.

    u0 = v0 = eps * P(r) and u1 = v1 = eps * P(r) / 2 with P the selected
    profile normalized to P(0) = 1.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    r = grid.radius()
    if profile == "bump":
        p = bump_profile(r)
    elif profile == "gaussian_truncated":
        p = gaussian_truncated_profile(r)
    else:
        raise ValueError("profile must be 'bump' or 'gaussian_truncated'")
    base = np.broadcast_to(p, grid.shape).astype(float)
    data = InitialData(eps * base, 0.5 * eps * base, eps * base.copy(), 0.5 * eps * base.copy(),
                       eps, profile)
    data.sobolev_proxy = (discrete_sobolev_norm(grid, data.u0, N + 1)
                          + discrete_sobolev_norm(grid, data.v0, N + 1)
                          + discrete_sobolev_norm(grid, data.u1, N)
                          + discrete_sobolev_norm(grid, data.v1, N))
    return data
