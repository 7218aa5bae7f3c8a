"""Klein-Gordon decay along rays: the lambda^{3/2} reduction and its ODE bound.

For an anchor (t, x) in K with s = sqrt(t^2 - r^2) the ray is
lambda -> (lambda t/s, lambda x/s).  Along it w(lambda) = lambda^{3/2} v solves

    w'' + c^2 w / (1 + hbar00) = (R1 + R2 + R3 + s^{3/2} f) / (1 + hbar00)

for -box v + h^{ab} d_a d_b v + c^2 v = f.  Field data is supplied by an
evaluator ``ev(t, x) -> RayData`` so that analytic fields and solver histories
are handled alike.
"""
from __future__ import annotations

import bisect
import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import cumulative_trapezoid, solve_ivp
from scipy.interpolate import PchipInterpolator

from .fields import CartesianStack

G_MAX = 1.0 / 3.0


# ray geometry ---------------------------------------------------------------

def ray_s0(t: float, x) -> float:
    """Entry parameter of the ray: 2 near the center, sqrt((t+r)/(t-r)) near the cone."""
    r = float(np.linalg.norm(x))
    if r >= t:
        raise ValueError("anchor outside the light cone")
    if r / t <= 0.6:
        return 2.0
    return float(np.sqrt((t + r) / (t - r)))


@dataclass(frozen=True)
class RaySegment:
    t: float
    x: np.ndarray
    s0: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        if self.t - 1.0 - self.r <= 1e-9:
            raise ValueError("anchor must lie inside K = {r < t - 1}")
        object.__setattr__(self, "s0", ray_s0(self.t, self.x))

    @property
    def r(self) -> float:
        return float(np.linalg.norm(self.x))

    @property
    def s(self) -> float:
        return float(np.sqrt(self.t**2 - self.r**2))

    def points(self, lam):
        """Cartesian (t, x) of the ray at parameters lam; x has shape (3, n)."""
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        return lam * self.t / self.s, np.outer(self.x / self.s, lam)


# field data along rays -----------------------------------------------------

@dataclass
class RayData:
    """v with Cartesian derivatives to order 2, h^{ab} (upper, Cartesian) and the source f."""
    v: CartesianStack
    h: np.ndarray | None = None  # (4, 4, n)
    f: np.ndarray | None = None


Evaluator = Callable[[np.ndarray, np.ndarray], RayData]


@dataclass
class HyperbolicDerivs:
    """Derivatives of v in the coordinates (s, xbar) at a set of points."""
    s: np.ndarray
    t: np.ndarray
    x: np.ndarray  # (3, n)
    v: np.ndarray
    d: np.ndarray  # (4, n): dbar_0 v, dbar_a v
    dd: np.ndarray  # (4, 4, n)


def hyperbolic_derivatives(t, x, st: CartesianStack) -> HyperbolicDerivs:
    """Chain rule from a Cartesian stack to dbar_alpha and dbar_alpha dbar_beta."""
    st.require(2)
    t = np.asarray(t, float)
    x = np.asarray(x, float)
    r2 = np.sum(x * x, axis=0)
    s = np.sqrt(t * t - r2)
    vt, vtt = st.d[0], st.dd[0, 0]
    n = np.shape(t)
    d = np.zeros((4,) + n)
    dd = np.zeros((4, 4) + n)
    d[0] = s / t * vt
    for a in range(1, 4):
        d[a] = x[a - 1] / t * vt + st.d[a]
    dd[0, 0] = (s / t) ** 2 * vtt + r2 / t**3 * vt
    for a in range(1, 4):
        xa = x[a - 1]
        dd[a, 0] = dd[0, a] = -s * xa / t**3 * vt + s / t * (xa / t * vtt + st.dd[0, a])
        for b in range(1, 4):
            xb = x[b - 1]
            dd[a, b] = ((a == b) / t - xa * xb / t**3) * vt \
                + xa / t * (xb / t * vtt + st.dd[0, b]) + xb / t * st.dd[0, a] + st.dd[a, b]
    return HyperbolicDerivs(s, t, x, st.f, d, dd)


def psibar(t, x) -> np.ndarray:
    """Psibar[beta][beta'] with d_beta = Psibar[beta][beta'] dbar_beta'; shape (4, 4, n)."""
    x = np.asarray(x, float)
    s = np.sqrt(t * t - np.sum(x * x, axis=0))
    M = np.zeros((4, 4) + np.shape(t))
    M[0, 0] = t / s
    for a in range(1, 4):
        M[a, 0] = -x[a - 1] / s
        M[a, a] = 1.0
    return M


def dpsibar_col0(t, x) -> np.ndarray:
    """d_alpha Psibar[beta][0]; shape (4 alpha, 4 beta, n).  Other columns are constant."""
    x = np.asarray(x, float)
    r2 = np.sum(x * x, axis=0)
    s = np.sqrt(t * t - r2)
    s3 = s**3
    D = np.zeros((4, 4) + np.shape(t))
    D[0, 0] = -r2 / s3
    for c in range(1, 4):
        D[c, 0] = t * x[c - 1] / s3
    for a in range(1, 4):
        D[0, a] = x[a - 1] * t / s3
        for c in range(1, 4):
            D[c, a] = -(a == c) / s - x[a - 1] * x[c - 1] / s3
    return D


def hbar_upper(t, x, h) -> np.ndarray:
    """hbar^{ab} = Psibar^T h Psibar (upper indices)."""
    M = psibar(t, x)
    return np.einsum("ai...,ab...,bj...->ij...", M, h, M)


@dataclass
class SourceTerms:
    R1: np.ndarray
    R2: np.ndarray
    R3: np.ndarray
    hb00: np.ndarray


def source_terms(t, x, data: RayData) -> SourceTerms:
    """R1, R2, R3 at the points (t, x) in the decomposition of the curved KG operator."""
    hd = hyperbolic_derivatives(t, x, data.v)
    s, xs, v, d, dd = hd.s, hd.x, hd.v, hd.d, hd.dd
    sq = np.sqrt(s)
    s32 = s * sq
    lap = dd[1, 1] + dd[2, 2] + dd[3, 3]
    xxdd = sum(xs[a - 1] * xs[b - 1] * dd[a, b] for a in range(1, 4) for b in range(1, 4))
    xd = sum(xs[a - 1] * d[a] for a in range(1, 4))
    R1 = s32 * lap + xxdd / sq + 0.75 / sq * v + 3.0 * xd / sq
    if data.h is None:
        z = np.zeros_like(R1)
        return SourceTerms(R1, z, z.copy(), z.copy())
    h = np.asarray(data.h, float)
    hb = hbar_upper(t, xs, h)
    hb00 = hb[0, 0]
    extra = np.einsum("ab...,ab...->...", h, dpsibar_col0(t, xs)) * d[0]
    cross = sum(hb[0, b] * dd[0, b] for b in range(1, 4))
    spatial = sum(hb[a, b] * dd[a, b] for a in range(1, 4) for b in range(1, 4))
    R2 = hb00 * (0.75 * v / sq + 3.0 * sq * d[0]) - s32 * (2.0 * cross + spatial + extra)
    x0d = sum(xs[a - 1] * dd[0, a] for a in range(1, 4))
    R3 = hb00 * (2.0 * sq * x0d + 3.0 * xd / sq + xxdd / sq)
    return SourceTerms(R1, R2, R3, hb00)


def decomposition_residual(ev: Evaluator, anchor: RaySegment, c: float, lams,
                           dlam: float = 0.05, relative: bool = True) -> float:
    """Max residual of the ray ODE identity at the parameters ``lams``.

    w'' uses the 5-point centered stencil of spacing ``dlam``.  The relative
    form divides by max(|w''|, |c^2 w/(1+hbar00)|) over the same points.
    """
    lams = np.atleast_1d(np.asarray(lams, float))
    offs = np.arange(-2, 3) * dlam
    grid = (lams[:, None] + offs[None, :]).ravel()
    T, X = anchor.points(grid)
    w = (grid**1.5 * ev(T, X).v.f).reshape(len(lams), 5)
    w2 = (-w[:, 0] + 16 * w[:, 1] - 30 * w[:, 2] + 16 * w[:, 3] - w[:, 4]) / (12 * dlam**2)
    T0, X0 = anchor.points(lams)
    data = ev(T0, X0)
    st = source_terms(T0, X0, data)
    f = np.zeros_like(T0) if data.f is None else data.f
    one_h = 1.0 + st.hb00
    lhs_mass = c * c * w[:, 2] / one_h
    rhs = (st.R1 + st.R2 + st.R3 + lams**1.5 * f) / one_h
    res = np.abs(w2 + lhs_mass - rhs)
    if not relative:
        return float(res.max())
    scale = max(np.abs(w2).max(), np.abs(lhs_mass).max())
    return float(res.max() / scale) if scale > 0 else float(res.max())


# the oscillator ODE ----------------------------------------------------------

@dataclass
class OdeProblem:
    """z'' + c^2/(1+G) z = k on the sample grid ``lam`` with data at lam[0]."""
    lam: np.ndarray
    G: np.ndarray
    k: np.ndarray
    c: float
    z0: float
    z1: float

    def __post_init__(self):
        self.lam = np.asarray(self.lam, float)
        self.G = np.asarray(self.G, float)
        self.k = np.asarray(self.k, float)
        if self.c <= 0:
            raise ValueError("mass c must be positive")
        if np.abs(self.G).max() > G_MAX + 1e-12:
            raise ValueError("sup |G| must not exceed 1/3")
        if not (self.lam.shape == self.G.shape == self.k.shape) or np.any(np.diff(self.lam) <= 0):
            raise ValueError("lam, G, k must share an increasing sample grid")
        dl = float(np.diff(self.lam).max())
        if dl > 2 * np.pi / self.c / 20:
            raise ValueError("fewer than 20 samples per oscillation period")
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            # flat stretches make PCHIP divide by zero slopes; its result is still exact
            self.G_interp = PchipInterpolator(self.lam, self.G)
            self.k_interp = PchipInterpolator(self.lam, self.k)
        # per-interval cubic coefficients as python floats for a fast scalar rhs
        self._knots = self.lam.tolist()
        self._tab = np.concatenate([self.G_interp.c, self.k_interp.c]).T.tolist()

    @property
    def s0(self) -> float:
        return float(self.lam[0])

    def rhs(self, lam, y):
        i = min(max(bisect.bisect_right(self._knots, lam) - 1, 0), len(self._knots) - 2)
        d = lam - self._knots[i]
        g3, g2, g1, g0, k3, k2, k1, k0 = self._tab[i]
        G = ((g3 * d + g2) * d + g1) * d + g0
        k = ((k3 * d + k2) * d + k1) * d + k0
        return [y[1], k - self.c**2 / (1.0 + G) * y[0]]


@dataclass
class Trajectory:
    lam: np.ndarray
    z: np.ndarray
    zp: np.ndarray


def ode_integrate(p: OdeProblem, s_end: float | None = None, rtol: float = 1e-12,
                  atol: float = 1e-14) -> Trajectory:
    """Eighth-order Dormand-Prince integration, reported on the sample grid."""
    s_end = float(p.lam[-1]) if s_end is None else float(s_end)
    grid = p.lam[p.lam <= s_end + 1e-12]
    sol = solve_ivp(p.rhs, (p.s0, s_end), [p.z0, p.z1], method="DOP853", t_eval=grid,
                    rtol=rtol, atol=atol)
    if not sol.success:
        raise FloatingPointError(f"ODE integration failed: {sol.message}")
    return Trajectory(sol.t, sol.y[0], sol.y[1])


def gronwall_constant(c: float = 1.0, n: int = 2001) -> float:
    """sup over |G| <= 1/3 of ||(P^{-1})' P|| / |G'| for P = [[1, 1], [i w, -i w]].

    w = c / sqrt(1+G).  The value is 1/(2(1+G)) at each G, so 3/4 for every c.
    """
    best = 0.0
    for g in np.linspace(-G_MAX, G_MAX, n):
        w = c / np.sqrt(1.0 + g)
        dw = -0.5 * c * (1.0 + g) ** -1.5
        P = np.array([[1, 1], [1j * w, -1j * w]])
        dPinv = np.array([[0, -1 / (2j * w * w)], [0, 1 / (2j * w * w)]]) * dw
        best = max(best, np.linalg.norm(dPinv @ P, 2))
    return float(best)


def ode_bound_rhs(p: OdeProblem, C: float, lam: np.ndarray | None = None) -> np.ndarray:
    """(|z0|+|z1|+K(s)) + int (|z0|+|z1|+K) |G'| exp(C int_sbar^s |G'|) dsbar on ``lam``."""
    lam = p.lam if lam is None else lam
    fine = np.linspace(lam[0], lam[-1], max(4 * len(lam), 2001))
    Kc = cumulative_trapezoid(np.abs(p.k_interp(fine)), fine, initial=0.0)
    Gp = np.abs(p.G_interp.derivative()(fine))
    A = cumulative_trapezoid(Gp, fine, initial=0.0)
    base = abs(p.z0) + abs(p.z1) + Kc
    # int_s0^s base |G'| e^{C(A(s)-A(sbar))} = e^{C A(s)} int base |G'| e^{-C A}
    inner = cumulative_trapezoid(base * Gp * np.exp(-C * A), fine, initial=0.0)
    total = base + np.exp(C * A) * inner
    return np.interp(lam, fine, total)


@dataclass
class BoundCheck:
    ratio: float  # max over the grid of (|z|+|z'|) / RHS
    lhs: np.ndarray
    rhs: np.ndarray


def ode_bound_check(p: OdeProblem, s_end: float | None = None, C: float | None = None,
                    rtol: float = 1e-9) -> BoundCheck:
    """Ratio of |z|+|z'| to the bound with Gronwall constant C (default 3/4).

    The loose default rtol only perturbs ratios at the 1e-7 level.
    """
    C = gronwall_constant(p.c) if C is None else C
    tr = ode_integrate(p, s_end, rtol=rtol, atol=1e-2 * rtol)
    lhs = np.abs(tr.z) + np.abs(tr.zp)
    rhs = ode_bound_rhs(p, C, tr.lam)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(rhs > 0, lhs / rhs, np.where(lhs > 0, np.inf, 0.0))
    return BoundCheck(float(ratio.max()), lhs, rhs)


def random_problem(rng: np.random.Generator, dl: float = 0.02) -> OdeProblem:
    """A randomized instance: smooth ramps and wiggles in G, Gaussian bumps in k."""
    c = float(rng.uniform(0.5, 2.0))
    s0 = float(rng.uniform(2.0, 4.0))
    length = float(rng.uniform(15.0, 40.0))
    lam = np.arange(s0, s0 + length + dl / 2, dl)
    G = np.zeros_like(lam)
    for _ in range(rng.integers(1, 4)):
        G += rng.normal() * np.tanh((lam - rng.uniform(s0, s0 + length)) / rng.uniform(0.1, 5.0))
    G += 0.3 * rng.normal() * np.sin(rng.uniform(0.1, 2.0) * lam + rng.uniform(0, 6))
    G *= rng.uniform(0.2, 1.0) * G_MAX / max(np.abs(G).max(), 1e-12)
    k = np.zeros_like(lam)
    for _ in range(rng.integers(0, 4)):
        k += rng.normal() * np.exp(-((lam - rng.uniform(s0, s0 + length)) / rng.uniform(0.3, 4.0)) ** 2)
    return OdeProblem(lam, G, k, c, float(rng.normal()), float(rng.normal()))


@dataclass
class BatchReport:
    ratios: np.ndarray
    prefactor: float | None = None
    violations: int = 0


def ode_batch(seed: int, n: int = 100, prefactor: float | None = None) -> BatchReport:
    """Bound ratios on ``n`` random problems; counts violations if a prefactor is given."""
    rng = np.random.default_rng(seed)
    C = gronwall_constant()
    ratios = np.array([ode_bound_check(random_problem(rng), C=C).ratio for _ in range(n)])
    viol = int(np.sum(ratios > prefactor)) if prefactor is not None else 0
    return BatchReport(ratios, prefactor, viol)


def calibrate_prefactor(seed: int = 0, n: int = 100, headroom: float = 1.2) -> float:
    return float(headroom * ode_batch(seed, n).ratios.max())


# the V majorant --------------------------------------------------------------

@dataclass
class RayReport:
    t: float
    r: float
    s0: float
    F: float
    V: float
    lhs: float
    ratio: float
    h_var: float  # int_{s0}^{s} |h'_{t,x}|


def v_majorant(ev: Evaluator, anchor: RaySegment, C: float = 0.75, data_sup: float = 0.0,
               dlam: float = 0.05) -> RayReport:
    """LHS s^{3/2}|v| + (s/t)^{-1} s^{3/2}|perp v| at the anchor against V.

    ``data_sup`` is sup|v| + sup|d_t v| over the initial hyperboloid H_2; it only
    enters for r/t <= 3/5.  F is accumulated from absolute values.
    """
    s, s0 = anchor.s, anchor.s0
    n = max(int(np.ceil((s - s0) / dlam)), 4)
    lam = np.linspace(s0, s, n + 1)
    T, X = anchor.points(lam)
    data = ev(T, X)
    st = source_terms(T, X, data)
    f = np.zeros_like(T) if data.f is None else data.f
    integrand = np.abs(st.R1 + st.R2 + st.R3 + lam**1.5 * f)
    F = cumulative_trapezoid(integrand, lam, initial=0.0)
    hp = np.abs(np.gradient(st.hb00, lam, edge_order=2)) if len(lam) > 2 else np.zeros_like(lam)
    A = cumulative_trapezoid(hp, lam, initial=0.0)
    weight = hp * np.exp(C * (A[-1] - A))
    V = F[-1] + np.trapezoid(F * weight, lam)
    if anchor.r / anchor.t <= 0.6:
        V += data_sup * (1.0 + np.trapezoid(weight, lam))
    # anchor values: v and perp v = v_t + (x^a/t) v_a
    d = data.v.d
    v_end = data.v.f[-1]
    perp = d[0][-1] + sum(anchor.x[a] / anchor.t * d[a + 1][-1] for a in range(3))
    lhs = s**1.5 * abs(v_end) + anchor.t / s * s**1.5 * abs(perp)
    ratio = lhs / V if V > 0 else (0.0 if lhs == 0 else np.inf)
    return RayReport(anchor.t, anchor.r, s0, float(F[-1]), float(V), float(lhs), float(ratio),
                     float(A[-1]))


RAY_COLUMNS = ["t", "r", "s0", "F", "V", "lhs", "ratio", "h_var"]


def write_ray_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RAY_COLUMNS)
        for rep in reports:
            w.writerow([repr(float(getattr(rep, k))) for k in RAY_COLUMNS])
