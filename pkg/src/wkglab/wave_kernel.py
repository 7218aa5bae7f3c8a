"""Retarded (Kirchhoff) solutions of -box u = f with zero data at t = 2 and
the sphere integral that controls their sup-norm.

The source family is f = C_f t^{-2-nu} (t-r)^{-1+mu} restricted to the cone
K = {r < t-1}.
"""
from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate


class QuadratureError(RuntimeError):
    def __init__(self, msg, abserr=float("nan")):
        super().__init__(f"{msg} (achieved error estimate {abserr:.3e})")
        self.abserr = abserr


@dataclass(frozen=True)
class SourceProfile:
    C_f: float = 1.0
    mu: float = 0.25
    nu: float = 0.25

    def __post_init__(self):
        if not 0.0 < self.mu <= 0.5:
            raise ValueError("mu must lie in (0, 1/2]")
        if not (0.0 < abs(self.nu) <= 0.5):
            raise ValueError("nu must satisfy 0 < |nu| <= 1/2")
        if self.C_f < 0:
            raise ValueError("C_f must be nonnegative")

    def __call__(self, t, r):
        t = np.asarray(t, dtype=float)
        r = np.asarray(r, dtype=float)
        inside = r < t - 1.0
        tr = np.where(inside, t - r, 1.0)
        return np.where(inside, self.C_f * t ** (-2.0 - self.nu) * tr ** (-1.0 + self.mu), 0.0)


@dataclass(frozen=True)
class RadialSource:
    """A generic spherically symmetric source supported in K.

    ``fn(tau, q)`` is evaluated only where q < tau - 1.
    """
    fn: Callable[[float, float], float]


@dataclass(frozen=True)
class SphereIntegralQuery:
    lam: float
    t: float
    r: float
    mu: float

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ValueError("lambda must lie in (0, 1]")
        if self.t < 2.0:
            raise ValueError("t must be >= 2")
        if not 0.0 <= self.r < self.t - 1.0:
            raise ValueError("need 0 <= r < t - 1")
        if not 0.0 < self.mu <= 0.5:
            raise ValueError("mu must lie in (0, 1/2]")


def _pow_diff(a: float, d: float, p: float) -> float:
    """(a + d)^p - a^p without cancellation for small d."""
    return a**p * math.expm1(p * math.log1p(d / a))


def _zeta_antiderivative_diff(lam: float, lo: float, d: float, mu: float) -> float:
    # int_lo^{lo+d} zeta^{mu-1} (lam - zeta) d zeta
    return lam * _pow_diff(lo, d, mu) / mu - _pow_diff(lo, d, mu + 1.0) / (mu + 1.0)


def sphere_integral_r0(lam: float, t: float, mu: float) -> float:
    if lam < (t + 1.0) / (2.0 * t):
        return 0.0
    return 4.0 * math.pi * (2.0 * lam - 1.0) ** (mu - 1.0) * (1.0 - lam) ** 2


def sphere_integral_exact(q: SphereIntegralQuery) -> float:
    """Closed-form value of the truncated sphere integral I(lambda, t, x/t)."""
    lam, t, r, mu = q.lam, q.t, q.r, q.mu
    if r == 0.0:
        return sphere_integral_r0(lam, t, mu)
    if lam <= (t - r + 1.0) / (2.0 * t):
        return 0.0
    rho, a = r / t, 1.0 - lam
    if a == 0.0:
        return 0.0
    lo = 2.0 * lam - 1.0 - rho
    if lo >= 1.0 / t:
        d = 2.0 * rho if rho <= a else 2.0 * a
    else:
        lo = 1.0 / t
        d = lam - abs(rho - a) - lo
    if d <= 0.0:
        return 0.0
    return 2.0 * math.pi * t * a / r * _zeta_antiderivative_diff(lam, lo, d, mu)


def sphere_integral_quadrature(q: SphereIntegralQuery, epsrel: float = 1e-11) -> float:
    """The same integral by direct 2D quadrature over the sphere |y| = 1 - lambda."""
    lam, t, r, mu = q.lam, q.t, q.r, q.mu
    a = 1.0 - lam
    rho = r / t
    if a == 0.0:
        return 0.0
    cap = lam - 1.0 / t
    if rho == 0.0:
        if a > cap:
            return 0.0
        cos0 = -1.0
    else:
        cos0 = (rho**2 + a**2 - cap**2) / (2.0 * rho * a)
        if cos0 >= 1.0:
            return 0.0
        cos0 = max(cos0, -1.0)
    theta0 = math.acos(cos0)

    def integrand(phi, theta):
        y = a * np.array([math.cos(theta), math.sin(theta) * math.cos(phi),
                          math.sin(theta) * math.sin(phi)])
        dist = math.sqrt((rho - y[0]) ** 2 + y[1] ** 2 + y[2] ** 2)
        return a * a * math.sin(theta) * (lam - dist) ** (mu - 1.0)

    val, _ = integrate.nquad(integrand, [[0.0, 2.0 * math.pi], [0.0, theta0]],
                             opts=[{"epsrel": epsrel, "epsabs": 0.0}] * 2)
    return val


def sphere_integral_bound(q: SphereIntegralQuery) -> float:
    """Case-wise majorant of I(lambda) (without implied constant).

    Below the support threshold (t-r+1)/(2t) the integral vanishes and the
    first-case expression is returned, which is then trivially an upper bound.
    """
    lam, t, r, mu = q.lam, q.t, q.r, q.mu
    if not 0.0 < lam <= 1.0:
        raise ValueError(f"lambda={lam} outside (0, 1]")
    b1 = (t + r + 1.0) / (2.0 * t)
    b2 = (t - r) / t
    if r > 0 and lam <= b1:
        return lam * t * (1.0 - lam) / (mu * r) * ((t - r) / t) ** mu
    if lam <= b2:
        return (1.0 - lam) * ((t + r) / t - lam) * (2.0 * lam - (t + r) / t) ** (mu - 1.0)
    return (1.0 - lam) * t / (mu * r) * ((t - r) / t) ** mu


def _inner_sphere(f, t: float, r: float, tau: float, epsrel: float) -> float:
    """Integral of f(tau, .) over the sphere |y - x| = t - tau, clipped to K."""
    rho = t - tau
    qmax = tau - 1.0
    if rho <= 0.0:
        return 0.0
    if isinstance(f, SourceProfile):
        mu = f.mu
        amp = f.C_f * tau ** (-2.0 - f.nu)
        if r == 0.0:
            if rho > qmax:
                return 0.0
            return amp * 4.0 * math.pi * rho * rho * (tau - rho) ** (mu - 1.0)
        q_lo, q_hi = abs(r - rho), min(r + rho, qmax)
        if q_hi <= q_lo:
            return 0.0
        # zeta = tau - q; int q (tau - q)^{mu-1} dq = int (tau - zeta) zeta^{mu-1} dzeta
        z_lo = tau - q_hi
        d = q_hi - q_lo
        return amp * 2.0 * math.pi * rho / r * _zeta_antiderivative_diff(tau, z_lo, d, mu)
    if r == 0.0:
        return 4.0 * math.pi * rho * rho * f.fn(tau, rho) if rho < qmax else 0.0
    q_lo, q_hi = abs(r - rho), min(r + rho, qmax)
    if q_hi <= q_lo:
        return 0.0
    val, _ = integrate.quad(lambda q: q * f.fn(tau, q), q_lo, q_hi, epsrel=epsrel, epsabs=0.0,
                            limit=200)
    return 2.0 * math.pi * rho / r * val


def kirchhoff_eval(f, t: float, x, epsrel: float = 1e-8, full_output: bool = False):
    """u(t,x) for -box u = f, u = d_t u = 0 at t = 2, by nested quadrature.

    The inner sphere integral is in closed form for ``SourceProfile``; the
    outer time integral uses adaptive Gauss-Kronrod with the kinks of the
    support geometry as breakpoints.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    r = float(np.linalg.norm(x)) if x.size > 1 else abs(float(x[0]))
    if t < 2.0:
        raise ValueError("t must be >= 2")
    tau0 = max(2.0, 0.5 * (t - r + 1.0))
    if tau0 >= t or (isinstance(f, SourceProfile) and f.C_f == 0.0):
        return (0.0, 0.0) if full_output else 0.0
    pts = sorted({p for p in (0.5 * (t + r + 1.0), t - r) if tau0 < p < t})

    def outer(tau):
        return _inner_sphere(f, t, r, tau, epsrel * 0.1) / (t - tau)

    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(outer, tau0, t, points=pts or None, epsrel=epsrel,
                                      epsabs=0.0, limit=400)
        except integrate.IntegrationWarning as exc:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                _, err = integrate.quad(outer, tau0, t, points=pts or None, epsrel=epsrel,
                                        epsabs=0.0, limit=400)
            raise QuadratureError(f"Kirchhoff quadrature failed at t={t}, r={r}: {exc}", err)
    val /= 4.0 * math.pi
    err /= 4.0 * math.pi
    return (val, err) if full_output else val


def dalembert_radial(f: Callable[[float, float], float], t: float, r: float,
                     epsrel: float = 1e-10) -> float:
    """Independent 1D oracle: r u solves the 1+1 wave equation with source r f."""
    if r <= 0:
        raise ValueError("the 1D reduction needs r > 0")

    def inner(tau):
        a, b = r - (t - tau), r + (t - tau)
        lim = tau - 1.0
        a, b = max(a, -lim), min(b, lim)
        if b <= a:
            return 0.0
        g = lambda q: q * f(tau, abs(q))
        brk = [p for p in (0.0,) if a < p < b]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            v, _ = integrate.quad(g, a, b, points=brk or None, epsrel=epsrel, epsabs=0.0,
                                  limit=200)
        return v

    tau0 = max(2.0, 0.5 * (t - r + 1.0))
    if tau0 >= t:
        return 0.0
    pts = sorted({p for p in (0.5 * (t + r + 1.0), t - r, 0.5 * (t - r + 1.0)) if tau0 < p < t})
    val, _ = integrate.quad(inner, tau0, t, points=pts or None, epsrel=epsrel, epsabs=0.0,
                            limit=400)
    return 0.5 * val / r


def supnorm_rhs(f: SourceProfile, t: float, r: float) -> float:
    """Right-hand side of the sharp sup-norm bound (without implied constant)."""
    mu, nu = f.mu, f.nu
    if nu > 0:
        return f.C_f / (nu * mu) * (t - r) ** (mu - nu) / t
    return f.C_f / (abs(nu) * mu) * (t - r) ** mu * t ** (-1.0 - nu)


@dataclass
class SweepRow:
    t: float
    r: float
    mu: float
    nu: float
    u: float
    bound: float
    ratio: float


@dataclass
class SupnormReport:
    rows: list
    skipped: int
    max_ratio: float


SWEEP_T = (5.0, 7.0, 10.0, 14.0, 20.0, 28.0, 36.0, 50.0)
SWEEP_RT = (0.0, 0.15, 0.3, 0.45, 0.6, 0.75, 0.9)
SWEEP_MU = (0.1, 0.25, 0.5)
SWEEP_NU = (-0.5, -0.25, -0.1, 0.1, 0.25, 0.5)


def sweep_points(ts=SWEEP_T, rts=SWEEP_RT, mus=SWEEP_MU, nus=SWEEP_NU):
    return list(itertools.product(ts, rts, mus, nus))


def supnorm_bound_check(f: SourceProfile, samples, epsrel: float = 1e-8) -> SupnormReport:
    """|u| / bound over (t, r) samples; samples outside K are skipped and counted."""
    rows, skipped = [], 0
    for t, r in samples:
        if not r < t - 1.0:
            skipped += 1
            continue
        u = kirchhoff_eval(f, t, [r, 0.0, 0.0], epsrel=epsrel)
        b = supnorm_rhs(f, t, r)
        rows.append(SweepRow(t, r, f.mu, f.nu, abs(u), b, abs(u) / b if b > 0 else 0.0))
    mx = max((row.ratio for row in rows), default=0.0)
    return SupnormReport(rows, skipped, mx)


def _sweep_worker(args):
    t, rt, mu, nu, epsrel = args
    r = rt * t
    if not r < t - 1.0:
        return None
    f = SourceProfile(1.0, mu, nu)
    u = kirchhoff_eval(f, t, [r, 0.0, 0.0], epsrel=epsrel)
    b = supnorm_rhs(f, t, r)
    return SweepRow(t, r, mu, nu, abs(u), b, abs(u) / b)


def kernel_sweep(points=None, epsrel: float = 1e-8, workers: int = 1) -> SupnormReport:
    """The acceptance sweep over (t, r/t, mu, nu)."""
    points = sweep_points() if points is None else points
    jobs = [(t, rt, mu, nu, epsrel) for t, rt, mu, nu in points]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as ex:
            out = list(ex.map(_sweep_worker, jobs, chunksize=16))
    else:
        out = [_sweep_worker(j) for j in jobs]
    rows = [o for o in out if o is not None]
    skipped = sum(o is None for o in out)
    return SupnormReport(rows, skipped, max((r.ratio for r in rows), default=0.0))


def write_sweep_csv(report: SupnormReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "r", "mu", "nu", "u", "bound", "ratio"])
        for row in report.rows:
            w.writerow([row.t, row.r, row.mu, row.nu, f"{row.u:.12e}", f"{row.bound:.12e}",
                        f"{row.ratio:.12e}"])


def sphere_ratio_sweep(ts, rts, mu: float, n_lambda: int = 40) -> float:
    """Max of exact I / case bound over a lambda grid for each (t, r)."""
    best = 0.0
    for t in ts:
        for rt in rts:
            r = rt * t
            if not r < t - 1.0:
                continue
            lo = (t - r + 1.0) / (2.0 * t)
            for lam in np.linspace(lo, 1.0, n_lambda + 2)[1:-1]:
                q = SphereIntegralQuery(float(lam), t, r, mu)
                b = sphere_integral_bound(q)
                if b > 0:
                    best = max(best, sphere_integral_exact(q) / b)
    return best
