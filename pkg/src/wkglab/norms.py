"""Hyperboloid integrals, energy functionals and inequality checks.

Integrals over H_s use the flat measure dx of the parametrization
x -> (sqrt(s^2 + |x|^2), x).  A field on H_s is carried as its restriction
w_s together with d_t u at the same nodes; the hyperbolic derivatives are
dbar_a u = d_a w_s and the Cartesian ones d_a u = d_a w_s - (x^a/t) d_t u.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from .fields import GUARD_CELLS, GridSpec


@dataclass
class HypField:
    """A field restricted to H_s with its time derivative."""
    grid: GridSpec
    s: float
    f: np.ndarray
    ft: np.ndarray
    mask_cone: bool = True

    def __post_init__(self):
        r = self.grid.radius()
        self.t = np.broadcast_to(np.sqrt(self.s**2 + r * r), self.grid.shape)
        inside = r < self.t - 1.0 if self.mask_cone else np.ones(self.grid.shape, bool)
        self.inside = np.broadcast_to(inside, self.grid.shape)
        self.f = np.where(self.inside, self.f, 0.0)
        self.ft = np.where(self.inside, self.ft, 0.0)

    @classmethod
    def from_sample(cls, sample, name: str, k: int = 0) -> "HypField":
        """Wrap d_t^k of a sampled field from a solver HyperboloidSample."""
        return cls(sample.grid, sample.s, sample.data[name][k], sample.data[name][k + 1])

    @classmethod
    def from_function(cls, grid: GridSpec, s: float, fn, fn_t, mask_cone: bool = False):
        """Restrict analytic callables fn(t, x1, x2, x3), fn_t(...) to H_s."""
        x = grid.positions()
        t = np.sqrt(s * s + np.sum(x * x, axis=0))
        return cls(grid, s, fn(t, *x), fn_t(t, *x), mask_cone)

    def positions(self) -> np.ndarray:
        return self.grid.positions()

    def dbar(self) -> list:
        """dbar_a u = d_a w_s.  Radial nodes sit at (r, 0, 0)."""
        if self.grid.mode == "radial1d":
            g = np.gradient(self.f, self.grid.dx)
            g[0] = 0.0
            return [g, np.zeros_like(g), np.zeros_like(g)]
        return list(np.gradient(self.f, self.grid.dx))

    def cartesian(self) -> list:
        """Spatial Cartesian derivatives d_a u."""
        x = self.positions()
        return [db - x[a] / self.t * self.ft for a, db in enumerate(self.dbar())]


# integrals ----------------------------------------------------------------------------

def _guard_band(grid: GridSpec, g: np.ndarray) -> np.ndarray:
    k = GUARD_CELLS
    if grid.mode == "radial1d":
        return g[-k:]
    return np.concatenate([g[:k].ravel(), g[-k:].ravel(), g[:, :k].ravel(), g[:, -k:].ravel(),
                           g[:, :, :k].ravel(), g[:, :, -k:].ravel()])


def l2f_integral(grid: GridSpec, g: np.ndarray, weight: np.ndarray | None = None) -> float:
    """Flat integral of g over the grid (trapezoid weights), no s/t factor.

    ``weight`` switches to a weighted measure, e.g. s/t for the geometric variant.
    """
    g = np.asarray(g, float)
    if np.max(np.abs(_guard_band(grid, g)), initial=0.0) > 1e-14:
        warnings.warn("integrand reaches the guard band; support may be truncated", RuntimeWarning)
    w = grid.quadrature_weights()
    if weight is not None:
        w = w * weight
    return float(np.sum(w * g))


def l2f_norm(grid: GridSpec, g: np.ndarray) -> float:
    return float(np.sqrt(max(l2f_integral(grid, np.asarray(g) ** 2), 0.0)))


# energies -------------------------------------------------------------------------------

ENERGY_FORMS = ("i", "ii", "iii")


def energy_density(hf: HypField, c: float = 0.0, form: str = "ii") -> np.ndarray:
    """Integrand of E_{m,c} in one of the three equivalent forms."""
    x = hf.positions()
    t, s, u, ut = hf.t, hf.s, hf.f, hf.ft
    mass = c * c * u * u
    if form == "ii":
        return (s / t * ut) ** 2 + sum(d * d for d in hf.dbar()) + mass
    ua = hf.cartesian()
    if form == "i":
        return ut**2 + sum(d * d for d in ua) + 2.0 * sum(x[a] / t * ut * ua[a] for a in range(3)) + mass
    if form == "iii":
        perp = ut + sum(x[a] / t * ua[a] for a in range(3))
        omega = sum(((x[a] * ua[b] - x[b] * ua[a]) / t) ** 2 for a in range(3) for b in range(a + 1, 3))
        return perp**2 + sum((s / t * d) ** 2 for d in ua) + omega + mass
    raise ValueError(f"form must be one of {ENERGY_FORMS}")


def energy_m(hf: HypField, c: float = 0.0, form: str = "ii") -> float:
    return l2f_integral(hf.grid, energy_density(hf, c, form))


def energy_m_all(hf: HypField, c: float = 0.0, rtol: float = 1e-8) -> dict:
    """E_{m,c} by all three forms; raises if they disagree beyond ``rtol``."""
    vals = {fm: energy_m(hf, c, fm) for fm in ENERGY_FORMS}
    scale = max(abs(v) for v in vals.values())
    spread = max(vals.values()) - min(vals.values())
    if spread > rtol * scale:
        raise AssertionError(f"energy forms disagree: {vals}")
    return vals


def energy_g(hf: HypField, h: np.ndarray, c: float = 0.0) -> float:
    """E_{g,c} for g = m - h, h^{ab} given as a (4, 4) + grid shape array on H_s.

    E_{g,c} = E_{m,c} + int 2 h^{ab} d_t v d_b v X_a - h^{ab} d_a v d_b v
    with X_0 = 1 and X_a = -x^a/t.
    """
    x = hf.positions()
    d = [hf.ft] + hf.cartesian()
    X = [np.ones_like(hf.t)] + [-x[a] / hf.t for a in range(3)]
    extra = 0.0
    for al in range(4):
        for be in range(4):
            hab = h[al, be]
            if not np.any(hab):
                continue
            extra = extra + hab * (2.0 * hf.ft * d[be] * X[al] - d[al] * d[be])
    return energy_m(hf, c) + l2f_integral(hf.grid, np.where(hf.inside, extra, 0.0))


def coercivity_ratio(hf: HypField, h: np.ndarray, c: float = 0.0) -> float:
    """E_{g,c} / E_{m,c}; stays in [1/2, 2] while |hbar^00| <= 1/3."""
    em = energy_m(hf, c)
    return energy_g(hf, h, c) / em if em > 0 else 1.0


@dataclass
class FieldEnergies:
    E_m: float
    E_mc: float
    E_gc: float
    l2f: float
    sup_f: float
    sup_perp: float
    sup_dbar: float


@dataclass
class EnergyRecord:
    s: float
    fields: dict = field(default_factory=dict)


def field_energies(hf: HypField, c: float = 0.0, h: np.ndarray | None = None) -> FieldEnergies:
    x = hf.positions()
    ua = hf.cartesian()
    perp = hf.ft + sum(x[a] / hf.t * ua[a] for a in range(3))
    em = energy_m(hf, 0.0)
    emc = em + c * c * l2f_integral(hf.grid, hf.f**2)
    egc = energy_g(hf, h, c) if h is not None else emc
    return FieldEnergies(em, emc, egc, l2f_norm(hf.grid, hf.f), float(np.max(np.abs(hf.f))),
                         float(np.max(np.abs(perp))),
                         float(max(np.max(np.abs(d)) for d in hf.dbar())))


ENERGY_COLUMNS = ("E_m", "E_mc", "E_gc", "l2f", "sup_f", "sup_perp", "sup_dbar")


def write_energy_csv(records, path) -> None:
    """One row per s with columns ``<field>:<functional>``."""
    records = list(records)
    names = sorted({k for r in records for k in r.fields})
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s"] + [f"{n}:{c}" for n in names for c in ENERGY_COLUMNS])
        for r in records:
            row = [repr(r.s)]
            for n in names:
                fe = r.fields.get(n)
                row += [repr(getattr(fe, c)) if fe else "" for c in ENERGY_COLUMNS]
            w.writerow(row)


# energy estimate ----------------------------------------------------------------------

@dataclass
class EnergyEstimateReport:
    s: np.ndarray
    E: np.ndarray
    flux_lhs: np.ndarray  # 1/2 E(s) - 1/2 E(s_0)
    flux_rhs: np.ndarray  # int int (s/t) d_t u f dx ds
    flux_residual: float  # max |lhs - rhs| / max E
    ineq_lhs: np.ndarray  # E(s)^{1/2}
    ineq_rhs: np.ndarray  # E(s_0)^{1/2} + int ||f|| ds
    slack: float  # min of rhs - lhs


def _cumtrapz(y, x):
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))
    return out


def energy_estimate_check(fields, sources, c: float = 0.0) -> EnergyEstimateReport:
    """Flux identity and energy inequality over a sequence of hyperboloids.

    ``fields`` are HypField objects at increasing s; ``sources`` the matching
    arrays of f = -box u + c^2 u on the same nodes.
    """
    s = np.array([hf.s for hf in fields])
    E = np.array([energy_m(hf, c) for hf in fields])
    dens = np.array([l2f_integral(hf.grid, hf.s / hf.t * hf.ft * np.where(hf.inside, f, 0.0))
                     for hf, f in zip(fields, sources)])
    fnorm = np.array([l2f_norm(hf.grid, np.where(hf.inside, f, 0.0)) for hf, f in zip(fields, sources)])
    lhs = 0.5 * (E - E[0])
    rhs = _cumtrapz(dens, s)
    ilhs = np.sqrt(E)
    irhs = np.sqrt(E[0]) + _cumtrapz(fnorm, s)
    scale = max(float(np.max(np.abs(E))), 1e-300)
    return EnergyEstimateReport(s, E, lhs, rhs, float(np.max(np.abs(lhs - rhs))) / scale if E.any() else 0.0,
                                ilhs, irhs, float(np.min((irhs - ilhs)[1:])) if len(s) > 1 else 0.0)


# Sobolev ----------------------------------------------------------------------------------

@dataclass
class SobolevReport:
    s: float
    lhs: float
    rhs: float
    ratio: float


def _radial_g(w, r, dr):
    """g = w'/r with its limit w''(0) at the origin, and g'/r likewise."""
    wp = np.gradient(w, dr)
    wpp0 = 2.0 * (w[1] - w[0]) / dr**2
    g = np.empty_like(w)
    g[1:] = wp[1:] / r[1:]
    g[0] = wpp0
    gp = np.gradient(g, dr)
    gpr = np.empty_like(w)
    gpr[1:] = gp[1:] / r[1:]
    gpr[0] = 2.0 * (g[1] - g[0]) / dr**2
    return wp, g, gpr


def boost_norms(hf: HypField) -> tuple[float, float, float]:
    """(||u||, sum_a ||L_a u||, sum_{a,b} ||L_b L_a u||) in L^2_f(H_s).

    On H_s the boosts are tangential: L_a u = t d_a w_s.
    """
    grid, t = hf.grid, hf.t
    w = hf.f
    n0 = l2f_norm(grid, w)
    if grid.mode == "full3d":
        La = [t * d for d in np.gradient(w, grid.dx)]
        n1 = sum(l2f_norm(grid, q) for q in La)
        n2 = 0.0
        for q in La:
            for d in np.gradient(q, grid.dx):
                n2 += l2f_norm(grid, t * d)
        return n0, n1, n2
    r = grid.radius()
    wp, g, gpr = _radial_g(w, r, grid.dx)
    t = np.asarray(t)
    n1 = 3.0 * np.sqrt(max(l2f_integral(grid, (t * wp) ** 2) / 3.0, 0.0))
    A = g + t * t * gpr
    B = t * t * g
    diag = r**4 * A * A / 5.0 + 2.0 * r * r * A * B / 3.0 + B * B
    off = r**4 * A * A / 15.0
    n2 = 3.0 * np.sqrt(max(l2f_integral(grid, diag), 0.0)) + 6.0 * np.sqrt(max(l2f_integral(grid, off), 0.0))
    return n0, n1, n2


def sobolev_check(hf: HypField) -> SobolevReport:
    """sup (s + |x|)^{3/2} |u| against sum_{|I| <= 2} ||L^I u|| on H_s."""
    r = hf.grid.radius()
    lhs = float(np.max((hf.s + r) ** 1.5 * np.abs(hf.f)))
    rhs = float(sum(boost_norms(hf)))
    return SobolevReport(hf.s, lhs, rhs, lhs / rhs if rhs > 0 else 0.0)


# Hardy -------------------------------------------------------------------------------------

@dataclass
class HardyReport:
    s: np.ndarray
    static_lhs: np.ndarray  # ||u / r||
    static_rhs: np.ndarray  # sum_a ||dbar_a u||
    lhs: np.ndarray  # ||u / s||
    rhs: np.ndarray

    @property
    def static_constant(self) -> float:
        m = self.static_rhs > 0
        return float(np.max(self.static_lhs[m] / self.static_rhs[m])) if m.any() else 0.0

    @property
    def constant(self) -> float:
        m = self.rhs > 0
        return float(np.max(self.lhs[m] / self.rhs[m])) if m.any() else 0.0


def _component_norms(hf: HypField, comps) -> float:
    """sum_a ||q_a|| for a radial-mode vector evaluated along (r, 0, 0).

    In radial mode a vector field x^a q(r)/r has ||component a||^2 = ||q||^2 / 3.
    """
    if hf.grid.mode == "radial1d":
        return 3.0 * np.sqrt(max(l2f_integral(hf.grid, comps[0] ** 2) / 3.0, 0.0))
    return float(sum(l2f_norm(hf.grid, q) for q in comps))


def static_hardy(hf: HypField) -> tuple[float, float]:
    """(||r^{-1} u||, sum_a ||dbar_a u||) with the node r = 0 excluded."""
    r = hf.grid.radius()
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(r > 0, hf.f / np.where(r > 0, r, 1.0), 0.0)
    return l2f_norm(hf.grid, np.broadcast_to(q, hf.grid.shape)), _component_norms(hf, hf.dbar())


def hardy_check(fields) -> HardyReport:
    """Static and time-integrated Hardy inequalities over hyperboloids s_0 < ... < s_k.

    The full form compares ||s^{-1} u||(s) with ||u||(s_0) + sum_a ||dbar_a u||(s)
    + sum_a int s'^{-1} (||dbar_a u|| + ||(s'/t) d_a u||) ds'.
    """
    fields = list(fields)
    s = np.array([hf.s for hf in fields])
    st_l, st_r, lhs, dbar_n, integrand = [], [], [], [], []
    for hf in fields:
        a, b = static_hardy(hf)
        st_l.append(a)
        st_r.append(b)
        lhs.append(l2f_norm(hf.grid, hf.f) / hf.s)
        dbar_n.append(b)
        weighted = [hf.s / hf.t * q for q in hf.cartesian()]
        integrand.append((b + _component_norms(hf, weighted)) / hf.s)
    u0 = l2f_norm(fields[0].grid, fields[0].f)
    rhs = u0 + np.array(dbar_n) + _cumtrapz(np.array(integrand), s)
    return HardyReport(s, np.array(st_l), np.array(st_r), np.array(lhs), rhs)


def write_inequality_csv(rows, path) -> None:
    """Rows of dicts sharing keys; header from the first row."""
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
