import math

import numpy as np
import pytest

from wkglab.wave_kernel import (
    RadialSource, SourceProfile, SphereIntegralQuery, dalembert_radial, kernel_sweep,
    kirchhoff_eval, sphere_integral_bound, sphere_integral_exact, sphere_integral_quadrature,
    sphere_integral_r0, sphere_ratio_sweep, supnorm_bound_check, supnorm_rhs, write_sweep_csv,
)

# u(20, r=10) for mu = nu = 1/4, C_f = 1, from the 1D d'Alembert reduction at epsrel 1e-10
FROZEN_U_20_10 = 0.04903228836772632


def test_source_profile_validation_and_support():
    with pytest.raises(ValueError):
        SourceProfile(1.0, 0.0, 0.25)
    with pytest.raises(ValueError):
        SourceProfile(1.0, 0.25, 0.0)
    f = SourceProfile(2.0, 0.25, 0.25)
    assert f(10.0, 9.5) == 0.0
    assert f(10.0, 3.0) == pytest.approx(2.0 * 10.0**-2.25 * 7.0**-0.75)


def test_sphere_integral_zero_below_threshold():
    q = SphereIntegralQuery(0.3, 10.0, 3.0, 0.25)
    assert sphere_integral_exact(q) == 0.0
    assert sphere_integral_quadrature(q) == 0.0


def test_sphere_integral_matches_direct_quadrature():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(60):
        t = rng.uniform(3.0, 50.0)
        r = rng.uniform(0.01, 0.98) * (t - 1.0)
        mu = rng.choice([0.1, 0.25, 0.5])
        lo = (t - r + 1.0) / (2.0 * t)
        lam = rng.uniform(lo, 1.0)
        q = SphereIntegralQuery(lam, t, r, mu)
        e, d = sphere_integral_exact(q), sphere_integral_quadrature(q)
        if d > 0:
            worst = max(worst, abs(e - d) / d)
    assert worst < 1e-6


@pytest.mark.parametrize("lam", [0.6, 0.8, 0.95])
def test_sphere_integral_r0_limit(lam):
    t, mu = 10.0, 0.25
    ref = 4 * math.pi * (2 * lam - 1) ** (mu - 1) * (1 - lam) ** 2
    assert sphere_integral_r0(lam, t, mu) == pytest.approx(ref, rel=1e-15)
    for r in (1e-6, 1e-9):
        got = sphere_integral_exact(SphereIntegralQuery(lam, t, r, mu))
        assert abs(got / ref - 1) < 1e-10


def test_sphere_bound_case_one_example():
    q = SphereIntegralQuery(0.3, 10.0, 3.0, 0.25)
    assert sphere_integral_bound(q) == pytest.approx(0.3 * 10 * 0.7 / (0.25 * 3) * 0.7**0.25)
    with pytest.raises(ValueError):
        SphereIntegralQuery(1.2, 10.0, 3.0, 0.25)


def test_sphere_exact_continuous_across_case_boundaries():
    t, r, mu = 20.0, 4.0, 0.25
    lo = (t - r + 1) / (2 * t)
    lams = np.linspace(lo + 1e-9, 1.0, 20001)
    vals = np.array([sphere_integral_exact(SphereIntegralQuery(l, t, r, mu)) for l in lams])
    jumps = np.abs(np.diff(vals))
    # a continuous function sampled this finely has no jump above a few grid-steps' variation
    assert jumps.max() < 5e-3 * vals.max()
    for b in ((t + r + 1) / (2 * t), (t - r) / t):
        below = sphere_integral_exact(SphereIntegralQuery(b - 1e-10, t, r, mu))
        above = sphere_integral_exact(SphereIntegralQuery(b + 1e-10, t, r, mu))
        assert abs(above - below) < 1e-6


def test_sphere_ratio_bounded_and_stable_under_refinement():
    coarse = sphere_ratio_sweep([5, 10, 20, 50], [0, 0.3, 0.6, 0.9], 0.25, n_lambda=40)
    fine = sphere_ratio_sweep(np.linspace(5, 50, 10), np.linspace(0, 0.9, 10), 0.25, n_lambda=80)
    assert np.isfinite(coarse) and coarse > 0
    assert abs(fine / coarse - 1) < 0.2


def test_kirchhoff_zero_source():
    assert kirchhoff_eval(SourceProfile(0.0, 0.25, 0.25), 10.0, [1, 0, 0]) == 0.0


def test_kirchhoff_frozen_fixture():
    f = SourceProfile(1.0, 0.25, 0.25)
    assert kirchhoff_eval(f, 20.0, [10.0, 0, 0], epsrel=1e-10) == pytest.approx(FROZEN_U_20_10,
                                                                               rel=1e-8)
    # rotation invariance of the representation
    v = kirchhoff_eval(f, 20.0, [6.0, 0.0, 8.0], epsrel=1e-10)
    assert v == pytest.approx(FROZEN_U_20_10, rel=1e-8)


@pytest.mark.parametrize("t,r", [(6.0, 1.0), (12.0, 7.5), (30.0, 3.0)])
def test_kirchhoff_vs_dalembert_profile(t, r):
    f = SourceProfile(1.5, 0.1, -0.25)
    a = kirchhoff_eval(f, t, [r, 0, 0], epsrel=1e-10)
    b = dalembert_radial(lambda tau, q: float(f(tau, q)), t, r)
    assert a == pytest.approx(b, rel=1e-4)


def test_kirchhoff_generic_radial_source_vs_dalembert():
    fn = lambda tau, q: math.exp(-q * q) * math.cos(q) / tau**2
    src = RadialSource(fn)
    for t, r in [(5.0, 0.5), (9.0, 2.0)]:
        a = kirchhoff_eval(src, t, [0, r, 0], epsrel=1e-10)
        b = dalembert_radial(lambda tau, q: fn(tau, q) if q < tau - 1 else 0.0, t, r)
        assert a == pytest.approx(b, rel=1e-4)


def test_kirchhoff_vanishes_outside_domain_of_influence():
    f = SourceProfile(1.0, 0.25, 0.25)
    t = 10.0
    assert kirchhoff_eval(f, t, [2 * t - 3 + 0.01, 0, 0]) == 0.0
    # sources inside K only influence K itself, a sharper statement
    assert kirchhoff_eval(f, t, [t - 1 + 1e-6, 0, 0]) == 0.0
    assert kirchhoff_eval(f, t, [t - 1.5, 0, 0]) > 0.0


def test_supnorm_rhs_branches():
    f = SourceProfile(1.0, 0.25, 0.25)
    assert supnorm_rhs(f, 10, 4) == pytest.approx(16 * 6**0.0 / 10)
    g = SourceProfile(1.0, 0.25, -0.25)
    assert supnorm_rhs(g, 10, 4) == pytest.approx(16 * 6**0.25 * 10**-0.75)


def test_supnorm_ratio_stable_over_t():
    samples = [(t, rt * t) for t in (5, 10, 20, 35, 50) for rt in (0, 0.3, 0.6, 0.9)]
    for nu in (0.25, -0.25):
        rep = supnorm_bound_check(SourceProfile(1.0, 0.25, nu), samples)
        assert rep.skipped == 2  # (5, 4.5) and (10, 9) are not inside K
        assert np.isfinite(rep.max_ratio) and rep.max_ratio > 0
        assert rep.max_ratio < 1.0
    zero = supnorm_bound_check(SourceProfile(0.0, 0.25, 0.25), samples)
    assert zero.max_ratio == 0.0


@pytest.mark.parametrize("nu", [0.25, -0.1])
def test_supnorm_ratio_saturates_in_t(nu):
    # the ratio approaches a finite limit: increments over dyadic t shrink
    f = SourceProfile(1.0, 0.25, nu)
    for rt in (0.0, 0.6):
        ratios = [kirchhoff_eval(f, t, [rt * t, 0, 0]) / supnorm_rhs(f, t, rt * t)
                  for t in (10.0, 40.0, 160.0, 640.0)]
        inc = np.diff(ratios)
        assert np.all(inc > 0) and np.all(np.diff(inc) < 0)
        assert ratios[-1] < 1.0


def test_kernel_sweep_tolerance_stability(tmp_path):
    pts = [(t, rt, mu, nu) for t in (5.0, 20.0) for rt in (0.0, 0.6, 0.9)
           for mu in (0.1, 0.5) for nu in (-0.1, 0.5)]
    a = kernel_sweep(pts, epsrel=1e-6)
    b = kernel_sweep(pts, epsrel=1e-10)
    assert a.skipped == b.skipped == 4
    assert abs(a.max_ratio / b.max_ratio - 1) < 0.2
    write_sweep_csv(b, tmp_path / "sweep.csv")
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert lines[0] == "t,r,mu,nu,u,bound,ratio"
    assert len(lines) == len(b.rows) + 1
