import numpy as np
import pytest

from wkglab.geometry import (
    ConeError, SpacetimePoint, HyperboloidalPoint, frame_matrix, from_hyperboloidal,
    inside_cone, metric_components, random_cone_points, tensor_reframe, to_hyperboloidal,
)


def explicit_semi_upper(t, x):
    m = np.eye(4)
    r2 = x @ x
    m[0, 0] = -(t * t - r2) / t**2
    m[0, 1:] = m[1:, 0] = -x / t
    return m


def explicit_semi_lower(t, x):
    m = np.eye(4)
    m[0, 0] = -1.0
    m[0, 1:] = m[1:, 0] = -x / t
    m[1:, 1:] -= np.outer(x, x) / t**2
    return m


def explicit_hyp_upper(t, x):
    s = np.sqrt(t * t - x @ x)
    m = np.eye(4)
    m[0, 0] = -1.0
    m[0, 1:] = m[1:, 0] = -x / s
    return m


def explicit_hyp_lower(t, x):
    s = np.sqrt(t * t - x @ x)
    m = np.eye(4)
    m[0, 0] = -s * s / t**2
    m[0, 1:] = m[1:, 0] = -s * x / t**2
    m[1:, 1:] -= np.outer(x, x) / t**2
    return m


@pytest.fixture
def pts():
    return random_cone_points(50, np.random.default_rng(3))


def test_to_hyperboloidal_examples():
    q = to_hyperboloidal(SpacetimePoint(2.0, [0, 0, 0]))
    assert q.s == 2.0 and np.all(q.xbar == 0)
    q = to_hyperboloidal(SpacetimePoint(5.0, [3, 0, 0]))
    assert q.s == pytest.approx(4.0, abs=1e-14)
    with pytest.raises(ConeError):
        to_hyperboloidal(SpacetimePoint(2.0, [2, 0, 0]))
    with pytest.raises(ConeError):
        HyperboloidalPoint(0.0)


def test_round_trip(pts):
    for p in pts:
        back = from_hyperboloidal(to_hyperboloidal(p))
        assert abs(back.t - p.t) <= 1e-12 * p.t
        assert np.allclose(back.x, p.x, rtol=1e-12, atol=0)


def test_cone_membership_boundary_band():
    assert inside_cone(SpacetimePoint(5.0, [3.0, 0, 0]))
    assert not inside_cone(SpacetimePoint(5.0, [4.0, 0, 0]))
    assert not inside_cone(SpacetimePoint(5.0, [4.0 - 5e-10, 0, 0]))
    assert inside_cone(SpacetimePoint(5.0, [4.0 - 1e-8, 0, 0]))


def test_phi_examples():
    assert np.array_equal(frame_matrix("Phi", SpacetimePoint(3.0, [0, 0, 0])).entries, np.eye(4))
    M = frame_matrix("Phi", SpacetimePoint(2.0, [1, 0, 0])).entries
    expected = np.eye(4)
    expected[1, 0] = 0.5
    assert np.array_equal(M, expected)
    Pb = frame_matrix("PsiBar", SpacetimePoint(5.0, [3, 0, 0])).entries
    assert np.allclose(Pb[:, 0], [5 / 4, -3 / 4, 0, 0])


def test_inverse_pairs(pts):
    for p in pts:
        assert np.abs(frame_matrix("Psi", p) @ frame_matrix("Phi", p) - np.eye(4)).max() < 1e-12
        assert np.abs(frame_matrix("Phi", p) @ frame_matrix("Psi", p) - np.eye(4)).max() < 1e-12
        assert np.abs(frame_matrix("PhiBar", p) @ frame_matrix("PsiBar", p) - np.eye(4)).max() < 1e-12


def test_barred_frame_rejects_degenerate():
    with pytest.raises(ConeError):
        frame_matrix("PsiBar", SpacetimePoint(2.0, [2.0, 0, 0]))
    with pytest.raises(ValueError):
        frame_matrix("Chi", SpacetimePoint(3.0, [0, 0, 0]))


def test_metric_examples():
    m = metric_components("semi_hyperboloidal", SpacetimePoint(4.0, [0, 0, 0]))
    assert np.allclose(m.upper, np.diag([-1, 1, 1, 1]))
    m = metric_components("semi_hyperboloidal", SpacetimePoint(5.0, [3, 0, 0]))
    assert m.upper[0, 0] == pytest.approx(-0.64, abs=1e-14)


def test_metric_matches_explicit_matrices(pts):
    for p in pts:
        semi = metric_components("semi_hyperboloidal", p)
        hyp = metric_components("hyperboloidal", p)
        assert np.abs(semi.upper - explicit_semi_upper(p.t, p.x)).max() < 1e-12
        assert np.abs(semi.lower - explicit_semi_lower(p.t, p.x)).max() < 1e-12
        assert np.abs(hyp.upper - explicit_hyp_upper(p.t, p.x)).max() < 1e-12
        assert np.abs(hyp.lower - explicit_hyp_lower(p.t, p.x)).max() < 1e-12
        for m in (semi, hyp):
            assert np.abs(m.upper @ m.lower - np.eye(4)).max() < 1e-10
        assert np.allclose(semi.upper[1:, 1:], np.eye(3))


def test_reframe_double_sum_oracle():
    p = SpacetimePoint(5.0, [3.0, 0, 0])
    H = np.diag([1.0, 1, 1, 1])
    Hb = tensor_reframe(H, "cartesian", "hyperboloidal", p)
    M = frame_matrix("PsiBar", p).entries
    oracle = np.zeros((4, 4))
    for a in range(4):
        for b in range(4):
            oracle[a, b] = sum(M[i, a] * M[j, b] * H[i, j] for i in range(4) for j in range(4))
    assert np.allclose(Hb, oracle, atol=1e-14)
    # (t/s)^2 + (x^1/s)^2 = 25/16 + 9/16
    assert Hb[0, 0] == pytest.approx(34 / 16)


def test_reframe_round_trip_and_bounds():
    rng = np.random.default_rng(11)
    for p in random_cone_points(100, rng):
        T = rng.normal(size=(4, 4))
        T = T + T.T
        C = np.abs(T).max()
        for fr in ("semi_hyperboloidal", "hyperboloidal"):
            for idx in ("upper", "lower"):
                there = tensor_reframe(T, "cartesian", fr, p, index=idx)
                back = tensor_reframe(there, fr, "cartesian", p, index=idx)
                assert np.allclose(back, T, atol=1e-9 * C * (p.t / p.s) ** 2)
        Tb = tensor_reframe(T, "cartesian", "hyperboloidal", p)
        ts = p.t / p.s
        # the l1 norm of (1, -x/t) is at most 1 + sqrt(3)
        k = 1 + np.sqrt(3)
        assert abs(Tb[0, 0]) <= k**2 * C * ts**2
        assert np.abs(Tb[0, 1:]).max() <= k * C * ts
        assert np.abs(Tb[1:, 1:]).max() <= C
