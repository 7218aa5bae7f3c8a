"""Coordinates, cone membership and the Cartesian / semi-hyperboloidal /
hyperboloidal frames of Minkowski space with signature (-,+,+,+).

Frame matrices are stored with row index = new frame, column index = old
frame, so that ``new_deriv[alpha] = sum_beta M[alpha, beta] * d_beta``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CONE_TOL = 1e-9
FRAME_KINDS = ("Phi", "Psi", "PhiBar", "PsiBar")
FRAMES = ("cartesian", "semi_hyperboloidal", "hyperboloidal")
MINKOWSKI = np.diag([-1.0, 1.0, 1.0, 1.0])


class ConeError(ValueError):
    """Raised for points outside the region where the foliation is defined."""


@dataclass(frozen=True)
class SpacetimePoint:
    t: float
    x: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(3))

    @property
    def r(self) -> float:
        return float(np.linalg.norm(self.x))

    @property
    def s(self) -> float:
        if self.t <= self.r:
            raise ConeError(f"t={self.t} <= r={self.r}: hyperbolic time undefined")
        return float(np.sqrt((self.t - self.r) * (self.t + self.r)))


@dataclass(frozen=True)
class HyperboloidalPoint:
    s: float
    xbar: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        if not self.s > 0:
            raise ConeError("hyperbolic time must be positive")
        object.__setattr__(self, "s", float(self.s))
        object.__setattr__(self, "xbar", np.asarray(self.xbar, dtype=float).reshape(3))


def inside_cone(p: SpacetimePoint, tol: float = CONE_TOL) -> bool:
    """Membership in K = {r < t - 1}; a band of width ``tol`` counts as boundary."""
    return bool(p.t - 1.0 - p.r > tol)


def to_hyperboloidal(p: SpacetimePoint) -> HyperboloidalPoint:
    if p.t <= p.r:
        raise ConeError(f"point (t={p.t}, r={p.r}) is not inside the light cone")
    return HyperboloidalPoint(p.s, p.x.copy())


def from_hyperboloidal(q: HyperboloidalPoint) -> SpacetimePoint:
    return SpacetimePoint(float(np.hypot(q.s, np.linalg.norm(q.xbar))), q.xbar.copy())


@dataclass(frozen=True)
class FrameMatrix:
    entries: np.ndarray
    kind: str

    def __matmul__(self, other: "FrameMatrix") -> np.ndarray:
        return self.entries @ other.entries


def _frame_entries(kind: str, t: float, x: np.ndarray) -> np.ndarray:
    M = np.eye(4)
    if kind == "Phi":
        M[1:, 0] = x / t
    elif kind == "Psi":
        M[1:, 0] = -x / t
    else:
        r = float(np.linalg.norm(x))
        if t <= r * (1.0 + 1e-14):
            raise ConeError("barred frames degenerate at s = 0")
        s = np.sqrt((t - r) * (t + r))
        if kind == "PhiBar":
            M[0, 0] = s / t
            M[1:, 0] = x / t
        elif kind == "PsiBar":
            M[0, 0] = t / s
            M[1:, 0] = -x / s
        else:
            raise ValueError(f"unknown frame kind {kind!r}; expected one of {FRAME_KINDS}")
    return M


def frame_matrix(kind: str, p: SpacetimePoint) -> FrameMatrix:
    """Transition matrix of the requested kind at ``p``.

    Phi maps Cartesian derivatives to the semi-hyperboloidal ones and Psi is
    its inverse; PhiBar / PsiBar play the same role for the hyperboloidal frame.
    """
    if kind not in FRAME_KINDS:
        raise ValueError(f"unknown frame kind {kind!r}")
    if p.t <= p.r:
        raise ConeError("point outside the light cone")
    return FrameMatrix(_frame_entries(kind, p.t, p.x), kind)


def _to_cartesian(kind_frame: str):
    # (forward, inverse) matrix kinds for cartesian -> frame
    if kind_frame == "semi_hyperboloidal":
        return "Phi", "Psi"
    if kind_frame == "hyperboloidal":
        return "PhiBar", "PsiBar"
    raise ValueError(f"unknown frame {kind_frame!r}")


def tensor_reframe(components, from_frame: str, to_frame: str, p: SpacetimePoint,
                   index: str = "upper") -> np.ndarray:
    """Change the frame of a two-index tensor given by its 4x4 components.

    Upper indices transform with the inverse matrices (Psi, PsiBar), lower
    indices with the forward ones (Phi, PhiBar).
    """
    T = np.asarray(components, dtype=float)
    if T.shape != (4, 4):
        raise ValueError("components must be a 4x4 array")
    if index not in ("upper", "lower"):
        raise ValueError("index must be 'upper' or 'lower'")
    for fr in (from_frame, to_frame):
        if fr not in FRAMES:
            raise ValueError(f"unknown frame {fr!r}")
    if from_frame == to_frame:
        return T.copy()

    def apply(T, frame, forward):
        fwd, inv = _to_cartesian(frame)
        A = frame_matrix(fwd, p).entries
        B = frame_matrix(inv, p).entries
        if index == "lower":
            # T_new = A T A^T with A the derivative map
            return (A @ T @ A.T) if forward else (B @ T @ B.T)
        return (B.T @ T @ B) if forward else (A.T @ T @ A)

    if from_frame != "cartesian":
        T = apply(T, from_frame, forward=False)
    if to_frame != "cartesian":
        T = apply(T, to_frame, forward=True)
    return T


@dataclass(frozen=True)
class MetricComponents:
    lower: np.ndarray
    upper: np.ndarray
    frame: str


def metric_components(frame: str, p: SpacetimePoint) -> MetricComponents:
    if p.t <= p.r:
        raise ConeError("point outside the light cone")
    lower = tensor_reframe(MINKOWSKI, "cartesian", frame, p, index="lower")
    upper = tensor_reframe(MINKOWSKI, "cartesian", frame, p, index="upper")
    return MetricComponents(lower, upper, frame)


def random_cone_points(n: int, rng: np.random.Generator, t_range=(2.0, 50.0),
                       max_frac: float = 0.999) -> list[SpacetimePoint]:
    """Uniformly scattered points of K used by property checks."""
    pts = []
    for _ in range(n):
        t = rng.uniform(*t_range)
        r = rng.uniform(0.0, max_frac) * (t - 1.0)
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        pts.append(SpacetimePoint(t, r * d))
    return pts
