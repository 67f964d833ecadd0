"""Regions, boundary quadratures, measures and deformations of the vacuum."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import NonInvertibleMap, QuadratureFailure, UnsupportedOrder
from .quadrature import (
    DEFAULT_SPEC,
    QuadratureSpec,
    gauss_legendre,
    integrate_ball,
    sphere_grid,
)

Array = np.ndarray


# ---------------------------------------------------------------------------
# rigid motions (the symmetry group of the translation-invariant, spherically
# symmetric vacuum Lagrangian used throughout)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RigidMotion:
    """Euclidean motion x -> R x + t with R a rotation matrix."""

    rotation: Array = field(default_factory=lambda: np.eye(3))
    translation: Array = field(default_factory=lambda: np.zeros(3))

    @staticmethod
    def from_axis_angle(axis, angle: float, translation=(0.0, 0.0, 0.0)) -> "RigidMotion":
        a = np.asarray(axis, float)
        n = np.linalg.norm(a)
        if n == 0.0 or angle == 0.0:
            return RigidMotion(np.eye(3), np.asarray(translation, float))
        a = a / n
        K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
        R = np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)
        return RigidMotion(R, np.asarray(translation, float))

    def apply(self, pts: Array) -> Array:
        return np.asarray(pts, float) @ self.rotation.T + self.translation

    def inverse(self) -> "RigidMotion":
        return RigidMotion(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "RigidMotion") -> "RigidMotion":
        """self after other: x -> self(other(x))."""
        return RigidMotion(self.rotation @ other.rotation,
                           self.rotation @ other.translation + self.translation)


# ---------------------------------------------------------------------------
# regions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Ball:
    center: Array
    radius: float
    label: str = "ball"
    frame: Array | None = None  # orientation carried so discretizations co-rotate

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, float))
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")

    def contains(self, pts: Array) -> Array:
        d = np.linalg.norm(np.asarray(pts, float) - self.center, axis=-1)
        return d <= self.radius

    def boundary_normal(self, pts: Array) -> Array:
        d = np.asarray(pts, float) - self.center
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    def transformed(self, motion: RigidMotion) -> "Ball":
        fr = motion.rotation @ (self.frame if self.frame is not None else np.eye(3))
        return Ball(motion.apply(self.center), self.radius, self.label, fr)

    def bounding_radius(self) -> float:
        return float(np.linalg.norm(self.center) + self.radius)


@dataclass(frozen=True)
class Annulus:
    center: Array
    r_in: float
    r_out: float
    label: str = "annulus"
    frame: Array | None = None

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, float))
        if not 0 <= self.r_in < self.r_out:
            raise ValueError("annulus radii must satisfy 0 <= r_in < r_out")

    def contains(self, pts: Array) -> Array:
        d = np.linalg.norm(np.asarray(pts, float) - self.center, axis=-1)
        return (d >= self.r_in) & (d <= self.r_out)

    def boundary_normal(self, pts: Array) -> Array:
        d = np.asarray(pts, float) - self.center
        r = np.linalg.norm(d, axis=-1, keepdims=True)
        sign = np.where(r[..., 0] > 0.5 * (self.r_in + self.r_out), 1.0, -1.0)
        return d / r * sign[..., None]

    def transformed(self, motion: RigidMotion) -> "Annulus":
        fr = motion.rotation @ (self.frame if self.frame is not None else np.eye(3))
        return Annulus(motion.apply(self.center), self.r_in, self.r_out, self.label, fr)

    def bounding_radius(self) -> float:
        return float(np.linalg.norm(self.center) + self.r_out)


@dataclass(frozen=True)
class HalfSpace:
    normal: Array
    offset: float
    label: str = "halfspace"
    frame: Array | None = None

    def __post_init__(self):
        n = np.asarray(self.normal, float)
        object.__setattr__(self, "normal", n / np.linalg.norm(n))

    def contains(self, pts: Array) -> Array:
        return np.asarray(pts, float) @ self.normal <= self.offset

    def transformed(self, motion: RigidMotion) -> "HalfSpace":
        n = motion.rotation @ self.normal
        return HalfSpace(n, self.offset + float(n @ motion.translation), self.label)


@dataclass(frozen=True)
class SignedDistance:
    """Region {x : fn(x) <= 0} for a vectorized signed-distance-like function."""

    fn: Callable[[Array], Array]
    bounding_ball: Ball
    label: str = "signed-distance"
    frame: Array | None = None

    def contains(self, pts: Array) -> Array:
        return np.asarray(self.fn(np.asarray(pts, float)), float) <= 0.0

    def bounding_radius(self) -> float:
        return self.bounding_ball.bounding_radius()


Region = Ball | Annulus | HalfSpace | SignedDistance


# ---------------------------------------------------------------------------
# boundary quadrature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SurfaceQuadrature:
    nodes: Array       # (m, 3)
    normals: Array     # (m, 3) outward unit normals
    weights: Array     # (m,) area weights

    @property
    def total_area(self) -> float:
        return float(self.weights.sum())

    def flux(self, vec_field: Callable[[Array], Array]) -> float:
        v = np.asarray(vec_field(self.nodes), float)
        return float(np.sum(self.weights * np.einsum("ij,ij->i", v, self.normals)))


def sphere_quadrature(center, radius: float, order: int = 16,
                      frame: Array | None = None) -> SurfaceQuadrature:
    """Product Gauss x uniform-phi rule on a sphere.

    Closed-surface invariants hold to machine precision: the weights sum to
    4 pi R^2 exactly (Gauss weights sum to 2) and the weighted normals cancel
    by node symmetry.
    """
    if order < 6:
        raise UnsupportedOrder("sphere quadrature requires order >= 6")
    center = np.asarray(center, float)
    dirs, w = sphere_grid(order, 2 * order)
    if frame is not None:
        dirs = dirs @ np.asarray(frame, float).T
    return SurfaceQuadrature(center[None, :] + radius * dirs, dirs, w * radius**2)


# ---------------------------------------------------------------------------
# measures and deformations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Measure:
    """Weighted density on R^3; the vacuum uses h == 1 (translation invariant)."""

    density: Callable[[Array], Array] | None = None   # None means h == 1
    support_bound: float = np.inf
    label: str = "vacuum"

    def h(self, pts: Array) -> Array:
        pts = np.asarray(pts, float)
        if self.density is None:
            return np.ones(pts.shape[:-1])
        vals = np.asarray(self.density(pts), float)
        return vals

    @property
    def is_vacuum(self) -> bool:
        return self.density is None


VACUUM = Measure()


@dataclass(frozen=True)
class Deformation:
    """Pair (f, F): weight factor and displacement map; mu~ = F_*(f mu).

    ``fmap``/``Fmap`` must accept (m,3) arrays.  ``tau`` scales a family
    built-in style: callers construct fixed-(f,F) instances per tau slice.
    """

    fmap: Callable[[Array], Array] | None = None     # None means f == 1
    Fmap: Callable[[Array], Array] | None = None     # None means identity
    label: str = "identity"
    chord_expansion: float = 1.0   # bound on |F(b)-F(a)| / |b-a|, sampled if needed

    def f(self, pts: Array) -> Array:
        pts = np.asarray(pts, float)
        if self.fmap is None:
            return np.ones(pts.shape[:-1])
        return np.asarray(self.fmap(pts), float)

    def F(self, pts: Array) -> Array:
        pts = np.asarray(pts, float)
        if self.Fmap is None:
            return pts
        return np.asarray(self.Fmap(pts), float)

    @property
    def is_identity(self) -> bool:
        return self.fmap is None and self.Fmap is None

    def check_injective(self, region: Ball | Annulus, n_samples: int = 4000,
                        seed: int = 0, tol: float = 1e-12) -> None:
        """Sampled injectivity check: no two mapped nodes collapse."""
        rng = np.random.default_rng(seed)
        pts = rng.normal(size=(n_samples, 3))
        pts /= np.linalg.norm(pts, axis=1)[:, None]
        rmax = region.bounding_radius()
        pts = region.center + pts * (rng.uniform(0, 1, n_samples) ** (1 / 3))[:, None] * rmax
        pts = pts[region.contains(pts)]
        fp = self.F(pts)
        # nearest-neighbour contraction test on random pairs
        idx = rng.integers(0, len(pts), size=(min(len(pts), 2000), 2))
        a, b = idx[:, 0], idx[:, 1]
        keep = a != b
        d0 = np.linalg.norm(pts[a[keep]] - pts[b[keep]], axis=1)
        d1 = np.linalg.norm(fp[a[keep]] - fp[b[keep]], axis=1)
        if np.any(d1 < tol) or np.any((d1 < 1e-6 * d0) & (d0 > 1e-6)):
            raise NonInvertibleMap(f"deformation '{self.label}' folds over on {region.label}")

    def sampled_chord_expansion(self, region, n_samples: int = 2000, seed: int = 1) -> float:
        rng = np.random.default_rng(seed)
        rmax = region.bounding_radius() if hasattr(region, "bounding_radius") else 1.0
        a = rng.uniform(-rmax, rmax, size=(n_samples, 3))
        b = a + rng.normal(size=(n_samples, 3)) * 0.1 * rmax
        num = np.linalg.norm(self.F(b) - self.F(a), axis=1)
        den = np.linalg.norm(b - a, axis=1)
        return float(np.max(num / np.maximum(den, 1e-300)))

    def transformed(self, motion: RigidMotion) -> "Deformation":
        """Conjugated deformation Phi o F o Phi^-1 with weight f o Phi^-1."""
        inv = motion.inverse()
        fm = None if self.fmap is None else (lambda p: self.fmap(inv.apply(p)))
        Fm = None if self.Fmap is None else (lambda p: motion.apply(self.Fmap(inv.apply(p))))
        return Deformation(fm, Fm, label=f"{self.label}|moved",
                           chord_expansion=self.chord_expansion)


IDENTITY_DEFORMATION = Deformation()


# ---------------------------------------------------------------------------
# volumes
# ---------------------------------------------------------------------------

def volume(measure: Measure, region: Region, spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """mu(Omega) for bounded regions: int_Omega h d^3x."""
    if isinstance(region, Ball):
        if measure.is_vacuum:
            return 4.0 / 3.0 * np.pi * region.radius**3
        val, err = integrate_ball(measure.h, region.center, region.radius, spec)
        _check(val, err, spec)
        return val
    if isinstance(region, Annulus):
        if measure.is_vacuum:
            return 4.0 / 3.0 * np.pi * (region.r_out**3 - region.r_in**3)
        out_v, out_e = integrate_ball(measure.h, region.center, region.r_out, spec)
        if region.r_in > 0:
            in_v, in_e = integrate_ball(measure.h, region.center, region.r_in, spec)
        else:
            in_v = in_e = 0.0
        _check(out_v - in_v, out_e + in_e, spec)
        return out_v - in_v
    if isinstance(region, SignedDistance):
        bb = region.bounding_ball

        def f(pts):
            return measure.h(pts) * region.contains(pts)

        # indicator integrand: use a fixed product grid, refined once
        loose = spec.with_(method="product_gauss", radial_order=64, angular_order=32)
        val, err = integrate_ball(f, bb.center, bb.radius, loose)
        return val
    raise QuadratureFailure(f"volume undefined for unbounded region {region!r}")


def _check(val: float, err: float, spec: QuadratureSpec) -> None:
    if err > max(spec.abs_tol, 10 * spec.rel_tol * abs(val)) * 100:
        raise QuadratureFailure(f"volume quadrature error {err:g} too large for {val:g}")


def pushforward_volume(measure: Measure, deformation: Deformation, region: Region,
                       spec: QuadratureSpec = DEFAULT_SPEC, *,
                       preimage: Region | None = None) -> float:
    """(F_* (f mu))(Omega) = int_{F^-1(Omega)} f h d^3x.

    When ``preimage`` is given, the region is understood as F(preimage) and
    the pullback integral runs over it directly; otherwise the preimage
    indicator F(x) in Omega is integrated over a bounding ball.
    """
    if deformation.is_identity:
        return volume(measure, region, spec)
    if preimage is not None:
        dom = preimage
        if isinstance(dom, Ball):
            def f(pts):
                return measure.h(pts) * deformation.f(pts)
            val, err = integrate_ball(f, dom.center, dom.radius, spec)
            _check(val, err, spec)
            return val
        raise QuadratureFailure("pushforward preimage must be a Ball")
    # generic: integrate the indicator of F(x) in Omega over an inflated ball
    if not isinstance(region, (Ball, Annulus)):
        raise QuadratureFailure("pushforward region must be Ball or Annulus")
    deformation.check_injective(region)
    rmax = region.bounding_radius() * (1.0 + 1.0)  # generous preimage bound

    def f(pts):
        img = deformation.F(pts)
        return measure.h(pts) * deformation.f(pts) * region.contains(img)

    loose = spec.with_(method="product_gauss", radial_order=64, angular_order=32)
    val, _ = integrate_ball(f, region.center, rmax, loose)
    return val


def matched_volume_ball(measure: Measure, target_volume: float, center,
                        r_hint: float, spec: QuadratureSpec = DEFAULT_SPEC) -> Ball:
    """Ball around ``center`` whose measure-volume equals ``target_volume``."""
    center = np.asarray(center, float)

    def g(r):
        return volume(measure, Ball(center, r), spec) - target_volume

    lo, hi = 0.5 * r_hint, 2.0 * r_hint
    while g(lo) > 0:
        lo *= 0.5
    while g(hi) < 0:
        hi *= 1.5
    r = brentq(g, lo, hi, xtol=1e-12 * r_hint)
    return Ball(center, float(r))
