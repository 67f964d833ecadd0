"""Linearized metric perturbations and smooth vector fields used by jets.

All built-ins are chosen so that every comparison in the test suite is
self-oracled: polynomial metrics have closed-form derivatives, the long-range
potential is Newtonian, and the boundary-adapted families satisfy their
constraints by construction.  Metrics that do not decay by themselves carry a
smooth radial window so that the unbounded line integrals of the jet calculus
converge; all closed-form comparisons are evaluated strictly inside the
window's flat region.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

Array = np.ndarray


def _norm(z: Array) -> Array:
    return np.linalg.norm(z, axis=-1)


def smooth_window(r: Array, inner: float, outer: float) -> Array:
    """C-infinity transition: 1 for r <= inner, 0 for r >= outer."""
    r = np.asarray(r, float)
    t = np.clip((r - inner) / (outer - inner), 0.0, 1.0)
    out = np.zeros_like(t)
    rising = np.zeros_like(t)
    m = (t > 0.0) & (t < 1.0)
    tm = t[m]
    f1 = np.exp(-1.0 / (1.0 - tm))
    f0 = np.exp(-1.0 / tm)
    rising[m] = f0 / (f0 + f1)
    out = np.where(t <= 0.0, 1.0, np.where(t >= 1.0, 0.0, 1.0 - rising))
    return out


def bump_profile(t: Array) -> Array:
    """Standard C-infinity bump on (-1, 1), equal to 1 at t = 0."""
    t = np.asarray(t, float)
    out = np.zeros_like(t)
    m = np.abs(t) < 1.0
    tm = t[m]
    out[m] = np.exp(1.0 - 1.0 / (1.0 - tm * tm))
    return out


# ---------------------------------------------------------------------------
# metric perturbations h_ab
# ---------------------------------------------------------------------------

class MetricField:
    """Interface: batched values and the closed-form derivatives the
    asymptotic formulas are checked against."""

    #: radius beyond which the field vanishes identically (None: algebraic decay)
    reach: float | None = None
    #: radii of sharp-ish radial features, used as line-integral breakpoints
    feature_radii: tuple[float, ...] = ()
    #: equivariant under all rotations about the origin (h(Rz) = R h(z) R^T)
    spherically_symmetric: bool = False

    def h(self, z: Array) -> Array:
        raise NotImplementedError

    def trace(self, z: Array) -> Array:
        return np.einsum("...aa->...", self.h(z))

    def contract(self, z: Array, u: Array, w: Array) -> Array:
        """h_ab(z) u_a w_b with broadcastable u, w."""
        return np.einsum("...ab,...a,...b->...", self.h(z), u, w)

    def div(self, z: Array) -> Array:
        """d_b h_ab, closed form (valid inside the window region)."""
        raise NotImplementedError

    def grad_trace(self, z: Array) -> Array:
        raise NotImplementedError

    def dd_h(self, z: Array) -> Array:
        """d_a d_b h_ab, closed form."""
        raise NotImplementedError

    def lap_trace(self, z: Array) -> Array:
        raise NotImplementedError

    def scal_g(self, z: Array) -> Array:
        """Linearized scalar curvature d_ab h_ab - lap(tr h)."""
        return self.dd_h(z) - self.lap_trace(z)


@dataclass(frozen=True)
class PolynomialMetric(MetricField):
    """h_ab(x) = sum_k C_k^ab x^p x^q x^r ... (degree <= 3), radially windowed.

    ``terms`` is a sequence of (coef, exponents) with coef a symmetric 3x3
    array and exponents a length-3 integer tuple.
    """

    terms: tuple[tuple[Array, tuple[int, int, int]], ...]
    window_inner: float = 50.0
    window_outer: float = 100.0

    def __post_init__(self):
        fixed = []
        for coef, expo in self.terms:
            c = 0.5 * (np.asarray(coef, float) + np.asarray(coef, float).T)
            fixed.append((c, tuple(int(e) for e in expo)))
        object.__setattr__(self, "terms", tuple(fixed))
        object.__setattr__(self, "reach", float(self.window_outer))
        object.__setattr__(self, "feature_radii",
                           (float(self.window_inner), float(self.window_outer)))

    @staticmethod
    def _mono(z: Array, expo) -> Array:
        out = np.ones(z.shape[:-1])
        for axis, e in enumerate(expo):
            if e:
                out = out * z[..., axis] ** e
        return out

    @staticmethod
    def _mono_d(z: Array, expo, axis: int) -> Array:
        e = list(expo)
        if e[axis] == 0:
            return np.zeros(z.shape[:-1])
        c = e[axis]
        e[axis] -= 1
        return c * PolynomialMetric._mono(z, e)

    @staticmethod
    def _mono_dd(z: Array, expo, ax1: int, ax2: int) -> Array:
        e = list(expo)
        if e[ax1] == 0:
            return np.zeros(z.shape[:-1])
        c = e[ax1]
        e[ax1] -= 1
        if e[ax2] == 0:
            return np.zeros(z.shape[:-1])
        c *= e[ax2]
        e[ax2] -= 1
        return c * PolynomialMetric._mono(z, e)

    def _win(self, z: Array) -> Array:
        return smooth_window(_norm(z), self.window_inner, self.window_outer)

    def h(self, z: Array) -> Array:
        z = np.asarray(z, float)
        out = np.zeros(z.shape[:-1] + (3, 3))
        for coef, expo in self.terms:
            out += self._mono(z, expo)[..., None, None] * coef
        return out * self._win(z)[..., None, None]

    def contract(self, z: Array, u: Array, w: Array) -> Array:
        z = np.asarray(z, float)
        out = np.zeros(z.shape[:-1])
        for coef, expo in self.terms:
            cu = np.einsum("ab,...a,...b->...", coef, u, w)
            out += self._mono(z, expo) * cu
        return out * self._win(z)

    # closed-form derivatives: valid wherever the window equals one
    def div(self, z: Array) -> Array:
        z = np.asarray(z, float)
        out = np.zeros(z.shape)
        for coef, expo in self.terms:
            for b in range(3):
                d = self._mono_d(z, expo, b)
                out += d[..., None] * coef[:, b]
        return out

    def grad_trace(self, z: Array) -> Array:
        z = np.asarray(z, float)
        out = np.zeros(z.shape)
        for coef, expo in self.terms:
            tr = np.trace(coef)
            if tr == 0.0:
                continue
            for a in range(3):
                out[..., a] += tr * self._mono_d(z, expo, a)
        return out

    def dd_h(self, z: Array) -> Array:
        z = np.asarray(z, float)
        out = np.zeros(z.shape[:-1])
        for coef, expo in self.terms:
            for a in range(3):
                for b in range(3):
                    if coef[a, b]:
                        out += coef[a, b] * self._mono_dd(z, expo, a, b)
        return out

    def lap_trace(self, z: Array) -> Array:
        z = np.asarray(z, float)
        out = np.zeros(z.shape[:-1])
        for coef, expo in self.terms:
            tr = np.trace(coef)
            if tr == 0.0:
                continue
            for a in range(3):
                out += tr * self._mono_dd(z, expo, a, a)
        return out


def polynomial_metric(terms: Sequence[tuple[Sequence[Sequence[float]], Sequence[int]]],
                      window_inner: float = 50.0,
                      window_outer: float = 100.0) -> PolynomialMetric:
    return PolynomialMetric(tuple((np.asarray(c, float), tuple(e)) for c, e in terms),
                            window_inner, window_outer)


@dataclass(frozen=True)
class NewtonianPotential:
    """V(x) = -2 M / |x|, optionally mollified by a quadratic core.

    The mollified form matches value and slope at the core radius, keeping the
    potential C^1 while removing the line singularity at the origin.
    """

    M: float = 1.0
    core_radius: float = 0.0

    def __call__(self, z: Array) -> Array:
        r = _norm(np.asarray(z, float))
        r0 = self.core_radius
        if r0 <= 0.0:
            return -2.0 * self.M / np.maximum(r, 1e-300)
        outer = -2.0 * self.M / np.maximum(r, 1e-300)
        inner = -3.0 * self.M / r0 + self.M * r**2 / r0**3
        return np.where(r >= r0, outer, inner)

    def grad(self, z: Array) -> Array:
        z = np.asarray(z, float)
        r = _norm(z)
        r0 = self.core_radius
        safe = np.maximum(r, 1e-300)
        outer = 2.0 * self.M / safe**3
        if r0 <= 0.0:
            return outer[..., None] * z
        inner = 2.0 * self.M / r0**3
        fac = np.where(r >= r0, outer, inner)
        return fac[..., None] * z


@dataclass(frozen=True)
class SchwarzschildMetric(MetricField):
    """Linearized metric in Schwarzschild-like coordinates.

    h_00 = V, spatial block h_ab = V xhat_a xhat_b with V = -2M/|x|.  The
    four-dimensional trace h_00 - h_aa vanishes; the spatial divergence obeys
    d_a h_ab = -d_b V.
    """

    potential: NewtonianPotential

    reach = None
    spherically_symmetric = True

    def __post_init__(self):
        if self.potential.core_radius > 0:
            object.__setattr__(self, "feature_radii", (self.potential.core_radius,))

    @property
    def M(self) -> float:
        return self.potential.M

    def h(self, z: Array) -> Array:
        z = np.asarray(z, float)
        r = np.maximum(_norm(z), 1e-300)
        zh = z / r[..., None]
        return self.potential(z)[..., None, None] * zh[..., :, None] * zh[..., None, :]

    def h00(self, z: Array) -> Array:
        return self.potential(z)

    def trace(self, z: Array) -> Array:
        return self.potential(z)

    def contract(self, z: Array, u: Array, w: Array) -> Array:
        z = np.asarray(z, float)
        r2 = np.maximum(np.sum(z * z, axis=-1), 1e-300)
        return (self.potential(z) * np.sum(z * u, axis=-1)
                * np.sum(z * w, axis=-1) / r2)

    def div(self, z: Array) -> Array:
        return -self.potential.grad(z)

    def four_trace(self, z: Array) -> Array:
        return self.h00(z) - self.trace(z)


@dataclass(frozen=True)
class IsotropicMetric(MetricField):
    """Spatially isotropic form h'_ab = V delta_ab (harmonic gauge)."""

    potential: NewtonianPotential

    reach = None
    spherically_symmetric = True

    def h(self, z: Array) -> Array:
        v = self.potential(z)
        return v[..., None, None] * np.eye(3)

    def trace(self, z: Array) -> Array:
        return 3.0 * self.potential(z)

    def contract(self, z: Array, u: Array, w: Array) -> Array:
        return self.potential(z) * np.sum(np.broadcast_arrays(u, w)[0]
                                          * np.broadcast_arrays(u, w)[1], axis=-1)

    def h00(self, z: Array) -> Array:
        return self.potential(z)


# ---------------------------------------------------------------------------
# boundary-adapted perturbations for the mean-curvature flux identity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadialBoundaryPerturbation(MetricField):
    """h_ab = chi(r) (delta_ab - 3 xhat_a xhat_b) with chi(R_surface) = 0.

    Traceless everywhere; the tangential block vanishes identically on the
    target sphere (chi = 0 there), while its normal derivative chi'(R) stays
    free, which is exactly what the mean-curvature variation measures.
    """

    surface_radius: float
    width: float
    amplitude: float = 1.0

    spherically_symmetric = True

    def __post_init__(self):
        object.__setattr__(self, "reach", self.surface_radius + self.width)
        object.__setattr__(self, "feature_radii",
                           (max(self.surface_radius - self.width, 0.0),
                            self.surface_radius,
                            self.surface_radius + self.width))

    def chi(self, r: Array) -> Array:
        t = (np.asarray(r, float) - self.surface_radius) / self.width
        return self.amplitude * (np.asarray(r, float) - self.surface_radius) * bump_profile(t)

    def chi_prime(self, r: Array) -> Array:
        r = np.asarray(r, float)
        eps = 1e-7 * self.width
        return (self.chi(r + eps) - self.chi(r - eps)) / (2 * eps)

    def h(self, z: Array) -> Array:
        z = np.asarray(z, float)
        r = np.maximum(_norm(z), 1e-300)
        zh = z / r[..., None]
        tensor = np.eye(3) - 3.0 * zh[..., :, None] * zh[..., None, :]
        return self.chi(r)[..., None, None] * tensor

    def trace(self, z: Array) -> Array:
        return np.zeros(np.asarray(z, float).shape[:-1])

    def contract(self, z: Array, u: Array, w: Array) -> Array:
        z = np.asarray(z, float)
        r2 = np.maximum(np.sum(z * z, axis=-1), 1e-300)
        uw = np.sum(np.broadcast_arrays(u, w)[0] * np.broadcast_arrays(u, w)[1], axis=-1)
        zu = np.sum(z * u, axis=-1)
        zw = np.sum(z * w, axis=-1)
        return self.chi(np.sqrt(r2)) * (uw - 3.0 * zu * zw / r2)

    def div(self, z: Array) -> Array:
        # d_b [chi (delta_ab - 3 zh_a zh_b)] = (-2 chi' - 6 chi / r) zh_a
        z = np.asarray(z, float)
        r = np.maximum(_norm(z), 1e-300)
        fac = -2.0 * self.chi_prime(r) - 6.0 * self.chi(r) / r
        return fac[..., None] * z / r[..., None]

    def grad_trace(self, z: Array) -> Array:
        return np.zeros_like(np.asarray(z, float))


@dataclass(frozen=True)
class TangentialBoundaryPerturbation(MetricField):
    """Normal-tangential block h = psi(r) (x.m) (xhat (k x x)^T + sym).

    Tangential-tangential components and the trace vanish identically, so the
    sphere's induced metric and the volume form are preserved exactly; the
    pointwise normal-tangential divergence is non-trivial but integrates to
    zero over the closed surface.
    """

    surface_radius: float
    width: float
    axis_k: Array = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    axis_m: Array = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    amplitude: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "axis_k", np.asarray(self.axis_k, float))
        object.__setattr__(self, "axis_m", np.asarray(self.axis_m, float))
        object.__setattr__(self, "reach", self.surface_radius + self.width)
        object.__setattr__(self, "feature_radii",
                           (max(self.surface_radius - self.width, 0.0),
                            self.surface_radius + self.width))

    def psi(self, r: Array) -> Array:
        t = (np.asarray(r, float) - self.surface_radius) / self.width
        return self.amplitude * bump_profile(t)

    def h(self, z: Array) -> Array:
        z = np.asarray(z, float)
        r = np.maximum(_norm(z), 1e-300)
        zh = z / r[..., None]
        w = np.cross(np.broadcast_to(self.axis_k, z.shape), z)
        q = (self.psi(r) * np.sum(z * self.axis_m, axis=-1))[..., None, None]
        return q * (zh[..., :, None] * w[..., None, :] + w[..., :, None] * zh[..., None, :])

    def trace(self, z: Array) -> Array:
        return np.zeros(np.asarray(z, float).shape[:-1])

    def contract(self, z: Array, u: Array, w_: Array) -> Array:
        z = np.asarray(z, float)
        r = np.maximum(_norm(z), 1e-300)
        zh = z / r[..., None]
        wv = np.cross(np.broadcast_to(self.axis_k, z.shape), z)
        q = self.psi(r) * np.sum(z * self.axis_m, axis=-1)
        u_, w_ = np.broadcast_arrays(np.broadcast_to(u, z.shape),
                                     np.broadcast_to(w_, z.shape))
        return q * (np.sum(zh * u_, axis=-1) * np.sum(wv * w_, axis=-1)
                    + np.sum(wv * u_, axis=-1) * np.sum(zh * w_, axis=-1))


# ---------------------------------------------------------------------------
# smooth vector fields (inner-solution generators)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VectorField:
    """Vectorized field with a closed-form divergence."""

    value: callable
    divergence: callable
    label: str = "field"

    def __call__(self, z: Array) -> Array:
        return np.asarray(self.value(np.asarray(z, float)), float)

    def div(self, z: Array) -> Array:
        return np.asarray(self.divergence(np.asarray(z, float)), float)


def constant_field(c) -> VectorField:
    c = np.asarray(c, float)
    return VectorField(lambda z: np.broadcast_to(c, z.shape).copy(),
                       lambda z: np.zeros(z.shape[:-1]), label="constant")


def linear_field(A=None, b=None) -> VectorField:
    A = np.eye(3) if A is None else np.asarray(A, float)
    b = np.zeros(3) if b is None else np.asarray(b, float)
    return VectorField(lambda z: z @ A.T + b,
                       lambda z: np.full(z.shape[:-1], float(np.trace(A))),
                       label="linear")


def radial_unit_field() -> VectorField:
    def val(z):
        r = np.maximum(_norm(z), 1e-300)
        return z / r[..., None]

    def dv(z):
        return 2.0 / np.maximum(_norm(z), 1e-300)

    return VectorField(val, dv, label="radial-unit")


def gaussian_bump_field(direction, center, width: float) -> VectorField:
    d = np.asarray(direction, float)
    c = np.asarray(center, float)

    def val(z):
        q = z - c
        g = np.exp(-0.5 * np.sum(q * q, axis=-1) / width**2)
        return g[..., None] * d

    def dv(z):
        q = z - c
        g = np.exp(-0.5 * np.sum(q * q, axis=-1) / width**2)
        return -g * np.sum(q * d, axis=-1) / width**2

    return VectorField(val, dv, label="gaussian-bump")


def gradient_potential_field(scale: float, potential: NewtonianPotential) -> VectorField:
    """u = scale * grad V; div u = scale * lap V (zero away from the core)."""

    def val(z):
        return scale * potential.grad(z)

    def dv(z):
        r = _norm(z)
        r0 = potential.core_radius
        if r0 <= 0:
            return np.zeros(z.shape[:-1])
        return np.where(r < r0, scale * 6.0 * potential.M / r0**3, 0.0)

    return VectorField(val, dv, label="grad-potential")
