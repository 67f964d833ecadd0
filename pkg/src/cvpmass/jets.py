"""Jet algebra: scalar+vector pairs and their derivatives of the Lagrangian.

A jet v = (a, u) acts on the two-point kernel through

    nabla_{1,v} L(x, y) = a(x) L(x, y) + (directional derivative in x),

and analogously in the second slot.  For the diffeomorphism jets the
directional part is a signed line integral along the whole straight line
through x and y, which is nonlocal; the antisymmetric combination
nabla_1 - nabla_2 collapses to a single one-sided pairing that decays one
order faster, and the symmetric combination collapses to a bounded chord
integral.  Both collapsed forms are implemented independently and serve as
cross-checks of the raw two-sided pairings.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import SingularLine, StepTooSmall
from .fields import (
    IsotropicMetric,
    MetricField,
    NewtonianPotential,
    SchwarzschildMetric,
    VectorField,
)
from .kernels import RadialKernel, moments
from .quadrature import (
    DEFAULT_SPEC,
    QuadratureSpec,
    adaptive_gk,
    chord_line,
    gauss_legendre,
    onesided_line,
    paired_line,
    radial_panels,
    rotation_to_axis,
)

Array = np.ndarray

_CHUNK = 3000


def _split(n: int):
    for s in range(0, n, _CHUNK):
        yield slice(s, min(s + _CHUNK, n))


def _geometry(X: Array, Y: Array):
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    XI = Y - X
    nxi = np.linalg.norm(XI, axis=-1)
    safe = np.maximum(nxi, 1e-300)
    XIHAT = XI / safe[:, None]
    return X, Y, XI, nxi, XIHAT


class Jet:
    """Base interface; all evaluations are batched over point pairs."""

    kind = "generic"
    line_reach: float | None = None
    feature_radii: tuple[float, ...] = ()
    #: equivariant under all rotations about the origin
    spherically_symmetric: bool = False

    def a(self, X: Array) -> Array:
        """Scalar component."""
        raise NotImplementedError

    def nabla1(self, kernel: RadialKernel, X: Array, Y: Array,
               spec: QuadratureSpec = DEFAULT_SPEC) -> Array:
        raise NotImplementedError

    def nabla2(self, kernel: RadialKernel, X: Array, Y: Array,
               spec: QuadratureSpec = DEFAULT_SPEC) -> Array:
        raise NotImplementedError

    def nabla_diff(self, kernel: RadialKernel, X: Array, Y: Array,
                   spec: QuadratureSpec = DEFAULT_SPEC) -> Array:
        """nabla_1 - nabla_2 (default: difference of the raw one-slot forms)."""
        return (self.nabla1(kernel, X, Y, spec) - self.nabla2(kernel, X, Y, spec))

    def nabla_sum(self, kernel: RadialKernel, X: Array, Y: Array,
                  spec: QuadratureSpec = DEFAULT_SPEC) -> Array:
        """nabla_1 + nabla_2 (diffeo kinds override with the bounded chord form)."""
        return (self.nabla1(kernel, X, Y, spec) + self.nabla2(kernel, X, Y, spec))

    def __add__(self, other: "Jet") -> "Jet":
        return CompositeJet((self, other))


@dataclass(frozen=True)
class CompositeJet(Jet):
    parts: tuple[Jet, ...]
    kind = "composite"

    @property
    def spherically_symmetric(self) -> bool:
        return all(p.spherically_symmetric for p in self.parts)

    def a(self, X):
        return sum(p.a(X) for p in self.parts)

    def nabla1(self, kernel, X, Y, spec=DEFAULT_SPEC):
        return sum(p.nabla1(kernel, X, Y, spec) for p in self.parts)

    def nabla2(self, kernel, X, Y, spec=DEFAULT_SPEC):
        return sum(p.nabla2(kernel, X, Y, spec) for p in self.parts)

    def nabla_diff(self, kernel, X, Y, spec=DEFAULT_SPEC):
        return sum(p.nabla_diff(kernel, X, Y, spec) for p in self.parts)

    def nabla_sum(self, kernel, X, Y, spec=DEFAULT_SPEC):
        return sum(p.nabla_sum(kernel, X, Y, spec) for p in self.parts)


@dataclass(frozen=True)
class ZeroJet(Jet):
    kind = "zero"
    spherically_symmetric = True

    def a(self, X):
        return np.zeros(np.atleast_2d(X).shape[0])

    def nabla1(self, kernel, X, Y, spec=DEFAULT_SPEC):
        return np.zeros(np.atleast_2d(X).shape[0])

    nabla2 = nabla1
    nabla_diff = nabla1
    nabla_sum = nabla1


@dataclass(frozen=True)
class GenericJet(Jet):
    """Pointwise jet from a scalar field and a vector field."""

    scalar: Callable[[Array], Array] | None
    vector: VectorField | None
    kind = "generic"

    def a(self, X):
        X = np.atleast_2d(np.asarray(X, float))
        if self.scalar is None:
            return np.zeros(X.shape[0])
        return np.asarray(self.scalar(X), float)

    def _u(self, X):
        if self.vector is None:
            return np.zeros_like(X)
        return self.vector(X)

    def nabla1(self, kernel, X, Y, spec=DEFAULT_SPEC):
        X, Y, XI, nxi, XIHAT = _geometry(X, Y)
        Lv = kernel.profile(nxi)
        out = self.a(X) * Lv
        if self.vector is not None:
            Lp = kernel.profile_prime(nxi)
            out = out - np.einsum("ij,ij->i", self._u(X), XIHAT) * Lp
        return out

    def nabla2(self, kernel, X, Y, spec=DEFAULT_SPEC):
        X, Y, XI, nxi, XIHAT = _geometry(X, Y)
        Lv = kernel.profile(nxi)
        out = self.a(Y) * Lv
        if self.vector is not None:
            Lp = kernel.profile_prime(nxi)
            out = out + np.einsum("ij,ij->i", self._u(Y), XIHAT) * Lp
        return out


def inner_jet(field: VectorField) -> GenericJet:
    """Inner solution (div u, u): changes the description, not the measure."""
    jet = GenericJet(scalar=field.div, vector=field)
    object.__setattr__(jet, "kind", "inner")
    return jet


class _LineJet(Jet):
    """Shared plumbing for diffeomorphism jets defined via line integrals."""

    def _check_singular(self, X, XIHAT, mollified: bool):
        if mollified:
            return
        proj = np.einsum("ij,ij->i", X, XIHAT)
        d0 = np.sqrt(np.maximum(np.einsum("ij,ij->i", X, X) - proj**2, 0.0))
        behind = proj < 0  # the closest approach lies on the line regardless
        rx = np.linalg.norm(X, axis=1)
        if np.any(d0 < 1e-6 * rx):
            raise SingularLine(
                "line through (x, y) passes within 1e-6 |x| of the potential "
                "singularity; enable the mollified potential")


@dataclass(frozen=True)
class UltrastaticDiffeoJet(_LineJet):
    """Diffeomorphism jet of a Riemannian perturbation h_ab (time-independent).

    nabla_1 carries h(x)/2 as scalar part plus the eps(tau)-weighted line
    integral of h_ab xi_a d/dx_b L; pairing around tau=0 (and tau=1 for the
    second slot) makes the conditionally convergent integrals absolutely
    convergent.
    """

    metric: MetricField
    kind = "ultrastatic_diffeo"

    def __post_init__(self):
        object.__setattr__(self, "line_reach", self.metric.reach)
        object.__setattr__(self, "feature_radii", tuple(self.metric.feature_radii))
        object.__setattr__(self, "spherically_symmetric",
                           bool(self.metric.spherically_symmetric))

    def a(self, X):
        return 0.5 * self.metric.trace(np.atleast_2d(np.asarray(X, float)))

    def _ct_field(self, XI, XIHAT):
        met = self.metric

        def field(Z):
            return met.contract(Z, XI[:, None, :], XIHAT[:, None, :])

        return field

    def nabla1(self, kernel, X, Y, spec=DEFAULT_SPEC):
        X, Y, XI, nxi, XIHAT = _geometry(X, Y)
        out = np.empty(X.shape[0])
        for sl in _split(X.shape[0]):
            P, _, _ = paired_line(self._ct_field(XI[sl], XIHAT[sl]), X[sl], XIHAT[sl],
                                  nxi[sl], spec, delta=kernel.delta,
                                  feature_radii=self.feature_radii, reach=self.line_reach)
            Lv = kernel.profile(nxi[sl])
            Lp = kernel.profile_prime(nxi[sl])
            out[sl] = (0.5 * self.metric.trace(X[sl]) * Lv
                       + 0.25 * Lp * P[:, 0] / np.maximum(nxi[sl], 1e-300))
        return out

    def nabla2(self, kernel, X, Y, spec=DEFAULT_SPEC):
        X, Y, XI, nxi, XIHAT = _geometry(X, Y)
        out = np.empty(X.shape[0])
        for sl in _split(X.shape[0]):
            P, _, _ = paired_line(self._ct_field(XI[sl], XIHAT[sl]), Y[sl], XIHAT[sl],
                                  nxi[sl], spec, delta=kernel.delta,
                                  feature_radii=self.feature_radii, reach=self.line_reach)
            Lv = kernel.profile(nxi[sl])
            Lp = kernel.profile_prime(nxi[sl])
            out[sl] = (0.5 * self.metric.trace(Y[sl]) * Lv
                       - 0.25 * Lp * P[:, 0] / np.maximum(nxi[sl], 1e-300))
        return out

    def nabla_diff(self, kernel, X, Y, spec=DEFAULT_SPEC):
        X, Y, XI, nxi, XIHAT = _geometry(X, Y)
        out = np.empty(X.shape[0])
        for sl in _split(X.shape[0]):
            Q, _ = onesided_line(self._ct_field(XI[sl], XIHAT[sl]), X[sl], Y[sl],
                                 XIHAT[sl], nxi[sl], spec, delta=kernel.delta,
                                 feature_radii=self.feature_radii, reach=self.line_reach)
            Lv = kernel.profile(nxi[sl])
            Lp = kernel.profile_prime(nxi[sl])
            out[sl] = (0.5 * (self.metric.trace(X[sl]) - self.metric.trace(Y[sl])) * Lv
                       + 0.5 * Lp * Q[:, 0] / np.maximum(nxi[sl], 1e-300))
        return out

    def nabla_sum(self, kernel, X, Y, spec=DEFAULT_SPEC):
        X, Y, XI, nxi, XIHAT = _geometry(X, Y)
        C = chord_line(self._ct_field(XI, XIHAT), X, XIHAT, nxi)
        Lv = kernel.profile(nxi)
        Lp = kernel.profile_prime(nxi)
        return (0.5 * (self.metric.trace(X) + self.metric.trace(Y)) * Lv
                + 0.5 * Lp * C[:, 0] / np.maximum(nxi, 1e-300))


@dataclass(frozen=True)
class SchwarzschildDiffeoJet(_LineJet):
    """Diffeomorphism jet of the static linearized Schwarzschild metric.

    Pure vector jet (no scalar part): the Lorentzian four-trace vanishes.
    The line integrand combines the spatial trace V with the xi-contraction
    of the spatial block.
    """

    metric: SchwarzschildMetric
    kind = "schwarzschild_diffeo"
    spherically_symmetric = True

    def __post_init__(self):
        object.__setattr__(self, "feature_radii", tuple(self.metric.feature_radii))

    @property
    def mollified(self) -> bool:
        return self.metric.potential.core_radius > 0

    def a(self, X):
        return np.zeros(np.atleast_2d(X).shape[0])

    def _fields(self, XI, XIHAT):
        met = self.metric

        def field(Z):
            v = met.potential(Z)
            ct = met.contract(Z, XI[:, None, :], XIHAT[:, None, :])
            return np.stack([v, ct], axis=-1)

        return field

    def nabla1(self, kernel, X, Y, spec=DEFAULT_SPEC):
        X, Y, XI, nxi, XIHAT = _geometry(X, Y)
        self._check_singular(X, XIHAT, self.mollified)
        out = np.empty(X.shape[0])
        for sl in _split(X.shape[0]):
            P, _, _ = paired_line(self._fields(XI[sl], XIHAT[sl]), X[sl], XIHAT[sl],
                                  nxi[sl], spec, delta=kernel.delta,
                                  feature_radii=self.feature_radii)
            Lv = kernel.profile(nxi[sl])
            Lp = kernel.profile_prime(nxi[sl])
            out[sl] = -0.25 * (Lv * P[:, 0] + Lp * P[:, 1]) / np.maximum(nxi[sl], 1e-300)
        return out

    def nabla2(self, kernel, X, Y, spec=DEFAULT_SPEC):
        X, Y, XI, nxi, XIHAT = _geometry(X, Y)
        self._check_singular(Y, XIHAT, self.mollified)
        out = np.empty(X.shape[0])
        for sl in _split(X.shape[0]):
            P, _, _ = paired_line(self._fields(XI[sl], XIHAT[sl]), Y[sl], XIHAT[sl],
                                  nxi[sl], spec, delta=kernel.delta,
                                  feature_radii=self.feature_radii)
            Lv = kernel.profile(nxi[sl])
            Lp = kernel.profile_prime(nxi[sl])
            out[sl] = 0.25 * (Lv * P[:, 0] + Lp * P[:, 1]) / np.maximum(nxi[sl], 1e-300)
        return out

    def nabla_diff(self, kernel, X, Y, spec=DEFAULT_SPEC):
        X, Y, XI, nxi, XIHAT = _geometry(X, Y)
        self._check_singular(X, XIHAT, self.mollified)
        out = np.empty(X.shape[0])
        for sl in _split(X.shape[0]):
            Q, _ = onesided_line(self._fields(XI[sl], XIHAT[sl]), X[sl], Y[sl],
                                 XIHAT[sl], nxi[sl], spec, delta=kernel.delta,
                                 feature_radii=self.feature_radii)
            Lv = kernel.profile(nxi[sl])
            Lp = kernel.profile_prime(nxi[sl])
            out[sl] = -0.5 * (Lv * Q[:, 0] + Lp * Q[:, 1]) / np.maximum(nxi[sl], 1e-300)
        return out

    def nabla_sum(self, kernel, X, Y, spec=DEFAULT_SPEC):
        X, Y, XI, nxi, XIHAT = _geometry(X, Y)
        C = chord_line(self._fields(XI, XIHAT), X, XIHAT, nxi)
        Lv = kernel.profile(nxi)
        Lp = kernel.profile_prime(nxi)
        return -0.5 * (Lv * C[:, 0] + Lp * C[:, 1]) / np.maximum(nxi, 1e-300)


@dataclass(frozen=True)
class IsotropicDiffeoJet(_LineJet):
    """Diffeomorphism jet in spatially isotropic coordinates.

    Carries the scalar component b' = -V from the change of the volume form;
    differs from the Schwarzschild-coordinate jet by the inner solution
    (div zeta, zeta) with zeta = M xhat.
    """

    potential: NewtonianPotential
    kind = "isotropic_diffeo"
    spherically_symmetric = True

    @property
    def mollified(self) -> bool:
        return self.potential.core_radius > 0

    def a(self, X):
        return -self.potential(np.atleast_2d(np.asarray(X, float)))

    def _field(self):
        pot = self.potential

        def field(Z):
            return pot(Z)

        return field

    def nabla1(self, kernel, X, Y, spec=DEFAULT_SPEC):
        X, Y, XI, nxi, XIHAT = _geometry(X, Y)
        self._check_singular(X, XIHAT, self.mollified)
        P, _, _ = paired_line(self._field(), X, XIHAT, nxi, spec, delta=kernel.delta)
        Lv = kernel.profile(nxi)
        Lp = kernel.profile_prime(nxi)
        return (-self.potential(X) * Lv
                - 0.25 * (Lv + nxi * Lp) * P[:, 0] / np.maximum(nxi, 1e-300))

    def nabla2(self, kernel, X, Y, spec=DEFAULT_SPEC):
        X, Y, XI, nxi, XIHAT = _geometry(X, Y)
        self._check_singular(Y, XIHAT, self.mollified)
        P, _, _ = paired_line(self._field(), Y, XIHAT, nxi, spec, delta=kernel.delta)
        Lv = kernel.profile(nxi)
        Lp = kernel.profile_prime(nxi)
        return (-self.potential(Y) * Lv
                + 0.25 * (Lv + nxi * Lp) * P[:, 0] / np.maximum(nxi, 1e-300))


# ---------------------------------------------------------------------------
# Euler-Lagrange and linearized-field residuals
# ---------------------------------------------------------------------------

def _support_integral(fn, kernel: RadialKernel, x: Array,
                      spec: QuadratureSpec, axis: Array | None = None,
                      weight=None, axisymmetric: bool = False) -> tuple[float, float]:
    """Adaptive-polar integral of fn(X, Y) over the support ball around x.

    fn maps batched (X, Y) pairs to values; the polar axis defaults to the
    radial direction of x.  When the integrand is symmetric about that axis
    the azimuthal integral collapses to a single node.
    """
    x = np.asarray(x, float)
    rad = kernel.cutoff
    rr, wr = radial_panels(0.0, rad, spec.radial_order)
    n_phi = 1 if axisymmetric else spec.angular_order
    phi = 2.0 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    ax = x if axis is None else np.asarray(axis, float)
    if np.linalg.norm(ax) < 1e-12:
        ax = np.array([0.0, 0.0, 1.0])
    R = rotation_to_axis(ax)

    # scale probe for the adaptive tolerance
    def fmu(mu, absval=False):
        mu = np.atleast_1d(mu)
        st = np.sqrt(np.maximum(1.0 - mu**2, 0.0))
        dirs = np.stack([np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)),
                         np.outer(mu, np.ones(n_phi))], axis=-1) @ R.T
        XI = rr[None, None, :, None] * dirs[:, :, None, :]
        Y = x[None, None, None, :] + XI
        X = np.broadcast_to(x, Y.shape)
        vals = fn(X.reshape(-1, 3), Y.reshape(-1, 3)).reshape(XI.shape[:-1])
        if weight is not None:
            vals = vals * weight(Y.reshape(-1, 3)).reshape(vals.shape)
        if absval:
            vals = np.abs(vals)
        return (2.0 * np.pi / n_phi) * np.einsum("mpr,r->m", vals, wr)

    probe = np.linspace(-0.9, 0.9, 7)
    scale = float(np.sum(np.abs(fmu(probe, absval=True)))) / 7 * 2 + 1e-300
    tol = max(spec.abs_tol, spec.mu_abs_tol * scale)
    seeds = [b * sgn for b in (0.5, 0.9, 0.99, 0.999) for sgn in (1.0, -1.0)]
    val, err, _ = adaptive_gk(fmu, -1.0, 1.0, abs_tol=tol, init_panels=2,
                              breakpoints=seeds)
    return val, err


def el_residual(jet: Jet, kernel: RadialKernel, measure, x: Array,
                spec: QuadratureSpec = DEFAULT_SPEC) -> tuple[float, float]:
    """EL residual nabla_v ell(x) = int nabla_{1,v} L(x, y) dmu(y) - a(x) s.

    Vanishes for critical configurations; returned with the integrator's
    error estimate.
    """
    if isinstance(jet, ZeroJet):
        return 0.0, 0.0
    s = moments(kernel).s
    weight = None if measure is None or measure.is_vacuum else measure.h
    axisym = jet.spherically_symmetric and (weight is None)
    val, err = _support_integral(
        lambda X, Y: jet.nabla1(kernel, X, Y, spec), kernel, x, spec,
        weight=weight, axisymmetric=axisym)
    a = float(jet.a(np.atleast_2d(np.asarray(x, float)))[0])
    return val - a * s, err


def ell_perturbation(kernel: RadialKernel, x: Array,
                     potential: Callable[[Array], Array],
                     spec: QuadratureSpec = DEFAULT_SPEC) -> tuple[float, float]:
    """First variation of ell for a static spherically symmetric perturbation:

        delta ell(x) = 1/2 int d^3y ( int_0^1 V(chord) dtau - V(y) ) L[xi].
    """
    x = np.asarray(x, float)

    def fn(X, Y):
        XI = Y - X
        nxi = np.linalg.norm(XI, axis=-1)
        safe = np.maximum(nxi, 1e-300)
        xih = XI / safe[:, None]
        C = chord_line(lambda Z: potential(Z), X, xih, nxi)[:, 0] / safe
        Lv = kernel.profile(nxi)
        return 0.5 * (C - potential(Y)) * Lv

    return _support_integral(fn, kernel, x, spec)


def linearized_field_residual(u_test: Jet, v: Jet, kernel: RadialKernel, measure,
                              x: Array, dtau: float = 1e-4,
                              spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """<u, Delta v>(x): nabla_u of the linearized-field bracket

        Q(x) = int (nabla_{1,v} + nabla_{2,v}) L(x, y) dmu(y) - a_v(x) s,

    with the outer directional derivative along u_test taken by central
    finite differences of step dtau (Richardson refined).
    """
    x = np.asarray(x, float)
    s = moments(kernel).s
    weight = None if measure is None or measure.is_vacuum else measure.h

    axisym = v.spherically_symmetric and (weight is None)

    def Q(pt: Array) -> float:
        val, _ = _support_integral(
            lambda X, Y: v.nabla_sum(kernel, X, Y, spec), kernel, pt, spec,
            weight=weight, axisymmetric=axisym)
        return val - float(v.a(np.atleast_2d(pt))[0]) * s

    a_u = float(u_test.a(np.atleast_2d(x))[0])
    if isinstance(u_test, GenericJet) and u_test.vector is not None:
        uvec = u_test.vector(np.atleast_2d(x))[0]
    else:
        uvec = np.zeros(3)
    q0 = Q(x)
    if np.linalg.norm(uvec) == 0.0:
        return a_u * q0
    if dtau <= 0 or dtau < 1e-12:
        raise StepTooSmall("finite-difference step too small")

    def deriv(step):
        return (Q(x + step * uvec) - Q(x - step * uvec)) / (2.0 * step)

    d1 = deriv(dtau)
    d2 = deriv(2.0 * dtau)
    du = (4.0 * d1 - d2) / 3.0
    return a_u * q0 + du
