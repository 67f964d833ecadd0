"""Mass functionals of surface-layer type, positivity defects,
exhaustion limits, and the quasilocal-mass infimum over rigid motions.

Deformed-measure integrals are always evaluated by pulling back through the
deformation map: with mu~ = F_*(f mu) and Omega~ = F(Omega0),

    int_{Omega~} G d(mu~) = int_{Omega0} f h G(F(.)) d^3a,

so every quadrature runs over vacuum-coordinate spheres.  Clipping against a
mapped set uses this same correspondence (F injective): F(b) in Omega~  iff
b in Omega0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import (
    NonConvergentTrace,
    OptimizerStalled,
    VolumeConstraintViolated,
)
from .geometry import (
    Annulus,
    Ball,
    Deformation,
    Measure,
    RigidMotion,
    VACUUM,
    matched_volume_ball,
    volume,
)
from .jets import Jet
from .kernels import RadialKernel, eval_kernel, moments
from .quadrature import (
    DEFAULT_SPEC,
    QuadratureSpec,
    adaptive_gk,
    gauss_legendre,
    integrate_double,
    radial_panels,
)

Array = np.ndarray


@dataclass
class MassReport:
    """Value of a mass functional together with its building blocks.

    The value always equals the declared combination of the components (a
    pure bookkeeping identity, checked at construction); the error estimate
    aggregates the component quadrature errors.
    """

    value: float
    components: dict[str, float]
    combination: dict[str, float]          # coefficient of each component
    error_estimate: float
    exhaustion_trace: list[tuple[float, float]] = field(default_factory=list)
    ell_tilde_residual: float | None = None
    extrapolation_error: float | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        combo = sum(c * self.components[k] for k, c in self.combination.items())
        scale = max(abs(self.value), max((abs(v) for v in self.components.values()),
                                         default=1.0), 1e-30)
        if abs(combo - self.value) > 1e-12 * scale:
            raise AssertionError("mass report bookkeeping identity violated")


def _kernel_pair(kernel: RadialKernel):
    def f(X, Y):
        return kernel.profile(np.linalg.norm(Y - X, axis=-1))
    return f


def _measure_w(measure: Measure):
    if measure is None or measure.is_vacuum:
        return None
    return measure.h


def _inflate(radius: float, deformation: Deformation, region) -> float:
    """Kernel-support radius in pullback coordinates, with a safe margin."""
    if deformation.is_identity:
        return radius
    lo = 1.0 / max(deformation.chord_expansion, 1e-3)
    return radius / min(lo, 1.0) if lo < 1.0 else radius


def area(kernel: RadialKernel, measure: Measure, region,
         spec: QuadratureSpec = DEFAULT_SPEC, **nodes) -> tuple[float, float]:
    """A := int_Omega dmu(x) int_{N \\ Omega} dmu(y) L(x, y)."""
    w = _measure_w(measure)
    kr = kernel.cutoff

    def f(X, Y):
        v = kernel.profile(np.linalg.norm(Y - X, axis=-1))
        if w is not None:
            v = v * w(Y)
        return v

    return integrate_double(f, region, kr, spec, inner_region=region,
                            inner_inside=False, outer_weight=w, **nodes)


def _deformed_osi(kernel, measure, deformation, omega_tilde_pre, omega, spec, **nodes):
    """int_{Omega~} dmu~(x) int_{N \\ Omega} dmu(y) L(x, y), pulled back."""
    w = _measure_w(measure)

    def outer_weight(A):
        out = deformation.f(A)
        if w is not None:
            out = out * w(A)
        return out

    def f(Xm, Y):
        v = kernel.profile(np.linalg.norm(Y - Xm, axis=-1))
        if w is not None:
            v = v * w(Y)
        return v

    return integrate_double(f, omega_tilde_pre, kernel.cutoff, spec,
                            inner_region=omega, inner_inside=False,
                            outer_weight=outer_weight,
                            outer_map=None if deformation.is_identity else deformation.F,
                            clip_outer_to_layer=deformation.is_identity
                            and _concentric(omega_tilde_pre, omega),
                            **nodes)


def _concentric(r1, r2) -> bool:
    try:
        return bool(np.allclose(r1.center, r2.center))
    except AttributeError:
        return False


def _deformed_area(kernel, measure, deformation, omega_tilde_pre, spec, **nodes):
    """A~ = int_{Omega~} dmu~ int_{N~ \\Omega~} dmu~ L, fully pulled back."""
    w = _measure_w(measure)
    kr = _inflate(kernel.cutoff, deformation, omega_tilde_pre)

    def outer_weight(A):
        out = deformation.f(A)
        if w is not None:
            out = out * w(A)
        return out

    def f(A, B):
        v = kernel.profile(np.linalg.norm(deformation.F(B) - deformation.F(A), axis=-1))
        v = v * deformation.f(B)
        if w is not None:
            v = v * w(B)
        return v

    return integrate_double(f, omega_tilde_pre, kr, spec,
                            inner_region=omega_tilde_pre, inner_inside=False,
                            outer_weight=outer_weight, **nodes)


def _deformed_self(kernel, measure, deformation, region_pre, inside: bool,
                   spec, full_space: bool = False, **nodes):
    """Double integral of L over (Omega~, Omega~) or (Omega~, N~), pulled back."""
    w = _measure_w(measure)
    kr = _inflate(kernel.cutoff, deformation, region_pre)

    def outer_weight(A):
        out = deformation.f(A)
        if w is not None:
            out = out * w(A)
        return out

    def f(A, B):
        v = kernel.profile(np.linalg.norm(deformation.F(B) - deformation.F(A), axis=-1))
        v = v * deformation.f(B)
        if w is not None:
            v = v * w(B)
        return v

    return integrate_double(f, region_pre, kr, spec,
                            inner_region=None if full_space else region_pre,
                            inner_inside=inside, outer_weight=outer_weight,
                            clip_outer_to_layer=False, **nodes)


def ell_tilde_residual(kernel, measure, deformation, omega_tilde_pre,
                       spec: QuadratureSpec = DEFAULT_SPEC, n_samples: int = 4) -> float:
    """Sampled sup |ell~| on the deformed region: int L dmu~ - s at mapped points."""
    s_mom = moments(kernel).s
    if isinstance(omega_tilde_pre, Ball):
        c, rad = omega_tilde_pre.center, omega_tilde_pre.radius
    else:
        c, rad = omega_tilde_pre.center, omega_tilde_pre.r_out
    dirs = np.array([[1.0, 0, 0], [-0.5, 0.8, 0], [0, -0.6, 0.7], [0.4, 0.4, -0.8]])
    dirs = dirs[:n_samples] / np.linalg.norm(dirs[:n_samples], axis=1)[:, None]
    pts = c[None, :] + 0.7 * rad * dirs
    w = _measure_w(measure)
    kr = _inflate(kernel.cutoff, deformation, omega_tilde_pre)
    worst = 0.0
    rr, wr = radial_panels(0.0, kr, spec.radial_order)
    from .quadrature import sphere_grid

    sph, wsph = sphere_grid(24, 12)
    for a in pts:
        xm = deformation.F(a[None, :])[0]
        B = a[None, :] + rr[:, None, None] * sph[None, :, :]
        Bf = B.reshape(-1, 3)
        v = kernel.profile(np.linalg.norm(deformation.F(Bf) - xm[None, :], axis=-1))
        v = v * deformation.f(Bf)
        if w is not None:
            v = v * w(Bf)
        val = float(np.einsum("i,j,ij->", wr, wsph, v.reshape(len(rr), len(sph))))
        worst = max(worst, abs(val - s_mom))
    return worst


def mass_functional(kernel: RadialKernel, measure: Measure,
                    deformation: Deformation, omega_tilde_pre, omega,
                    spec: QuadratureSpec = DEFAULT_SPEC, *,
                    diagnostics: bool = True, **nodes) -> MassReport:
    """M(Omega~, Omega) := 2 int_{Omega~} dmu~ int_{N\\Omega} dmu L - A~ - A.

    ``omega_tilde_pre`` is the preimage region: Omega~ = F(omega_tilde_pre).
    Vanishes identically when the measures and regions coincide.
    """
    osi, e1 = _deformed_osi(kernel, measure, deformation, omega_tilde_pre, omega,
                            spec, **nodes)
    if deformation.is_identity and _same_region(omega_tilde_pre, omega):
        at, e2 = area(kernel, measure, omega, spec, **nodes)
        av, e3 = at, e2
    else:
        at, e2 = _deformed_area(kernel, measure, deformation, omega_tilde_pre,
                                spec, **nodes)
        av, e3 = area(kernel, measure, omega, spec, **nodes)
    value = 2.0 * osi - at - av
    rep = MassReport(
        value=value,
        components={"osi_term": osi, "area_tilde": at, "area": av},
        combination={"osi_term": 2.0, "area_tilde": -1.0, "area": -1.0},
        error_estimate=2.0 * e1 + e2 + e3,
    )
    if diagnostics:
        rep.ell_tilde_residual = ell_tilde_residual(
            kernel, measure, deformation, omega_tilde_pre, spec)
    return rep


def _same_region(r1, r2) -> bool:
    if type(r1) is not type(r2):
        return False
    if isinstance(r1, Ball):
        return bool(np.allclose(r1.center, r2.center) and r1.radius == r2.radius)
    if isinstance(r1, Annulus):
        return bool(np.allclose(r1.center, r2.center)
                    and r1.r_in == r2.r_in and r1.r_out == r2.r_out)
    return r1 is r2


def positivity_defect(kernel: RadialKernel, measure: Measure,
                      deformation: Deformation, omega_tilde_pre, omega,
                      spec: QuadratureSpec = DEFAULT_SPEC, *,
                      vol_tol: float = 1e-6, **nodes) -> tuple[float, float]:
    """Four-term positivity combination of the minimizing-vacuum argument:

        2 II(Omega~, N\\Omega) - 2 II(Omega, N\\Omega)
        + II(Omega~, Omega~) - II(Omega, Omega),

    which is non-negative when the vacuum minimizes the action.  Requires the
    volume constraint mu(Omega) = mu~(Omega~) within ``vol_tol``.
    """
    v_om = volume(measure, omega, spec)
    v_tl = volume_tilde(measure, deformation, omega_tilde_pre, spec)
    if abs(v_om - v_tl) > vol_tol * abs(v_om):
        raise VolumeConstraintViolated(
            f"mu(Omega)={v_om:.10g} vs mu~(Omega~)={v_tl:.10g}")
    t1, e1 = _deformed_osi(kernel, measure, deformation, omega_tilde_pre, omega,
                           spec, **nodes)
    t2, e2 = area(kernel, measure, omega, spec, **nodes)
    t3, e3 = _deformed_self(kernel, measure, deformation, omega_tilde_pre, True,
                            spec, **nodes)
    w = _measure_w(measure)

    def f(X, Y):
        v = kernel.profile(np.linalg.norm(Y - X, axis=-1))
        if w is not None:
            v = v * w(Y)
        return v

    t4, e4 = integrate_double(f, omega, kernel.cutoff, spec, inner_region=omega,
                              inner_inside=True, outer_weight=w,
                              clip_outer_to_layer=False, **nodes)
    return 2.0 * t1 - 2.0 * t2 + t3 - t4, 2.0 * (e1 + e2) + e3 + e4


def volume_tilde(measure: Measure, deformation: Deformation, omega_tilde_pre,
                 spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """mu~(Omega~) by pullback: int_{Omega0} f h d^3a."""
    if deformation.is_identity:
        return volume(measure, omega_tilde_pre, spec)
    base = Measure(density=lambda p: deformation.f(p) * (measure.h(p)
                   if not measure.is_vacuum else 1.0), label="pullback")
    return volume(base, omega_tilde_pre, spec)


def n_functional(kernel: RadialKernel, measure: Measure,
                 deformation: Deformation, omega_tilde_pre, omega,
                 spec: QuadratureSpec = DEFAULT_SPEC, **nodes) -> MassReport:
    """N(Omega~, Omega) = M + s V - 2 s V~ + int_{Omega~} dmu~ int_{N~} dmu~ L.

    The lower bound of the volume-unconstrained positivity argument states
    N >= 0 for a minimizing vacuum; no condition on ell~ is needed.
    """
    base = mass_functional(kernel, measure, deformation, omega_tilde_pre, omega,
                           spec, diagnostics=False, **nodes)
    s_mom = moments(kernel).s
    v_om = volume(measure, omega, spec)
    v_tl = volume_tilde(measure, deformation, omega_tilde_pre, spec)
    full, ef = _deformed_self(kernel, measure, deformation, omega_tilde_pre, True,
                              spec, full_space=True, **nodes)
    comps = dict(base.components)
    comps.update({"s_times_V": s_mom * v_om, "s_times_V_tilde": s_mom * v_tl,
                  "full_inner": full})
    value = base.value - 2.0 * s_mom * v_tl + s_mom * v_om + full
    return MassReport(
        value=value, components=comps,
        combination={"osi_term": 2.0, "area_tilde": -1.0, "area": -1.0,
                     "s_times_V": 1.0, "s_times_V_tilde": -2.0, "full_inner": 1.0},
        error_estimate=base.error_estimate + ef,
        extras={"volume_deficit": v_tl - v_om})


# ---------------------------------------------------------------------------
# linearized mass
# ---------------------------------------------------------------------------

def linearized_mass(kernel: RadialKernel, measure: Measure, jet: Jet, omega,
                    spec: QuadratureSpec = DEFAULT_SPEC, *,
                    n_outer: int = 24, n_radial: int = 32,
                    **nodes) -> tuple[float, float]:
    """M(Omega, v) = int_Omega dmu(x) int_{N\\Omega} dmu(y)
                       (nabla_{1,v} - nabla_{2,v}) L(x, y).

    For spherically symmetric jets on centered balls the double integral
    collapses to outer radius x polar angle x radial distance with the
    azimuthal direction exact; the polar integral is adaptive (the
    long-range Newtonian jets have log-type structure toward radial
    alignment).
    """
    if (jet.spherically_symmetric and isinstance(omega, Ball)
            and np.allclose(omega.center, 0.0) and measure.is_vacuum):
        return _linearized_mass_spherical(kernel, jet, omega.radius, spec,
                                          n_outer=n_outer, n_radial=n_radial)

    w = _measure_w(measure)

    def f(X, Y):
        v = jet.nabla_diff(kernel, X, Y, spec)
        if w is not None:
            v = v * w(Y)
        return v

    return integrate_double(f, omega, kernel.cutoff, spec, inner_region=omega,
                            inner_inside=False, outer_weight=w, **nodes)


def _linearized_mass_spherical(kernel, jet, R0, spec, n_outer=24, n_radial=32):
    delta = kernel.cutoff
    xg_r, wg_r = gauss_legendre(max(8, n_radial // 3))
    ex = np.array([0.0, 0.0, 1.0])

    def inner_g(R: float) -> tuple[float, float]:
        x = R * ex

        def fmu(mu):
            mu = np.atleast_1d(mu)
            disc = R * R * mu * mu + R0 * R0 - R * R
            rstar = np.minimum(-R * mu + np.sqrt(np.maximum(disc, 0.0)), delta)
            spans = delta - rstar
            # three radial panels per polar node, graded toward the kernel edge
            cuts = np.stack([rstar, rstar + 0.55 * spans, rstar + 0.87 * spans,
                             np.full_like(rstar, delta)], axis=-1)
            lo = cuts[:, :-1, None]
            hi = cuts[:, 1:, None]
            mids = 0.5 * (lo + hi) + 0.5 * (hi - lo) * xg_r
            wrad = 0.5 * (hi - lo) * wg_r * mids**2
            st = np.sqrt(np.maximum(1.0 - mu**2, 0.0))
            OM = np.stack([st, np.zeros_like(mu), mu], axis=-1)
            Y = x[None, None, None, :] + mids[..., None] * OM[:, None, None, :]
            X = np.broadcast_to(x, Y.shape)
            vals = jet.nabla_diff(kernel, X.reshape(-1, 3), Y.reshape(-1, 3),
                                  spec).reshape(mids.shape)
            return 2.0 * np.pi * np.einsum("mpr,mpr->m", wrad, vals)

        probe = float(np.mean(np.abs(fmu(np.linspace(-0.8, 0.8, 3))))) + 1e-300
        seeds = [b * sgn for b in (0.5, 0.9, 0.99) for sgn in (1.0, -1.0)]
        val, err, _ = adaptive_gk(fmu, -1.0, 1.0,
                                  abs_tol=max(spec.abs_tol, spec.mu_abs_tol * probe),
                                  init_panels=2, breakpoints=seeds)
        return val, err

    total = 0.0
    toterr = 0.0
    xg, wg = gauss_legendre(n_outer)
    Rn = R0 - delta + 0.5 * delta * (xg + 1.0)
    wRn = 0.5 * delta * wg
    for R, wR in zip(Rn, wRn):
        g, e = inner_g(float(R))
        total += wR * 4.0 * np.pi * R**2 * g
        toterr += abs(wR) * 4.0 * np.pi * R**2 * e
    return total, toterr


def linearization_residual(kernel: RadialKernel, measure: Measure,
                           deformation: Deformation, jet: Jet, omega,
                           spec: QuadratureSpec = DEFAULT_SPEC,
                           **nodes) -> tuple[float, float]:
    """Defect of the first-order expansion of the deformed surface layer:

        int_Omega dx int_{N\\Omega} dy [ f(x) L(F(x), y) - L(x, y)
                                         - nabla_{1,v} L(x, y) ].

    Scales quadratically in the deformation amplitude for the matched jet.
    """
    w = _measure_w(measure)

    def f(X, Y):
        fl = deformation.f(X) * kernel.profile(
            np.linalg.norm(Y - deformation.F(X), axis=-1))
        l0 = kernel.profile(np.linalg.norm(Y - X, axis=-1))
        nv = jet.nabla1(kernel, X, Y, spec)
        out = fl - l0 - nv
        if w is not None:
            out = out * w(Y)
        return out

    return integrate_double(f, omega, kernel.cutoff * (1 + 0.2), spec,
                            inner_region=omega, inner_inside=False,
                            outer_weight=w, **nodes)


# ---------------------------------------------------------------------------
# exhaustion limits
# ---------------------------------------------------------------------------

def fit_inverse_radius(radii: Sequence[float], values: Sequence[float]):
    """Least-squares fit value = a + b / R; returns (a, b, residuals)."""
    radii = np.asarray(radii, float)
    values = np.asarray(values, float)
    A = np.stack([np.ones_like(radii), 1.0 / radii], axis=1)
    coef, *_ = np.linalg.lstsq(A, values, rcond=None)
    resid = values - A @ coef
    return float(coef[0]), float(coef[1]), resid


def total_mass_exhaustion(kernel: RadialKernel, measure: Measure, source,
                          radii: Sequence[float],
                          spec: QuadratureSpec = DEFAULT_SPEC, *,
                          omega_center=(0.0, 0.0, 0.0),
                          check_convergence: bool = True,
                          closeness_diagnostic: bool = False,
                          **nodes) -> MassReport:
    """Exhaustion limit of the mass over nested balls of the given radii.

    ``source`` is either a Jet (linearized form) or a Deformation (nonlinear
    bracket -s (V~ - V) + II(Omega~, N\\Omega) - II(Omega, N~\\Omega~)).
    The limit is the intercept of an a + b/R fit, reported with the fit
    residual scale as extrapolation error.
    """
    radii = sorted(float(r) for r in radii)
    if len(radii) < 3:
        raise NonConvergentTrace("exhaustion needs at least 3 radii")
    trace = []
    err_acc = 0.0
    center = np.asarray(omega_center, float)
    for R in radii:
        om = Ball(center, R)
        if isinstance(source, Jet):
            v, e = linearized_mass(kernel, measure, source, om, spec, **nodes)
        else:
            v, e = _nonlinear_bracket(kernel, measure, source, om, spec, **nodes)
        trace.append((R, v))
        err_acc += e
    a, b, resid = fit_inverse_radius([t[0] for t in trace], [t[1] for t in trace])
    model_steps = np.abs(np.diff([b / R for R in radii]))
    tol = 3.0 * max(float(model_steps.max()), err_acc, 1e-12 * max(abs(a), 1.0))
    if check_convergence and np.any(np.abs(resid) > tol):
        raise NonConvergentTrace(
            f"trace deviates from the a + b/R decay model: resid={resid}")
    extras = {}
    if closeness_diagnostic and isinstance(source, Deformation):
        extras["closeness_tail"] = _closeness_tail(kernel, measure, source,
                                                   radii, spec)
    rep = MassReport(
        value=a,
        components={"fit_intercept": a, "fit_slope": b},
        combination={"fit_intercept": 1.0},
        error_estimate=err_acc,
        exhaustion_trace=trace,
        extrapolation_error=float(np.max(np.abs(resid))) + abs(b) / radii[-1] * 0.0,
        extras=extras)
    return rep


def _nonlinear_bracket(kernel, measure, deformation, om, spec, **nodes):
    s_mom = moments(kernel).s
    v_om = volume(measure, om, spec)
    v_tl = volume_tilde(measure, deformation, om, spec)
    t1, e1 = _deformed_osi(kernel, measure, deformation, om, om, spec, **nodes)
    t2, e2 = _reverse_osi(kernel, measure, deformation, om, spec, **nodes)
    return -s_mom * (v_tl - v_om) + t1 - t2, e1 + e2


def _reverse_osi(kernel, measure, deformation, om, spec, **nodes):
    """int_Omega dmu(x) int_{N~ \\ Omega~} dmu~(y) L(x, y).

    The inner variable is pulled back (y = F(b), b outside the preimage);
    the pullback ball is inflated by the sampled displacement bound and the
    kernel support provides the exact clipping.
    """
    w = _measure_w(measure)
    disp = _displacement_bound(deformation, om)
    kr = _inflate(kernel.cutoff, deformation, om) + disp

    def f(X, B):
        v = kernel.profile(np.linalg.norm(deformation.F(B) - X, axis=-1))
        v = v * deformation.f(B)
        if w is not None:
            v = v * w(B)
        return v

    return integrate_double(f, om, kr, spec, inner_region=om,
                            inner_inside=False, outer_weight=w,
                            clip_outer_to_layer=deformation.is_identity, **nodes)


def _displacement_bound(deformation: Deformation, region, n: int = 512) -> float:
    if deformation.is_identity:
        return 0.0
    rng = np.random.default_rng(11)
    rmax = region.bounding_radius() + 2.0
    pts = rng.uniform(-rmax, rmax, size=(n, 3))
    return float(np.max(np.linalg.norm(deformation.F(pts) - pts, axis=1)))


def _closeness_tail(kernel, measure, deformation, radii, spec) -> list[float]:
    """int over nested annuli of |n(x) - s| dmu with n(x) = int L dmu~."""
    from .quadrature import sphere_grid

    s_mom = moments(kernel).s
    w = _measure_w(measure)
    disp = _displacement_bound(deformation, Ball(np.zeros(3), max(radii)))
    kr = _inflate(kernel.cutoff, deformation, Ball(np.zeros(3), max(radii))) + disp
    rr, wr = radial_panels(0.0, kr, spec.radial_order)
    sph, wsph = sphere_grid(16, 8)
    tails = []
    for R in radii:
        shell_dirs, shell_w = sphere_grid(12, 8)
        shell_r = np.linspace(R, R + kernel.cutoff, 4)
        acc = 0.0
        for rs in shell_r:
            X = rs * shell_dirs
            for xi, wxi in zip(X, shell_w):
                B = xi[None, :] + rr[:, None, None] * sph[None, :, :]
                Bf = B.reshape(-1, 3)
                v = kernel.profile(np.linalg.norm(deformation.F(Bf) - xi[None, :],
                                                  axis=-1)) * deformation.f(Bf)
                if w is not None:
                    v = v * w(Bf)
                nval = float(np.einsum("i,j,ij->", wr, wsph,
                                       v.reshape(len(rr), len(sph))))
                acc += wxi * rs**2 * abs(nval - s_mom) * (kernel.cutoff / 4)
        tails.append(acc)
    return tails


# ---------------------------------------------------------------------------
# quasilocal mass
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroupSearch:
    """Search domain over the Euclidean symmetry group and the radial family.

    Rotations are accepted for completeness but stabilize the centered-ball
    family (a rotated ball is the same ball), so the effective parameters are
    the translation and the family radius.
    """

    translation_bound: float = 2.0
    radius_bounds: tuple[float, float] = (0.1, 10.0)
    include_rotations: bool = False
    n_starts: int = 2
    maxiter: int = 400
    xatol: float = 1e-6
    fatol: float = 1e-10


def quasilocal_mass(kernel: RadialKernel, measure: Measure,
                    deformation: Deformation, omega_tilde_pre,
                    group: GroupSearch | None = None,
                    spec: QuadratureSpec = DEFAULT_SPEC, *,
                    admissibility: Callable | None = None,
                    coarse_nodes: dict | None = None) -> MassReport:
    """Infimum of the mass functional over rigid motions and the radial family.

    Minimizes M_{mu~, Phi_* mu}(Omega~, Omega) with Phi a Euclidean motion
    and Omega = Phi(centered ball); since the vacuum measure is invariant
    under the motions, the search reduces to the ball's center and radius.
    Derivative-free simplex search with multi-start; the starting translation
    is seeded from the sampled mean displacement of the deformation.
    """
    group = group or GroupSearch()
    nodes = coarse_nodes or dict(n_outer_r=10, n_outer_mu=8, n_outer_phi=8,
                                 n_inner_mu=10, n_inner_phi=6, n_inner_r=6,
                                 refine=1.3)
    v_tl = volume_tilde(measure, deformation, omega_tilde_pre, spec)
    if isinstance(omega_tilde_pre, Ball):
        r_hint = omega_tilde_pre.radius
    else:
        r_hint = omega_tilde_pre.r_out
    r0 = matched_volume_ball(measure, v_tl, np.zeros(3), r_hint, spec).radius

    # seed translation: mean displacement of the region under F
    rng = np.random.default_rng(3)
    probe = rng.normal(size=(256, 3))
    probe = omega_tilde_pre.center + probe / np.linalg.norm(probe, axis=1)[:, None] \
        * r_hint * rng.uniform(0, 1, 256)[:, None] ** (1 / 3)
    t_seed = np.mean(deformation.F(probe) - probe, axis=0) + omega_tilde_pre.center

    if admissibility is not None:
        admissibility(deformation, omega_tilde_pre)

    cache: dict = {}

    def objective(p) -> float:
        key = tuple(np.round(p, 12))
        if key in cache:
            return cache[key]
        t = p[:3]
        rho = abs(p[3])
        rho = min(max(rho, group.radius_bounds[0]), group.radius_bounds[1])
        om = Ball(t, rho)
        rep = mass_functional(kernel, measure, deformation, omega_tilde_pre, om,
                              spec, diagnostics=False, **nodes)
        cache[key] = rep.value
        return rep.value

    starts = [np.array([*t_seed, r0])]
    for _ in range(max(0, group.n_starts - 1)):
        jitter = rng.normal(scale=0.1 * r0, size=4)
        starts.append(starts[0] + jitter)
    best = None
    for p0 in starts:
        res = minimize(objective, p0, method="Nelder-Mead",
                       options=dict(maxiter=group.maxiter, xatol=group.xatol,
                                    fatol=group.fatol))
        if best is None or res.fun < best.fun:
            best = res
    if best is None or not np.all(np.isfinite(best.x)):
        raise OptimizerStalled("quasilocal search failed", best=best)
    t_best = best.x[:3]
    rho_best = float(min(max(abs(best.x[3]), group.radius_bounds[0]),
                         group.radius_bounds[1]))
    om_best = Ball(t_best, rho_best)
    rep = mass_functional(kernel, measure, deformation, omega_tilde_pre, om_best,
                          spec, diagnostics=True, **nodes)
    rep.extras.update({
        "minimizer_translation": t_best.tolist(),
        "minimizer_radius": rho_best,
        "optimizer_converged": bool(best.success),
        "objective_evals": len(cache),
        "nonnegativity_defect": min(rep.value, 0.0),
    })
    if not best.success and best.fun > 10 * rep.error_estimate:
        raise OptimizerStalled("quasilocal simplex search stalled", best=rep)
    return rep
