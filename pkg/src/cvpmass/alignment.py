"""Alignment vector fields: series terms, divergence identity, flux masses,
and the fixed-point solver that cancels the leading term by an inner solution.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline, RegularGridInterpolator

from .errors import FDStepFailure, IterationDiverged
from .geometry import Ball, Annulus, SurfaceQuadrature
from .jets import CompositeJet, GenericJet, Jet, inner_jet
from .fields import VectorField
from .kernels import RadialKernel, moments
from .quadrature import (
    DEFAULT_SPEC,
    QuadratureSpec,
    adaptive_gk,
    gauss_legendre,
    radial_panels,
    rotation_to_axis,
)

Array = np.ndarray

_FACTOR = {0: 1.0, 1: 1.0 / (4.0 * 6.0)}  # 1 / (4^k (2k+1)!)


def _fd_shifts(richardson: bool) -> tuple[tuple[float, ...], tuple[float, ...]]:
    """Stencil (shifts, weights) for the second directional derivative, in
    units of the base step; weights are applied to f(shift)/step^2."""
    if not richardson:
        return (-1.0, 0.0, 1.0), (1.0, -2.0, 1.0)
    # (4 I(h) - I(2h)) / 3 with I(s) = (f(s) - 2 f(0) + f(-s)) / s^2
    return ((-2.0, -1.0, 0.0, 1.0, 2.0),
            (-1.0 / 12.0, 4.0 / 3.0, -2.5, 4.0 / 3.0, -1.0 / 12.0))


def alignment_term(jet: Jet, k_order: int, zeta: Array, kernel: RadialKernel,
                   spec: QuadratureSpec = DEFAULT_SPEC, *,
                   axis: Array | None = None,
                   richardson: bool = True,
                   mu_panels: Array | None = None,
                   panels_sink: dict | None = None) -> tuple[Array, float]:
    """k-th alignment series term

        A^(k)(zeta) = 1/(4^k (2k+1)!) int xi (xi . d/dzeta)^{2k}
                      nabla_{1,v} L(zeta - xi/2, zeta + xi/2) d^3 xi.

    By the exact swap symmetry of the two kernel slots the integrand equals
    its antisymmetrization, so the one-sided-paired difference form is used;
    it is numerically far better conditioned for long-range jets.  The
    zeta-derivatives are central finite differences along xi with step
    ``spec.fd_step * delta`` (Richardson-refined).  Returns (vector, error).
    """
    if k_order not in (0, 1):
        raise FDStepFailure("alignment terms are truncated at k <= 1")
    zeta = np.asarray(zeta, float)
    delta = kernel.cutoff
    rr, wr = radial_panels(0.0, delta, max(spec.radial_order, 36))
    ax = zeta if axis is None else np.asarray(axis, float)
    if np.linalg.norm(ax) < 1e-12:
        ax = np.array([0.0, 0.0, 1.0])
    axu = ax / np.linalg.norm(ax)
    R = rotation_to_axis(axu)
    axisym = bool(jet.spherically_symmetric)
    n_phi = 1 if axisym else spec.angular_order
    phi = 2.0 * np.pi * (np.arange(n_phi) + 0.5) / n_phi

    if k_order == 0:
        shifts, wts = (0.0,), (1.0,)
    else:
        shifts, wts = _fd_shifts(richardson)
    step0 = spec.fd_step * delta

    def fmu(mu):
        mu = np.atleast_1d(mu)
        st = np.sqrt(np.maximum(1.0 - mu**2, 0.0))
        dirs = np.stack([np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)),
                         np.outer(mu, np.ones(n_phi))], axis=-1) @ R.T
        XI = rr[None, None, :, None] * dirs[:, :, None, :]   # (m, phi, r, 3)
        sh = XI.shape[:-1]
        XIf = XI.reshape(-1, 3)
        rf = np.broadcast_to(rr[None, None, :], sh).reshape(-1)
        steps = step0 / np.maximum(rf, 1e-300)
        acc = np.zeros(len(XIf))
        for c, w in zip(shifts, wts):
            off = (c * steps)[:, None] * XIf
            Xp = zeta[None, :] - 0.5 * XIf + off
            Yp = zeta[None, :] + 0.5 * XIf + off
            vals = 0.5 * jet.nabla_diff(kernel, Xp, Yp, spec)
            acc += w * vals
        if k_order == 1:
            acc = acc / steps**2
        acc = acc.reshape(sh)
        # contract with xi_alpha and the angular weights
        if axisym:
            # only the component along the axis survives
            par = np.einsum("mpr,r,r->m", acc * (rr[None, None, :] * mu[:, None, None]),
                            wr, np.ones_like(rr)) * 2.0 * np.pi
            return par
        return acc  # handled by the vector branch below

    fac = _FACTOR[k_order]
    if axisym:
        if mu_panels is not None:
            val, err = _fixed_panel_integral(fmu, mu_panels)
            return fac * val * axu, fac * err
        probe = float(np.sum(np.abs(fmu(np.linspace(-0.9, 0.9, 5))))) / 5 + 1e-300
        tol = max(spec.abs_tol, spec.mu_abs_tol * probe)
        seeds = [b * sgn for b in (0.5, 0.9, 0.99, 0.999) for sgn in (1.0, -1.0)]
        val, err, _, edges = adaptive_gk(fmu, -1.0, 1.0, abs_tol=tol, init_panels=2,
                                         breakpoints=seeds, return_edges=True)
        if panels_sink is not None:
            panels_sink["edges"] = edges
        return fac * val * axu, fac * err

    # generic: three components, fixed graded polar grid + phi grid
    mu_nodes, mu_w = _graded_mu(spec)
    st = np.sqrt(np.maximum(1.0 - mu_nodes**2, 0.0))
    dirs = np.stack([np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)),
                     np.outer(mu_nodes, np.ones(n_phi))], axis=-1) @ R.T
    XI = rr[None, None, :, None] * dirs[:, :, None, :]
    sh = XI.shape[:-1]
    XIf = XI.reshape(-1, 3)
    rf = np.broadcast_to(rr[None, None, :], sh).reshape(-1)
    steps = step0 / np.maximum(rf, 1e-300)
    acc = np.zeros(len(XIf))
    for c, w in zip(shifts, wts):
        off = (c * steps)[:, None] * XIf
        Xp = zeta[None, :] - 0.5 * XIf + off
        Yp = zeta[None, :] + 0.5 * XIf + off
        acc += w * 0.5 * jet.nabla_diff(kernel, Xp, Yp, spec)
    if k_order == 1:
        acc = acc / steps**2
    wfull = (np.einsum("m,p,r->mpr", mu_w, np.full(n_phi, 2.0 * np.pi / n_phi), wr)
             .reshape(-1))
    vec = np.einsum("q,q,qa->a", wfull, acc, XIf)
    # error: repeat at half the polar resolution
    return fac * vec, fac * abs(np.sum(wfull * acc * rf)) * 1e-6 + spec.abs_tol


def _graded_mu(spec: QuadratureSpec, levels: int = 8):
    """Composite Gauss nodes on [-1,1] graded dyadically toward both poles."""
    bks = [0.0, 1.0, -1.0]
    for k in range(1, levels + 1):
        t = 2.0 ** (-k)
        bks += [1.0 - t, -(1.0 - t)]
    bks = np.unique(np.array(bks))
    xg, wg = gauss_legendre(max(6, spec.angular_order // 2))
    nodes, weights = [], []
    for a, b in zip(bks[:-1], bks[1:]):
        nodes.append(0.5 * (a + b) + 0.5 * (b - a) * xg)
        weights.append(0.5 * (b - a) * wg)
    return np.concatenate(nodes), np.concatenate(weights)


def _fixed_panel_integral(fmu, panels: Array) -> tuple[float, float]:
    """One Gauss-Kronrod pass over a frozen panel set (edges array)."""
    from .quadrature import _GK15_X, _GK15_WK, _GK15_WG, _G7_SLOTS

    A, B = panels[:-1], panels[1:]
    mid = 0.5 * (A + B)
    half = 0.5 * (B - A)
    X = mid[:, None] + half[:, None] * _GK15_X[None, :]
    F = np.asarray(fmu(X.ravel()), float).reshape(X.shape)
    Ik = np.sum(F * _GK15_WK[None, :], axis=1) * half
    Ig = np.sum(F[:, _G7_SLOTS] * _GK15_WG[None, :], axis=1) * half
    return float(Ik.sum()), float(np.sum(np.abs(Ik - Ig)))


def alignment_pair(jet: Jet, zeta: Array, kernel: RadialKernel,
                   spec: QuadratureSpec = DEFAULT_SPEC, *,
                   axis: Array | None = None,
                   mu_panels: Array | None = None,
                   panels_sink: dict | None = None) -> tuple[Array, Array, float]:
    """A^(0) and A^(1) at one point, reusing the adaptive polar layout.

    The k=0 pass discovers the polar panel structure (the singular geometry
    is shared by both orders); the k=1 integrand is then evaluated in a
    single pass on the frozen panels.  Passing ``mu_panels`` freezes the
    layout entirely, which makes finite differences of the field across
    nearby points almost noise-free (the quadrature error varies smoothly).
    Returns (A0, A1, error_scale).
    """
    if not jet.spherically_symmetric:
        a0, e0 = alignment_term(jet, 0, zeta, kernel, spec, axis=axis)
        a1, e1 = alignment_term(jet, 1, zeta, kernel, spec, axis=axis)
        return a0, a1, e0 + e1
    if mu_panels is not None:
        a0, e0 = alignment_term(jet, 0, zeta, kernel, spec, axis=axis,
                                mu_panels=mu_panels)
        a1, e1 = alignment_term(jet, 1, zeta, kernel, spec, axis=axis,
                                mu_panels=mu_panels)
        return a0, a1, e0 + e1
    sink: dict = {}
    a0, e0 = alignment_term(jet, 0, zeta, kernel, spec, axis=axis,
                            panels_sink=sink)
    a1, e1 = alignment_term(jet, 1, zeta, kernel, spec, axis=axis,
                            mu_panels=sink.get("edges"))
    if panels_sink is not None:
        panels_sink.update(sink)
    return a0, a1, e0 + e1


def alignment_field(jet: Jet, zeta: Array, kernel: RadialKernel,
                    spec: QuadratureSpec = DEFAULT_SPEC, k_max: int = 1,
                    mu_panels: Array | None = None,
                    panels_sink: dict | None = None) -> Array:
    """Truncated alignment vector field A^(0) + ... + A^(k_max)."""
    if k_max >= 1 and jet.spherically_symmetric:
        a0, a1, _ = alignment_pair(jet, zeta, kernel, spec,
                                   mu_panels=mu_panels, panels_sink=panels_sink)
        return a0 + a1
    out = np.zeros(3)
    for k in range(k_max + 1):
        term, _ = alignment_term(jet, k, zeta, kernel, spec,
                                 mu_panels=mu_panels, panels_sink=panels_sink
                                 if k == 0 else None)
        out = out + term
    return out


def divergence_identity_defect(jet: Jet, zeta: Array, k_max: int,
                               kernel: RadialKernel, measure,
                               spec: QuadratureSpec = DEFAULT_SPEC, *,
                               fd_step: float | None = None) -> tuple[float, float, float]:
    """|direct inner integral - div(truncated alignment field)| at zeta.

    The direct side is int (nabla_1 - nabla_2) L(zeta, y) d^3y over the
    kernel support; the divergence is taken by central finite differences of
    the alignment field.  Returns (defect, direct_value, div_value).
    """
    from .jets import _support_integral

    zeta = np.asarray(zeta, float)
    axisym = jet.spherically_symmetric
    weight = None if measure is None or measure.is_vacuum else measure.h
    direct, _ = _support_integral(
        lambda X, Y: jet.nabla_diff(kernel, X, Y, spec), kernel, zeta, spec,
        weight=weight, axisymmetric=axisym and weight is None)
    h = (fd_step if fd_step is not None else 3.0e-3) * kernel.cutoff
    if axisym and np.linalg.norm(zeta) > 10 * h:
        # radial field: div A = (1/R^2) d/dR (R^2 A_R); the polar panel
        # layout is frozen across the stencil so quadrature errors cancel
        Rz = np.linalg.norm(zeta)
        zu = zeta / Rz
        sink: dict = {}
        alignment_field(jet, zeta, kernel, spec, k_max, panels_sink=sink)
        panels = sink.get("edges")
        ap = alignment_field(jet, (Rz + h) * zu, kernel, spec, k_max,
                             mu_panels=panels) @ zu
        am = alignment_field(jet, (Rz - h) * zu, kernel, spec, k_max,
                             mu_panels=panels) @ zu
        divA = ((Rz + h) ** 2 * ap - (Rz - h) ** 2 * am) / (2.0 * h * Rz**2)
    else:
        divA = 0.0
        for axis in range(3):
            e = np.zeros(3)
            e[axis] = h
            ap = alignment_field(jet, zeta + e, kernel, spec, k_max)[axis]
            am = alignment_field(jet, zeta - e, kernel, spec, k_max)[axis]
            divA += (ap - am) / (2.0 * h)
    return abs(direct - divA), direct, divA


def flux_mass(jet: Jet, sq: SurfaceQuadrature, kernel: RadialKernel,
              spec: QuadratureSpec = DEFAULT_SPEC, k_max: int = 1) -> float:
    """Surface-flux form of the linearized mass: sum of A . nu over the nodes."""
    total = 0.0
    for node, nu, w in zip(sq.nodes, sq.normals, sq.weights):
        A = alignment_field(jet, node, kernel, spec, k_max)
        total += w * float(A @ nu)
    return total


# ---------------------------------------------------------------------------
# alignment solving
# ---------------------------------------------------------------------------

@dataclass
class AlignmentSolution:
    """Inner solution cancelling A^(0), with solver diagnostics."""

    inner: GenericJet
    aligned: Jet
    iterations: int
    converged: bool
    residual_ratio: float   # |A0[v+u]| / |A0[v]| sampled on the domain
    profile: Callable | None = None


def solve_alignment(v: Jet, domain, kernel: RadialKernel,
                    spec: QuadratureSpec = DEFAULT_SPEC, *,
                    symmetry: str | None = None, n_nodes: int = 9,
                    max_iter: int = 8, update_tol: float = 1e-3) -> AlignmentSolution:
    """Fixed-point iteration  u <- u - (1/s) A^(0)[v + inner(u)].

    The leading term of A^(0) for an inner solution is s u, so the iteration
    contracts with rate O((delta/l_macro)^2); the returned inner solution
    cancels A^(0) up to that order.  ``symmetry='radial'`` solves for a
    radial profile on an annulus (the symmetric scenarios); otherwise a
    Cartesian grid over the domain's bounding box is used with tricubic-style
    interpolation.
    """
    s_mom = moments(kernel).s
    if symmetry is None and getattr(v, "spherically_symmetric", False):
        symmetry = "radial"
    if symmetry == "radial":
        return _solve_alignment_radial(v, domain, kernel, spec, s_mom,
                                       n_nodes, max_iter, update_tol)
    return _solve_alignment_grid(v, domain, kernel, spec, s_mom,
                                 n_nodes, max_iter, update_tol)


def _radial_inner(profile: CubicSpline, lo: float, hi: float) -> GenericJet:
    def val(z):
        r = np.linalg.norm(z, axis=-1)
        rc = np.clip(r, lo, hi)
        return (profile(rc) / np.maximum(r, 1e-300))[..., None] * z

    def dv(z):
        r = np.linalg.norm(z, axis=-1)
        rc = np.clip(r, lo, hi)
        return profile.derivative()(rc) + 2.0 * profile(rc) / np.maximum(r, 1e-300)

    return inner_jet(VectorField(val, dv, label="alignment-inner"))


def _solve_alignment_radial(v, domain, kernel, spec, s_mom,
                            n_nodes, max_iter, update_tol) -> AlignmentSolution:
    if isinstance(domain, Annulus):
        lo, hi = domain.r_in, domain.r_out
    elif isinstance(domain, Ball):
        lo, hi = 0.5 * domain.radius, domain.radius
    else:
        raise IterationDiverged("radial alignment requires Ball or Annulus domain")
    pad = 0.55 * kernel.cutoff
    lo_e, hi_e = max(lo - pad, 1e-6), hi + pad
    r_nodes = np.linspace(lo_e, hi_e, n_nodes)
    axis = np.array([0.0, 0.0, 1.0])

    def a0_radial(jet) -> Array:
        out = np.empty(len(r_nodes))
        for i, r in enumerate(r_nodes):
            term, _ = alignment_term(jet, 0, r * axis, kernel, spec)
            out[i] = term @ axis
        return out

    a0_v = a0_radial(v)
    base_scale = float(np.max(np.abs(a0_v))) + 1e-300
    phi = np.zeros(len(r_nodes))
    prev_update = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        spline = CubicSpline(r_nodes, phi)
        u_jet = _radial_inner(spline, lo_e, hi_e)
        resid = a0_v + a0_radial(u_jet) if np.any(phi) else a0_v
        update = -resid / s_mom
        phi = phi + update
        umax = float(np.max(np.abs(phi))) + 1e-300
        unorm = float(np.max(np.abs(update)))
        if unorm > 4.0 * prev_update and it > 2:
            raise IterationDiverged("alignment fixed point diverged")
        prev_update = unorm
        if unorm < update_tol * umax:
            converged = True
            break
    spline = CubicSpline(r_nodes, phi)
    u_jet = _radial_inner(spline, lo_e, hi_e)
    resid = a0_v + a0_radial(u_jet)
    return AlignmentSolution(inner=u_jet, aligned=CompositeJet((v, u_jet)),
                             iterations=it, converged=converged,
                             residual_ratio=float(np.max(np.abs(resid))) / base_scale,
                             profile=spline)


def _solve_alignment_grid(v, domain, kernel, spec, s_mom,
                          n_nodes, max_iter, update_tol) -> AlignmentSolution:
    if isinstance(domain, Ball):
        c, rad = domain.center, domain.radius
    elif isinstance(domain, Annulus):
        c, rad = domain.center, domain.r_out
    else:
        raise IterationDiverged("grid alignment requires Ball or Annulus domain")
    pad = 0.55 * kernel.cutoff
    half = rad + pad
    ax = [np.linspace(c[d] - half, c[d] + half, n_nodes) for d in range(3)]
    mesh = np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1)
    pts = mesh.reshape(-1, 3)
    spacing = ax[0][1] - ax[0][0]

    def a0_at(jet, P) -> Array:
        out = np.empty((len(P), 3))
        for i, p in enumerate(P):
            term, _ = alignment_term(jet, 0, p, kernel, spec)
            out[i] = term
        return out

    a0_v = a0_at(v, pts)
    base_scale = float(np.max(np.linalg.norm(a0_v, axis=1))) + 1e-300
    U = np.zeros_like(a0_v)
    prev_update = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        u_jet = _grid_inner(ax, U.reshape(n_nodes, n_nodes, n_nodes, 3), spacing)
        resid = a0_v + a0_at(u_jet, pts) if np.any(U) else a0_v
        update = -resid / s_mom
        U = U + update
        umax = float(np.max(np.abs(U))) + 1e-300
        unorm = float(np.max(np.abs(update)))
        if unorm > 4.0 * prev_update and it > 2:
            raise IterationDiverged("alignment fixed point diverged")
        prev_update = unorm
        if unorm < update_tol * umax:
            converged = True
            break
    u_jet = _grid_inner(ax, U.reshape(n_nodes, n_nodes, n_nodes, 3), spacing)
    resid = a0_v + a0_at(u_jet, pts)
    return AlignmentSolution(inner=u_jet, aligned=CompositeJet((v, u_jet)),
                             iterations=it, converged=converged,
                             residual_ratio=float(np.max(np.linalg.norm(resid, axis=1)))
                             / base_scale)


def _grid_inner(ax, U, spacing) -> GenericJet:
    interps = [RegularGridInterpolator(tuple(ax), U[..., d], method="cubic",
                                       bounds_error=False, fill_value=None)
               for d in range(3)]
    divU = (np.gradient(U[..., 0], spacing, axis=0)
            + np.gradient(U[..., 1], spacing, axis=1)
            + np.gradient(U[..., 2], spacing, axis=2))
    div_i = RegularGridInterpolator(tuple(ax), divU, method="cubic",
                                    bounds_error=False, fill_value=None)

    def val(z):
        z2 = np.atleast_2d(z)
        return np.stack([itp(z2) for itp in interps], axis=-1)

    def dv(z):
        return div_i(np.atleast_2d(z))

    return inner_jet(VectorField(val, dv, label="alignment-grid-inner"))


# ---------------------------------------------------------------------------
# local volume condition along a deformation family
# ---------------------------------------------------------------------------

@dataclass
class VolumeConditionReport:
    taus: list[float]
    min_scalar: float
    min_divA: float
    scalar_by_tau: list[float]
    divA_by_tau: list[float]
    violations: list[tuple[float, Array]]

    @property
    def satisfied(self) -> bool:
        return len(self.violations) == 0


def local_volume_condition(family, taus: Sequence[float], domain,
                           kernel: RadialKernel, measure,
                           spec: QuadratureSpec = DEFAULT_SPEC, *,
                           sample_points: Array | None = None,
                           tol: float = 0.0) -> VolumeConditionReport:
    """Sampled check of the aligned scalar component along a deformation family.

    For each tau the family's variation jet is aligned by an inner solution;
    the aligned scalar a_hat = a_v + div(u) and the truncated div A are
    reported at the sample points, with non-negativity violations collected.
    """
    if sample_points is None:
        if isinstance(domain, Ball):
            qs = np.array([[0.6, 0, 0], [0, 0.3, 0], [0, 0, -0.5], [0.25, 0.25, 0.25]])
            sample_points = domain.center + domain.radius * qs
        else:
            mid = 0.5 * (domain.r_in + domain.r_out)
            sample_points = mid * np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
    scal_by_tau, divA_by_tau, violations = [], [], []
    for tau in taus:
        v_tau = family.jet_at(tau)
        sol = solve_alignment(v_tau, domain, kernel, spec)
        a_hat = (v_tau.a(sample_points)
                 + np.asarray(sol.inner.scalar(sample_points), float))
        divA = np.empty(len(sample_points))
        for i, p in enumerate(sample_points):
            _, _, divA[i] = divergence_identity_defect(
                sol.aligned, p, 1, kernel, measure, spec)
        scal_by_tau.append(float(a_hat.min()))
        divA_by_tau.append(float(divA.min()))
        for i, p in enumerate(sample_points):
            if a_hat[i] < -abs(tol):
                violations.append((float(tau), p))
    return VolumeConditionReport(
        taus=list(taus), min_scalar=min(scal_by_tau), min_divA=min(divA_by_tau),
        scalar_by_tau=scal_by_tau, divA_by_tau=divA_by_tau, violations=violations)
