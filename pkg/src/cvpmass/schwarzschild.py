"""The linearized-Schwarzschild scenario end to end.

All headline numbers are dimensionless prefactors of delta^2 s2 M obtained by
quadrature of the defining surface-layer integrals: the direct mass (4 pi/9),
the unaligned and aligned flux masses (pi/3 and pi/9), and the weighted
spatial integral whose 2 pi R^2-scaled limit carries a different prefactor
than the direct mass, exhibiting the non-commutation of the two limiting
procedures.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .alignment import alignment_pair, alignment_term, solve_alignment
from .fields import NewtonianPotential, SchwarzschildMetric, VectorField
from .geometry import Annulus, Ball, VACUUM
from .jets import GenericJet, IsotropicDiffeoJet, SchwarzschildDiffeoJet, _support_integral
from .kernels import RadialKernel, moments
from .quadrature import DEFAULT_SPEC, QuadratureSpec
from .surface_layer import MassReport, linearized_mass

Array = np.ndarray


@dataclass(frozen=True)
class SchwarzschildModel:
    """Linearized Schwarzschild data: potential V = -2M/|x| and its metric."""

    M: float = 1.0
    mollification_radius: float = 0.0

    def __post_init__(self):
        if self.M < 0:
            raise ValueError("mass parameter must be non-negative")

    @property
    def potential(self) -> NewtonianPotential:
        return NewtonianPotential(M=self.M, core_radius=self.mollification_radius)

    @property
    def metric(self) -> SchwarzschildMetric:
        return SchwarzschildMetric(self.potential)

    @property
    def jet(self) -> SchwarzschildDiffeoJet:
        return SchwarzschildDiffeoJet(self.metric)

    @property
    def isotropic_jet(self) -> IsotropicDiffeoJet:
        return IsotropicDiffeoJet(self.potential)

    def coordinate_change_inner(self) -> GenericJet:
        """Inner solution (div zeta, zeta) with zeta = M xhat, relating the
        two coordinate descriptions."""
        M = self.M

        def val(z):
            r = np.maximum(np.linalg.norm(z, axis=-1), 1e-300)
            return M * z / r[..., None]

        def dv(z):
            return 2.0 * M / np.maximum(np.linalg.norm(z, axis=-1), 1e-300)

        return GenericJet(scalar=dv, vector=VectorField(val, dv, "zeta-iso"))


def normalization(kernel: RadialKernel, M: float) -> float:
    """delta^2 s2 M, computed from the kernel moments (never assumed)."""
    mom = moments(kernel)
    return kernel.delta**2 * mom.s2 * M


def direct_mass(model: SchwarzschildModel, R0: float, kernel: RadialKernel,
                spec: QuadratureSpec = DEFAULT_SPEC, **kw) -> MassReport:
    """Surface-layer mass of the ball of radius R0 for the coordinate jet."""
    if model.M == 0.0:
        return MassReport(0.0, {"mass": 0.0}, {"mass": 1.0}, 0.0,
                          extras={"normalized": 0.0})
    val, err = linearized_mass(kernel, VACUUM, model.jet,
                               Ball(np.zeros(3), R0), spec, **kw)
    norm = normalization(kernel, model.M)
    return MassReport(val, {"mass": val}, {"mass": 1.0}, err,
                      extras={"normalized": val / norm,
                              "target_prefactor": 4.0 * np.pi / 9.0})


def _isotropy_audit(jet, radius, kernel, spec, n_audit: int = 3) -> float:
    """Relative spread of A . nu over a few rotated surface points."""
    dirs = np.array([[0.0, 0.0, 1.0], [1.0, 1.0, 1.0], [1.0, -2.0, 0.5]])
    dirs = dirs[:n_audit] / np.linalg.norm(dirs[:n_audit], axis=1)[:, None]
    coarse = spec.with_(mu_abs_tol=max(spec.mu_abs_tol, 1e-5))
    vals = []
    for d in dirs:
        a0, _ = alignment_term(jet, 0, radius * d, kernel, coarse)
        vals.append(float(a0 @ d))
    vals = np.array(vals)
    return float(np.ptp(vals) / max(np.max(np.abs(vals)), 1e-300))


def aligned_mass(model: SchwarzschildModel, R0: float, kernel: RadialKernel,
                 spec: QuadratureSpec = DEFAULT_SPEC, *,
                 audit: bool = True) -> MassReport:
    """Flux masses of the alignment terms before and after aligning.

    The unaligned fluxes of A^(0) and A^(1) through the radius-R0 sphere give
    the pi/3 and pi/9 prefactors; solving the alignment fixed point cancels
    A^(0) by an inner solution while shifting A^(1) only at higher order, so
    the aligned mass is the remaining pi/9 term.
    """
    norm = normalization(kernel, model.M) if model.M else 1.0
    if model.M == 0.0:
        return MassReport(0.0, {"m0": 0.0, "m1": 0.0}, {"m1": 1.0}, 0.0)
    jet = model.jet
    zeta = np.array([0.0, 0.0, R0])
    sphere_area = 4.0 * np.pi * R0**2
    a0, a1, e_pair = alignment_pair(jet, zeta, kernel, spec)
    m0 = sphere_area * float(a0[2])
    m1 = sphere_area * float(a1[2])

    dom = Annulus(np.zeros(3), R0 - 2.5 * kernel.cutoff, R0 + 2.5 * kernel.cutoff)
    sol = solve_alignment(jet, dom, kernel, spec, symmetry="radial")
    a0_al, a1_al, _ = alignment_pair(sol.aligned, zeta, kernel, spec)
    m0_res = sphere_area * float(a0_al[2])
    m1_al = sphere_area * float(a1_al[2])
    value = m0_res + m1_al

    mom = moments(kernel)
    u_pred = -mom.s2 * kernel.delta**2 / (24.0 * mom.s) * (2.0 * model.M / R0**2)
    u_found = float(sol.inner.vector(zeta[None, :])[0][2])
    extras = {
        "m0_normalized": m0 / norm,
        "m1_normalized": m1 / norm,
        "aligned_normalized": value / norm,
        "m0_residual_fraction": abs(m0_res) / max(abs(m0), 1e-300),
        "m1_shift_fraction": abs(m1_al - m1) / max(abs(m1), 1e-300),
        "inner_solution_vs_prediction": u_found / u_pred if u_pred else np.nan,
        "solver_iterations": sol.iterations,
        "solver_residual_ratio": sol.residual_ratio,
        "target_m0": np.pi / 3.0,
        "target_m1": np.pi / 9.0,
    }
    if audit:
        extras["isotropy_spread"] = _isotropy_audit(jet, R0, kernel, spec)
    return MassReport(
        value=value,
        components={"m0": m0, "m1": m1, "m0_aligned_residual": m0_res,
                    "m1_aligned": m1_al},
        combination={"m0_aligned_residual": 1.0, "m1_aligned": 1.0},
        error_estimate=2.0 * e_pair * sphere_area,
        extras=extras)


def a1_pointwise(model: SchwarzschildModel, zeta: Array, kernel: RadialKernel,
                 spec: QuadratureSpec = DEFAULT_SPEC) -> tuple[Array, Array]:
    """A^(1) at a point, with the pointwise asymptotic prediction
    (delta^2 s2 / 72) grad V."""
    zeta = np.asarray(zeta, float)
    if model.M == 0.0:
        return np.zeros(3), np.zeros(3)
    _, a1, _ = alignment_pair(model.jet, zeta, kernel, spec)
    mom = moments(kernel)
    pred = kernel.delta**2 * mom.s2 / 72.0 * model.potential.grad(zeta[None, :])[0]
    return a1, pred


def p_of_r(model: SchwarzschildModel, R: float, kernel: RadialKernel,
           spec: QuadratureSpec = DEFAULT_SPEC) -> tuple[float, float]:
    """Radially weighted spatial integral at one surface point:

        P(R) = int (r - R) (nabla_1 - nabla_2) L(x, y) d^3y,   |x| = R.

    Its scaled limit 2 pi R^2 P(R) carries the prefactor 2 pi, distinct from
    the direct mass's 4 pi / 9: the two limiting procedures do not commute.
    """
    if model.M == 0.0:
        return 0.0, 0.0
    x = np.array([0.0, 0.0, R])
    jet = model.jet

    def fn(X, Y):
        w = np.linalg.norm(Y, axis=-1) - R
        return w * jet.nabla_diff(kernel, X, Y, spec)

    return _support_integral(fn, kernel, x, spec, axisymmetric=True)


def isotropic_jet_relation(model: SchwarzschildModel, samples: Sequence[tuple],
                           kernel: RadialKernel,
                           spec: QuadratureSpec = DEFAULT_SPEC) -> float:
    """Max relative deviation of nabla_{1,v'} - nabla_{1,v} - nabla_{1,u}
    over sample pairs, where u = (div zeta, zeta), zeta = M xhat."""
    if model.M == 0.0:
        return 0.0
    X = np.array([s[0] for s in samples], float)
    Y = np.array([s[1] for s in samples], float)
    v = model.jet
    vp = model.isotropic_jet
    u = model.coordinate_change_inner()
    lhs = vp.nabla1(kernel, X, Y, spec)
    rhs = v.nabla1(kernel, X, Y, spec) + u.nabla1(kernel, X, Y, spec)
    scale = np.maximum(np.abs(lhs), np.abs(rhs))
    scale = np.maximum(scale, 1e-3 * np.max(scale))
    return float(np.max(np.abs(lhs - rhs) / scale))


def mass_sweep(model: SchwarzschildModel, radii: Sequence[float],
               kernel: RadialKernel, spec: QuadratureSpec = DEFAULT_SPEC,
               *, with_alignment: bool = False) -> list[dict]:
    """Per-radius table of the scenario's scalars for CSV export."""
    rows = []
    norm = normalization(kernel, model.M) if model.M else 1.0
    for R0 in radii:
        rep = direct_mass(model, R0, kernel, spec)
        row = {"R0": R0, "direct": rep.value,
               "direct_normalized": rep.extras.get("normalized", 0.0),
               "direct_error": rep.error_estimate}
        pv, pe = p_of_r(model, R0, kernel, spec)
        row["p_of_r"] = pv
        row["p_scaled"] = pv * R0**2 / norm if model.M else 0.0
        if with_alignment:
            arep = aligned_mass(model, R0, kernel, spec, audit=False)
            row.update({"m0_normalized": arep.extras["m0_normalized"],
                        "m1_normalized": arep.extras["m1_normalized"],
                        "aligned_normalized": arep.extras["aligned_normalized"]})
        rows.append(row)
    return rows
