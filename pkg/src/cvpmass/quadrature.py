"""Numerical integration engines.

Everything here is vectorized over batches of evaluation points and fully
deterministic for the deterministic methods: node layouts depend only on the
input geometry, and reductions run in fixed order.  The signed line integrals
use the symmetric pairing int_0^inf [g(s) - g(-s)] ds, which is mandatory for
the conditionally convergent Newtonian tails, plus an exact power-tail panel
obtained by the substitution u = 1/s.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import (
    NonFiniteIntegrand,
    QuadratureFailure,
    SlowDecay,
    UnsupportedOrder,
)

Array = np.ndarray

# Gauss-Kronrod 7-15 pair on [-1, 1]; the embedded Gauss-7 nodes sit at the
# odd Kronrod slots, which gives a free error estimate per panel.
_GK15_X = np.array([
    -0.991455371120813, -0.949107912342759, -0.864864423359769,
    -0.741531185599394, -0.586087235467691, -0.405845151377397,
    -0.207784955007898, 0.0,
    0.207784955007898, 0.405845151377397, 0.586087235467691,
    0.741531185599394, 0.864864423359769, 0.949107912342759,
    0.991455371120813,
])
_GK15_WK = np.array([
    0.022935322010529, 0.063092092629979, 0.104790010322250,
    0.140653259715525, 0.169004726639267, 0.190350578064785,
    0.204432940075298, 0.209482141084728,
    0.204432940075298, 0.190350578064785, 0.169004726639267,
    0.140653259715525, 0.104790010322250, 0.063092092629979,
    0.022935322010529,
])
_GK15_WG = np.array([
    0.129484966168870, 0.279705391489277, 0.381830050505119,
    0.417959183673469,
    0.381830050505119, 0.279705391489277, 0.129484966168870,
])
_G7_SLOTS = np.arange(1, 15, 2)


@lru_cache(maxsize=64)
def gauss_legendre(n: int) -> tuple[Array, Array]:
    x, w = np.polynomial.legendre.leggauss(int(n))
    return x, w


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances and method selection for the integration engines."""

    method: str = "adaptive"  # adaptive | product_gauss | montecarlo
    rel_tol: float = 1e-8
    abs_tol: float = 1e-12
    max_evals: int = 2_000_000
    seed: int = 0
    line_truncation: float = 50.0   # T = line_truncation * max(1, |x|/delta), in tau units
    line_tail_order: int = 2
    fd_step: float = 1e-3           # finite-difference step, in units of the kernel range
    radial_order: int = 32          # Gauss nodes per radial panel of kernel-support balls
    angular_order: int = 12         # phi nodes per half-order; mu handled adaptively
    mu_abs_tol: float = 1e-7        # absolute tolerance of adaptive polar integrals

    def validate(self) -> None:
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise QuadratureFailure("tolerances must be positive")
        if self.max_evals < 1_000:
            raise QuadratureFailure("max_evals must be at least 1e3")

    def with_(self, **kw) -> "QuadratureSpec":
        return replace(self, **kw)


DEFAULT_SPEC = QuadratureSpec()


def rotations_to_axes(axes: Array) -> Array:
    """Batched rotation matrices mapping e3 to each row of ``axes``."""
    a = np.asarray(axes, float)
    n = np.linalg.norm(a, axis=-1, keepdims=True)
    a = np.where(n > 0, a / np.maximum(n, 1e-300), np.array([0.0, 0.0, 1.0]))
    e3 = np.array([0.0, 0.0, 1.0])
    v = np.cross(np.broadcast_to(e3, a.shape), a)
    c = a[..., 2]
    s2 = np.einsum("...i,...i->...", v, v)
    out = np.zeros(a.shape[:-1] + (3, 3))
    vx = np.zeros_like(out)
    vx[..., 0, 1] = -v[..., 2]
    vx[..., 0, 2] = v[..., 1]
    vx[..., 1, 0] = v[..., 2]
    vx[..., 1, 2] = -v[..., 0]
    vx[..., 2, 0] = -v[..., 1]
    vx[..., 2, 1] = v[..., 0]
    fac = np.where(s2 > 1e-28, (1.0 - c) / np.maximum(s2, 1e-300), 0.0)
    out = (np.eye(3) + vx
           + np.einsum("...ij,...jk->...ik", vx, vx) * fac[..., None, None])
    flip = (s2 <= 1e-28) & (c < 0)
    out[flip] = np.diag([1.0, -1.0, -1.0])
    return out


def rotation_to_axis(axis: Array) -> Array:
    """Rotation matrix mapping e3 to the given (nonzero) axis."""
    a = np.asarray(axis, float)
    n = np.linalg.norm(a)
    if n == 0.0:
        return np.eye(3)
    a = a / n
    e3 = np.array([0.0, 0.0, 1.0])
    v = np.cross(e3, a)
    c = float(np.dot(e3, a))
    s2 = float(np.dot(v, v))
    if s2 < 1e-28:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    vx = np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])
    return np.eye(3) + vx + vx @ vx * ((1.0 - c) / s2)


# ---------------------------------------------------------------------------
# adaptive 1D (vectorized Gauss-Kronrod panels)
# ---------------------------------------------------------------------------

def adaptive_gk(f: Callable[[Array], Array], a: float, b: float, *,
                abs_tol: float, rel_tol: float = 0.0, init_panels: int = 4,
                max_panels: int = 2048, breakpoints: Sequence[float] = (),
                return_edges: bool = False):
    """Adaptive G7K15 integration of a batched scalar function on [a, b].

    ``f`` maps an (m,) array of nodes to (m,) values.  Worst-first
    refinement: each round bisects only the panels carrying the bulk of the
    Kronrod-Gauss discrepancy and evaluates just the new halves.  Returns
    (value, error_estimate, n_evaluations).
    """
    def eval_panels(A, B):
        mid = 0.5 * (A + B)
        half = 0.5 * (B - A)
        X = mid[:, None] + half[:, None] * _GK15_X[None, :]
        F = np.asarray(f(X.ravel()), float).reshape(X.shape)
        Ik = np.sum(F * _GK15_WK[None, :], axis=1) * half
        Ig = np.sum(F[:, _G7_SLOTS] * _GK15_WG[None, :], axis=1) * half
        return Ik, np.abs(Ik - Ig), X.size

    pts = [a] + sorted(p for p in breakpoints if a < p < b) + [b]
    edges = []
    for lo, hi in zip(pts[:-1], pts[1:]):
        k = max(1, int(np.ceil(init_panels * (hi - lo) / (b - a))))
        edges.append(np.linspace(lo, hi, k + 1)[:-1])
    A = np.concatenate(edges + [np.array([b])])[:-1]
    B = np.concatenate(edges + [np.array([b])])[1:]
    Ik, perr, neval = eval_panels(A, B)
    for _ in range(200):
        val = Ik.sum()
        err = perr.sum()
        tol = max(abs_tol, rel_tol * abs(val))
        if err <= tol or len(A) >= max_panels:
            if return_edges:
                return float(val), float(err), neval, np.sort(np.append(A, b))
            return float(val), float(err), neval
        # refine the panels responsible for the top share of the error
        order = np.argsort(perr)[::-1]
        cum = np.cumsum(perr[order])
        n_sel = int(np.searchsorted(cum, 0.90 * err)) + 1
        n_sel = min(max(n_sel, 1), len(A), max(1, max_panels - len(A)))
        sel = order[:n_sel]
        mask = np.zeros(len(A), bool)
        mask[sel] = True
        Ar, Br = A[mask], B[mask]
        Am = 0.5 * (Ar + Br)
        A2 = np.concatenate([Ar, Am])
        B2 = np.concatenate([Am, Br])
        Ik2, perr2, n2 = eval_panels(A2, B2)
        neval += n2
        A = np.concatenate([A[~mask], A2])
        B = np.concatenate([B[~mask], B2])
        Ik = np.concatenate([Ik[~mask], Ik2])
        perr = np.concatenate([perr[~mask], perr2])
    if return_edges:
        return float(Ik.sum()), float(perr.sum()), neval, np.sort(np.append(A, b))
    return float(Ik.sum()), float(perr.sum()), neval


# ---------------------------------------------------------------------------
# grids on balls and spheres
# ---------------------------------------------------------------------------

def radial_panels(r_in: float, r_out: float, n: int) -> tuple[Array, Array]:
    """Gauss nodes/weights (including r^2) on [r_in, r_out] over three panels.

    The panel split concentrates nodes toward the outer edge where compactly
    supported kernels and their derivatives vary fastest.
    """
    xg, wg = gauss_legendre(max(4, n // 3))
    span = r_out - r_in
    cuts = (r_in, r_in + 0.55 * span, r_in + 0.87 * span, r_out)
    nodes, wts = [], []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        nodes.append(0.5 * (lo + hi) + 0.5 * (hi - lo) * xg)
        wts.append(0.5 * (hi - lo) * wg)
    r = np.concatenate(nodes)
    w = np.concatenate(wts) * r**2
    return r, w


def sphere_grid(n_mu: int, n_phi: int) -> tuple[Array, Array]:
    """Unit-sphere product grid: directions (m,3) and weights summing to 4*pi."""
    xmu, wmu = gauss_legendre(n_mu)
    phi = 2.0 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
    wphi = np.full(n_phi, 2.0 * np.pi / n_phi)
    MU, PH = np.meshgrid(xmu, phi, indexing="ij")
    st = np.sqrt(np.maximum(1.0 - MU**2, 0.0))
    dirs = np.stack([st * np.cos(PH), st * np.sin(PH), MU], axis=-1).reshape(-1, 3)
    w = np.einsum("i,j->ij", wmu, wphi).ravel()
    return dirs, w


def ball_grid(radius: float, n_r: int, n_mu: int, n_phi: int,
              frame: Array | None = None) -> tuple[Array, Array]:
    """Product grid over a centered ball: points (m,3), weights include r^2."""
    r, wr = radial_panels(0.0, radius, n_r)
    dirs, wd = sphere_grid(n_mu, n_phi)
    pts = r[:, None, None] * dirs[None, :, :]
    w = np.einsum("i,j->ij", wr, wd)
    pts = pts.reshape(-1, 3)
    if frame is not None:
        pts = pts @ np.asarray(frame, float).T
    return pts, w.ravel()


def integrate_ball(f: Callable[[Array], Array], center: Array, radius: float,
                   spec: QuadratureSpec = DEFAULT_SPEC) -> tuple[float, float]:
    """Integral of a scalar field over a ball, with an error estimate.

    ``f`` maps (m,3) points to (m,) values.  method 'adaptive' uses
    scipy.integrate.cubature in spherical coordinates; 'product_gauss' a fixed
    two-resolution product grid; 'montecarlo' a seeded uniform sample.
    """
    center = np.asarray(center, float)
    if spec.method == "montecarlo":
        rng = np.random.default_rng(spec.seed)
        n = min(spec.max_evals, 200_000)
        u = rng.normal(size=(n, 3))
        u /= np.linalg.norm(u, axis=1)[:, None]
        r = radius * rng.uniform(0.0, 1.0, n) ** (1.0 / 3.0)
        pts = center[None, :] + r[:, None] * u
        vals = np.asarray(f(pts), float)
        if not np.all(np.isfinite(vals)):
            raise NonFiniteIntegrand("montecarlo ball integrand not finite")
        vol = 4.0 / 3.0 * np.pi * radius**3
        mean = float(vals.mean())
        err = float(vals.std(ddof=1) / np.sqrt(n)) * vol
        return vol * mean, err

    if spec.method == "adaptive":
        from scipy.integrate import cubature

        def g(pts_sph):
            r = pts_sph[:, 0]
            mu = pts_sph[:, 1]
            ph = pts_sph[:, 2]
            st = np.sqrt(np.maximum(1.0 - mu**2, 0.0))
            xyz = center[None, :] + np.stack(
                [r * st * np.cos(ph), r * st * np.sin(ph), r * mu], axis=-1)
            return np.asarray(f(xyz), float) * r**2

        res = cubature(g, [0.0, -1.0, 0.0], [radius, 1.0, 2.0 * np.pi],
                       rtol=spec.rel_tol, atol=spec.abs_tol,
                       max_subdivisions=max(100, spec.max_evals // 1000))
        if not np.isfinite(res.estimate):
            raise NonFiniteIntegrand("ball integrand produced non-finite estimate")
        if res.status != "converged":
            if res.error > 10.0 * max(spec.abs_tol, spec.rel_tol * abs(res.estimate)):
                raise QuadratureFailure(
                    f"ball cubature stalled: estimate={res.estimate:g} error={res.error:g}")
        return float(res.estimate), float(res.error)

    # product_gauss: fixed grid with a refined rerun as the error estimate
    vals = []
    for scale in (1.0, 1.5):
        n_r = int(np.ceil(spec.radial_order * scale))
        n_mu = int(np.ceil(2 * spec.angular_order * scale))
        n_phi = int(np.ceil(2 * spec.angular_order * scale))
        pts, w = ball_grid(radius, n_r, n_mu, n_phi)
        fv = np.asarray(f(pts + center[None, :]), float)
        if not np.all(np.isfinite(fv)):
            raise NonFiniteIntegrand("product-gauss ball integrand not finite")
        vals.append(float(np.sum(w * fv)))
    return vals[1], abs(vals[1] - vals[0])


# ---------------------------------------------------------------------------
# batched signed line integrals
# ---------------------------------------------------------------------------

def _line_breakpoints(base_pts: Array, dirs: Array, chord: Array, T: Array,
                      feature_radii: Sequence[float] = ()) -> Array:
    """Per-item sorted arc-length breakpoints covering [0, T].

    The template has fixed width: chord-scale points, a geometric ladder to T,
    a block around the closest approach to the origin, and crossings of any
    declared feature radii (e.g. window edges of a metric field).  Degenerate
    (zero-width) panels produced by clipping carry zero weight and are
    harmless.
    """
    n = base_pts.shape[0]
    proj = np.einsum("ij,ij->i", base_pts, dirs)
    speak = np.abs(proj)
    d0 = np.sqrt(np.maximum(np.einsum("ij,ij->i", base_pts, base_pts) - proj**2, 0.0))
    w = np.maximum(d0, 1e-6 * np.maximum(chord, 1e-300))
    cands = [np.zeros(n)]
    for fct in (0.5, 1.0, 2.5):
        cands.append(np.minimum(fct * chord, T))
    base = np.maximum(2.5 * chord, 1e-9 * T)
    ratio = np.maximum(T / base, 1.0 + 1e-12) ** (1.0 / 8.0)
    for k in range(1, 9):
        cands.append(base * ratio**k)
    for fct in (-4.0, -1.0, 0.0, 1.0, 4.0):
        cands.append(np.clip(speak + fct * w, 0.0, T))
    for rad in feature_radii:
        # crossings of |base + s*dir| = rad on both half-lines
        disc = proj**2 - (np.einsum("ij,ij->i", base_pts, base_pts) - rad**2)
        sq = np.sqrt(np.maximum(disc, 0.0))
        for root in (-proj - sq, -proj + sq, proj - sq, proj + sq):
            cands.append(np.clip(np.abs(root), 0.0, T))
            cands.append(np.clip(0.5 * np.abs(root), 0.0, T))
    cands.append(T)
    B = np.stack(cands, axis=1)
    B.sort(axis=1)
    return B


def _panel_nodes(B: Array) -> tuple[Array, Array]:
    a, b = B[:, :-1], B[:, 1:]
    mid = 0.5 * (a + b)[..., None]
    half = 0.5 * (b - a)[..., None]
    S = (mid + half * _GK15_X).reshape(B.shape[0], -1)
    W = (half * _GK15_WK).reshape(B.shape[0], -1)
    Wg = np.zeros_like(half * np.ones(15))
    Wg[..., _G7_SLOTS] = half * _GK15_WG
    return S, np.stack([W, Wg.reshape(B.shape[0], -1)], axis=0)


def _tail_nodes(T: Array) -> tuple[Array, Array]:
    """u = 1/s substitution panel covering [T, inf) exactly for power tails."""
    ut = (0.5 / T)[:, None] * (_GK15_X + 1.0)
    st = 1.0 / ut
    wk = (0.5 / T)[:, None] * _GK15_WK * st**2
    wg = np.zeros_like(wk)
    wg[:, _G7_SLOTS] = (0.5 / T)[:, None] * _GK15_WG * st[:, _G7_SLOTS] ** 2
    return st, np.stack([wk, wg], axis=0)


def _eval_pair(field, ZP: Array, ZM: Array) -> Array:
    D = np.asarray(field(ZP), float) - np.asarray(field(ZM), float)
    if D.ndim == 2:
        D = D[..., None]
    return D


def paired_line(field: Callable[[Array], Array], base_pts: Array, dirs: Array,
                chord: Array, spec: QuadratureSpec = DEFAULT_SPEC, *,
                delta: float = 1.0, feature_radii: Sequence[float] = (),
                reach: float | None = None,
                frozen_breaks: Array | None = None) -> tuple[Array, Array, Array]:
    """Batched int_0^inf [field(p + s d) - field(p - s d)] ds.

    ``field`` maps (n, q, 3) points to (n, q) or (n, q, K) stacked components.
    Returns (values (n,K), error (n,K), breakpoints) so callers differentiating
    through the integral can freeze the panel layout across a stencil.
    """
    base_pts = np.asarray(base_pts, float)
    dirs = np.asarray(dirs, float)
    n = base_pts.shape[0]
    chord = np.broadcast_to(np.asarray(chord, float), (n,))
    radius = np.linalg.norm(base_pts, axis=1)
    T_spec = spec.line_truncation * np.maximum(1.0, radius / delta) * np.maximum(chord, 1e-3 * delta)
    T_geom = 4.0 * (radius + 10.0 * delta)
    if reach is not None:
        T_geom = np.minimum(T_geom, reach + radius + delta)
        T_spec = np.minimum(T_spec, reach + radius + delta)
    T = np.maximum(T_spec, T_geom)
    if frozen_breaks is not None:
        B = frozen_breaks
    else:
        B = _line_breakpoints(base_pts, dirs, chord, T, feature_radii)
    S, W2 = _panel_nodes(B)
    St, Wt2 = _tail_nodes(T)
    S = np.concatenate([S, St], axis=1)
    W2 = np.concatenate([W2, Wt2], axis=2)
    ZP = base_pts[:, None, :] + S[..., None] * dirs[:, None, :]
    ZM = base_pts[:, None, :] - S[..., None] * dirs[:, None, :]
    D = _eval_pair(field, ZP, ZM)
    vk = np.einsum("nq,nqk->nk", W2[0], D)
    vg = np.einsum("nq,nqk->nk", W2[1], D)
    return vk, np.abs(vk - vg), B


def onesided_line(field: Callable[[Array], Array], X: Array, Y: Array,
                  dirs: Array, chord: Array, spec: QuadratureSpec = DEFAULT_SPEC, *,
                  delta: float = 1.0, feature_radii: Sequence[float] = (),
                  reach: float | None = None) -> tuple[Array, Array]:
    """Batched int_0^inf [field(y + s d) - field(x - s d)] ds.

    Realizes (int_1^inf - int_{-inf}^0) dtau field(x + tau xi) / |xi| pairs.
    """
    X = np.asarray(X, float)
    Y = np.asarray(Y, float)
    n = X.shape[0]
    chord = np.broadcast_to(np.asarray(chord, float), (n,))
    radius = np.maximum(np.linalg.norm(X, axis=1), np.linalg.norm(Y, axis=1))
    T_spec = spec.line_truncation * np.maximum(1.0, radius / delta) * np.maximum(chord, 1e-3 * delta)
    T_geom = 4.0 * (radius + 10.0 * delta)
    if reach is not None:
        T_geom = np.minimum(T_geom, reach + radius + delta)
        T_spec = np.minimum(T_spec, reach + radius + delta)
    T = np.maximum(T_spec, T_geom)
    BY = _line_breakpoints(Y, dirs, chord, T, feature_radii)
    BX = _line_breakpoints(X, -dirs, chord, T, feature_radii)
    B = np.concatenate([BY, BX], axis=1)
    B.sort(axis=1)
    S, W2 = _panel_nodes(B)
    St, Wt2 = _tail_nodes(T)
    S = np.concatenate([S, St], axis=1)
    W2 = np.concatenate([W2, Wt2], axis=2)
    ZP = Y[:, None, :] + S[..., None] * dirs[:, None, :]
    ZM = X[:, None, :] - S[..., None] * dirs[:, None, :]
    D = _eval_pair(field, ZP, ZM)
    vk = np.einsum("nq,nqk->nk", W2[0], D)
    vg = np.einsum("nq,nqk->nk", W2[1], D)
    return vk, np.abs(vk - vg)


def chord_line(field: Callable[[Array], Array], X: Array, dirs: Array,
               chord: Array, n_nodes: int = 48) -> Array:
    """Batched bounded integral int_0^|xi| field(x + s d) ds."""
    X = np.asarray(X, float)
    chord = np.asarray(chord, float)
    xg, wg = gauss_legendre(n_nodes)
    S = 0.5 * chord[:, None] * (xg[None, :] + 1.0)
    W = 0.5 * chord[:, None] * wg[None, :]
    Z = X[:, None, :] + S[..., None] * dirs[:, None, :]
    F = np.asarray(field(Z), float)
    if F.ndim == 2:
        F = F[..., None]
    return np.einsum("nq,nqk->nk", W, F)


def check_tail_decay(field, base_pts: Array, dirs: Array, T: Array,
                     order: int, slack: float = 8.0) -> None:
    """Raise SlowDecay when the paired difference decays slower than declared."""
    def D_at(s):
        ZP = base_pts + s[:, None] * dirs
        ZM = base_pts - s[:, None] * dirs
        d = np.asarray(field(ZP[:, None, :]), float) - np.asarray(field(ZM[:, None, :]), float)
        return d.reshape(len(s), -1)

    d1 = D_at(T)
    d2 = D_at(2.0 * T)
    scale = np.max(np.abs(d1), initial=1e-300)
    bad = np.abs(d2) > slack * np.abs(d1) * 2.0 ** (-order) + 1e-12 * scale
    if np.any(bad):
        raise SlowDecay(
            f"paired line integrand decays slower than declared order {order}")


def integrate_signed_line(g: Callable[[Array], Array],
                          spec: QuadratureSpec = DEFAULT_SPEC, *,
                          center: float = 0.0,
                          features: Sequence[float] = ()) -> tuple[float, float]:
    """int eps(tau - center) g(tau) dtau for a scalar function of tau.

    Computed as int_0^inf [g(center + t) - g(center - t)] dt; the paired
    difference decays one order faster than g itself.  A u = 1/t panel
    integrates the power-law tail beyond the truncation exactly for smooth
    algebraic decay; the declared ``line_tail_order`` is enforced as a decay
    check.  ``center=1`` gives the eps(1 - tau) pairing (sign flipped by the
    caller if needed: int eps(1-tau) g dtau = -int_0^inf [g(1+t)-g(1-t)] dt).
    """
    T = float(spec.line_truncation)
    feats = [abs(f - center) for f in features] + [1.0, abs(center) + 1.0]
    T = max(T, 4.0 * max(feats))

    def D(t):
        return np.asarray(g(center + t), float) - np.asarray(g(center - t), float)

    val, err, _ = adaptive_gk(D, 0.0, T, abs_tol=spec.abs_tol, rel_tol=spec.rel_tol,
                              breakpoints=sorted(set(f for f in feats if 0 < f < T)))
    # tail via u-substitution
    xg, wg = gauss_legendre(15)
    u = 0.5 / T * (xg + 1.0)
    tail = float(np.sum(0.5 / T * wg * D(1.0 / u) / u**2))
    d1 = abs(float(D(np.array([T]))[0]))
    d2 = abs(float(D(np.array([2.0 * T]))[0]))
    if d2 > 8.0 * d1 * 2.0 ** (-spec.line_tail_order) + 1e-13 * max(d1, 1.0):
        raise SlowDecay("signed line integrand decays slower than declared order")
    return val + tail, err + abs(tail) * 1e-6 + d1 * T * 2.0 ** (-spec.line_tail_order)


# ---------------------------------------------------------------------------
# nested double integrals over a region and its complement
# ---------------------------------------------------------------------------

def clipped_radial_intervals(x: Array, dirs: Array, r_max: float,
                             region, want_inside: bool) -> tuple[Array, Array]:
    """Per (point, direction): radial sub-intervals of [0, r_max] along the
    rays x_n + r * dirs_{n,m} lying inside (or outside) a Ball/Annulus.

    ``dirs`` has shape (n, m, 3).  Returns (lo, hi) of shape (n, m, segs);
    excluded segments are collapsed to zero width.
    """
    from .geometry import Ball, Annulus

    if isinstance(region, Ball):
        radii = [region.radius]
    elif isinstance(region, Annulus):
        radii = [region.r_in, region.r_out]
    else:
        raise QuadratureFailure("clipped intervals require Ball or Annulus regions")
    center = region.center
    xc = x - center[None, :]
    n, m = dirs.shape[0], dirs.shape[1]
    proj = np.einsum("nj,nmj->nm", xc, dirs)
    nx2 = np.einsum("ij,ij->i", xc, xc)[:, None]
    cuts = [np.zeros((n, m)), np.full((n, m), r_max)]
    for R in radii:
        disc = proj**2 - (nx2 - R * R)
        sq = np.sqrt(np.maximum(disc, 0.0))
        for root in (-proj - sq, -proj + sq):
            cuts.append(np.clip(np.where(disc > 0.0, root, 0.0), 0.0, r_max))
    cuts = np.stack(cuts, axis=-1)
    cuts.sort(axis=-1)
    lo = cuts[..., :-1]
    hi = cuts[..., 1:]
    mid = 0.5 * (lo + hi)
    pts = xc[:, None, None, :] + mid[..., None] * dirs[:, :, None, :]
    rr = np.linalg.norm(pts, axis=-1)
    if isinstance(region, Ball):
        inside = rr <= region.radius
    else:
        inside = (rr >= region.r_in) & (rr <= region.r_out)
    keep = inside if want_inside else ~inside
    lo = np.where(keep, lo, 0.0)
    hi = np.where(keep, hi, lo)
    return lo, np.maximum(hi, lo)


def integrate_double(f: Callable[[Array, Array], Array], outer_region,
                     kernel_radius: float, spec: QuadratureSpec = DEFAULT_SPEC, *,
                     inner_region=None, inner_inside: bool = False,
                     outer_weight: Callable[[Array], Array] | None = None,
                     outer_map: Callable[[Array], Array] | None = None,
                     clip_outer_to_layer: bool = True,
                     n_outer_r: int = 16, n_outer_mu: int = 12, n_outer_phi: int = 12,
                     n_inner_mu: int = 16, n_inner_phi: int = 8,
                     n_inner_r: int = 10, refine: float = 1.4) -> tuple[float, float]:
    """Nested double integral  int_outer dx int_{S(x)} dy f(x, y).

    The inner domain S(x) is the kernel-support ball B(x, kernel_radius)
    intersected with ``inner_region`` (inside or complement, per
    ``inner_inside``); ``inner_region=None`` integrates the full ball.  The
    outer region must be a Ball or Annulus.  For complement-type inner
    domains the outer radial range is clipped to the layer within
    kernel_radius of the inner region's boundary, which is exact for
    compactly supported kernels.  The integral runs at two resolutions; the
    difference is the reported error estimate.
    """
    from .geometry import Ball, Annulus

    if isinstance(outer_region, Ball):
        r_lo, r_hi, center = 0.0, outer_region.radius, outer_region.center
    elif isinstance(outer_region, Annulus):
        r_lo, r_hi, center = outer_region.r_in, outer_region.r_out, outer_region.center
    else:
        raise QuadratureFailure("integrate_double outer region must be Ball or Annulus")
    if (clip_outer_to_layer and inner_region is not None and not inner_inside
            and isinstance(inner_region, Ball)
            and np.allclose(inner_region.center, center)):
        # only points within kernel_radius of the inner boundary can meet the
        # complement: |x| >= R_inner - kernel_radius
        r_lo = max(r_lo, inner_region.radius - kernel_radius)
        r_hi = min(r_hi, inner_region.radius + kernel_radius)
    if r_hi <= r_lo:
        return 0.0, 0.0

    frame = getattr(outer_region, "frame", None)

    def run(scale: float) -> float:
        xr, wr = gauss_legendre(max(8, int(n_outer_r * scale)))
        rr = 0.5 * (r_lo + r_hi) + 0.5 * (r_hi - r_lo) * xr
        wrr = 0.5 * (r_hi - r_lo) * wr * rr**2
        dirs_o, wd_o = sphere_grid(max(6, int(n_outer_mu * scale)),
                                   max(4, int(n_outer_phi * scale)))
        if frame is not None:
            dirs_o = dirs_o @ np.asarray(frame, float).T
        X = center[None, :] + (rr[:, None, None] * dirs_o[None, :, :]).reshape(-1, 3)
        WX = np.einsum("i,j->ij", wrr, wd_o).ravel()
        if outer_weight is not None:
            WX = WX * np.asarray(outer_weight(X), float)
        if outer_map is not None:
            X = np.asarray(outer_map(X), float)
        n_mu = max(6, int(n_inner_mu * scale))
        n_phi = max(4, int(n_inner_phi * scale))
        n_r = max(4, int(n_inner_r * scale))
        xmu, wmu = gauss_legendre(n_mu)
        phi = 2.0 * np.pi * (np.arange(n_phi) + 0.5) / n_phi
        stq = np.sqrt(np.maximum(1.0 - xmu**2, 0.0))
        dirs_loc = np.stack([
            np.outer(stq, np.cos(phi)), np.outer(stq, np.sin(phi)),
            np.outer(xmu, np.ones(n_phi))], axis=-1).reshape(-1, 3)
        wdir = np.einsum("i,j->ij", wmu, np.full(n_phi, 2.0 * np.pi / n_phi)).ravel()
        xg, wg = gauss_legendre(n_r)
        total = 0.0
        m = dirs_loc.shape[0]
        chunk = max(1, 400_000 // max(1, m * n_r * 4))
        for s0 in range(0, X.shape[0], chunk):
            xs = X[s0:s0 + chunk]
            ws = WX[s0:s0 + chunk]
            if inner_region is not None:
                axis = xs - inner_region.center[None, :]
            else:
                axis = np.broadcast_to(np.array([0.0, 0.0, 1.0]), xs.shape)
            frames = rotations_to_axes(axis)
            dirs = np.einsum("nab,mb->nma", frames, dirs_loc)
            if inner_region is None:
                lo = np.zeros((xs.shape[0], m, 1))
                hi = np.full_like(lo, kernel_radius)
            else:
                lo, hi = clipped_radial_intervals(xs, dirs, kernel_radius,
                                                  inner_region, inner_inside)
            mid = 0.5 * (lo + hi)[..., None]
            half = 0.5 * (hi - lo)[..., None]
            R = mid + half * xg                     # (n, m, seg, g)
            WR = half * wg * R**2
            Y = xs[:, None, None, None, :] + R[..., None] * dirs[:, :, None, None, :]
            Xb = np.broadcast_to(xs[:, None, None, None, :], Y.shape)
            vals = np.asarray(f(Xb.reshape(-1, 3), Y.reshape(-1, 3)), float).reshape(R.shape)
            inner_vals = np.einsum("nmsg,nmsg->nm", WR, vals)
            total += float(np.sum(ws * (inner_vals @ wdir)))
        return total

    v1 = run(1.0)
    v2 = run(refine)
    return v2, abs(v2 - v1) + spec.abs_tol
