"""Radial short-range Lagrangian kernels and their moments."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.integrate import quad

from .errors import NonDifferentiableKernel, QuadratureFailure

Array = np.ndarray

TOP_HAT = "top_hat"
SMOOTH_BUMP = "smooth_bump"
GAUSSIAN = "gaussian"

_GAUSSIAN_CUTOFF = 8.0  # tail mass beyond 8 sigma is < 1e-12 of the peak


@dataclass(frozen=True)
class KernelMoments:
    s: float    # zeroth moment: integral of the kernel over R^3
    s2: float   # second moment normalized by the squared range
    moment_table: tuple[float, ...] = ()

    def __post_init__(self):
        if self.s <= 0 or self.s2 <= 0:
            raise QuadratureFailure("kernel moments must be positive")


@dataclass(frozen=True)
class RadialKernel:
    """Non-negative radial profile with compact (or truncated) support.

    The profile depends on |xi| only, so the induced two-point Lagrangian is
    symmetric and invariant under simultaneous rotations by construction.
    """

    kind: str = SMOOTH_BUMP
    delta: float = 1.0        # range
    amplitude: float = 1.0
    sigma: float | None = None  # gaussian width; the range is then delta = sigma

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("kernel range must be positive")
        if self.amplitude < 0:
            raise ValueError("kernel amplitude must be non-negative")
        if self.kind == GAUSSIAN:
            sig = self.sigma if self.sigma is not None else self.delta
            object.__setattr__(self, "sigma", float(sig))
            object.__setattr__(self, "delta", float(sig))
        elif self.kind not in (TOP_HAT, SMOOTH_BUMP):
            raise ValueError(f"unknown kernel kind {self.kind!r}")

    @property
    def cutoff(self) -> float:
        """Radius beyond which the profile vanishes identically."""
        if self.kind == GAUSSIAN:
            return _GAUSSIAN_CUTOFF * self.sigma
        return self.delta

    @property
    def differentiable(self) -> bool:
        return self.kind != TOP_HAT

    def profile(self, r: Array) -> Array:
        r = np.asarray(r, float)
        if self.kind == TOP_HAT:
            return self.amplitude * (r <= self.delta)
        if self.kind == SMOOTH_BUMP:
            t = r / self.delta
            out = np.zeros_like(t)
            m = t < 1.0
            tm = t[m]
            out[m] = self.amplitude * np.exp(1.0 - 1.0 / (1.0 - tm * tm))
            return out
        t = r / self.sigma
        out = self.amplitude * np.exp(-0.5 * t * t)
        return np.where(r <= self.cutoff, out, 0.0)

    def profile_prime(self, r: Array) -> Array:
        """d(profile)/dr; rejected for the non-differentiable top hat."""
        if not self.differentiable:
            raise NonDifferentiableKernel(
                "top-hat kernels admit no derivative; use smooth_bump or gaussian")
        r = np.asarray(r, float)
        if self.kind == SMOOTH_BUMP:
            t = r / self.delta
            out = np.zeros_like(t)
            m = (t < 1.0) & (t > 0.0)
            tm = t[m]
            out[m] = (self.amplitude * np.exp(1.0 - 1.0 / (1.0 - tm * tm))
                      * (-2.0 * tm / (1.0 - tm * tm) ** 2) / self.delta)
            return out
        t = r / self.sigma
        out = self.amplitude * np.exp(-0.5 * t * t) * (-r / self.sigma**2)
        return np.where(r <= self.cutoff, out, 0.0)


def eval_kernel(kernel: RadialKernel, xi: Array) -> Array:
    """Kernel value at separation vector(s) xi."""
    xi = np.asarray(xi, float)
    return kernel.profile(np.linalg.norm(xi, axis=-1))


def grad_kernel(kernel: RadialKernel, xi: Array) -> Array:
    """Gradient with respect to xi: a radial vector field."""
    xi = np.atleast_2d(np.asarray(xi, float))
    r = np.linalg.norm(xi, axis=-1)
    out = np.zeros_like(xi)
    m = r > 0
    out[m] = kernel.profile_prime(r[m])[:, None] * xi[m] / r[m][:, None]
    return out


def moments(kernel: RadialKernel, rel_tol: float = 1e-10,
            n_extra: int = 2) -> KernelMoments:
    """Zeroth and normalized second radial moments by adaptive quadrature.

    s  = 4 pi int r^2 L(r) dr,
    s2 = (4 pi / delta^2) int r^4 L(r) dr,
    plus a short table of higher moments used in error estimates.
    """
    top = kernel.cutoff

    def radial(power):
        val, err = quad(lambda r: r**power * float(kernel.profile(np.array([r]))[0]),
                        0.0, top, epsabs=1e-300, epsrel=rel_tol, limit=200)
        if err > 100 * rel_tol * max(abs(val), 1e-300):
            raise QuadratureFailure(f"kernel moment r^{power} did not converge")
        return val

    s = 4.0 * np.pi * radial(2)
    s2 = 4.0 * np.pi / kernel.delta**2 * radial(4)
    table = tuple(4.0 * np.pi / kernel.delta ** (2 + 2 * k) * radial(4 + 2 * k)
                  for k in range(1, n_extra + 1))
    return KernelMoments(s=s, s2=s2, moment_table=table)
