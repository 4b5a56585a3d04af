"""Clamped linear activator-inhibitor kinetics and their linear stability.

Production terms are linear in (U, V) but clipped to ``[0, F_max]`` and
``[0, G_max]``; decay is linear. The homogeneous fixed point, its Jacobian
and the dispersion relation of the linearized reaction-diffusion system are
provided so a coefficient set can be checked for diffusion-driven
instability before use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from ..errors import InvalidArgument


@dataclass(frozen=True)
class ReactionCoeffs:
    # Default set chosen with ``fastest_mode``: Turing-unstable for inhibitor
    # to activator diffusion ratios above ~11, fixed point well inside the
    # clamp window.
    a_u: float = 0.08
    b_u: float = -0.08
    c_u: float = 0.05
    d_u: float = 0.03
    a_v: float = 0.10
    b_v: float = 0.0
    c_v: float = -0.15
    d_v: float = 0.06
    F_max: float = 0.20
    G_max: float = 0.50
    diffusion_ratio: float = 25.0  # D_v / D_u in the isotropic limit

    def __post_init__(self):
        if not (self.d_u > 0 and self.d_v > 0):
            raise InvalidArgument("decay rates d_u, d_v must be positive")
        if not (self.F_max > 0 and self.G_max > 0):
            raise InvalidArgument("clamp bounds F_max, G_max must be positive")
        if not self.diffusion_ratio > 0:
            raise InvalidArgument("diffusion ratio must be positive")

    def jacobian(self) -> np.ndarray:
        return np.array([[self.a_u - self.d_u, self.b_u],
                         [self.a_v, self.b_v - self.d_v]])

    def fixed_point(self):
        """Homogeneous steady state of the unclamped system."""
        J = self.jacobian()
        if abs(np.linalg.det(J)) < 1e-14:
            raise InvalidArgument("reaction Jacobian is singular; no isolated fixed point")
        U, V = np.linalg.solve(J, [-self.c_u, -self.c_v])
        return float(U), float(V)

    def bounds(self):
        """Upper bounds U <= F_max/d_u, V <= G_max/d_v reached by saturated production."""
        return self.F_max / self.d_u, self.G_max / self.d_v

    def lipschitz(self) -> float:
        """Rate bound of the explicit (production) part of the kinetics."""
        return max(abs(self.a_u) + abs(self.b_u), abs(self.a_v) + abs(self.b_v))

    def turing_conditions(self, ratio=None) -> dict:
        ratio = self.diffusion_ratio if ratio is None else ratio
        J = self.jacobian()
        U, V = self.fixed_point()
        F = self.a_u * U + self.b_u * V + self.c_u
        G = self.a_v * U + self.b_v * V + self.c_v
        k, lam = fastest_mode(self, 1.0, ratio)
        return {
            "trace_negative": bool(np.trace(J) < 0),
            "det_positive": bool(np.linalg.det(J) > 0),
            "fixed_point_positive": bool(U > 0 and V > 0),
            "clamps_inactive": bool(0 < F < self.F_max and 0 < G < self.G_max),
            "diffusion_instability": bool(lam > 0 and k > 0),
        }

    def is_turing(self, ratio=None) -> bool:
        return all(self.turing_conditions(ratio).values())


def reaction(U, V, c: ReactionCoeffs):
    """Clamped production minus linear decay for both species."""
    F = np.clip(c.a_u * U + c.b_u * V + c.c_u, 0.0, c.F_max)
    G = np.clip(c.a_v * U + c.b_v * V + c.c_v, 0.0, c.G_max)
    return F - c.d_u * U, G - c.d_v * V


def production(U, V, c: ReactionCoeffs):
    F = np.clip(c.a_u * U + c.b_u * V + c.c_u, 0.0, c.F_max)
    G = np.clip(c.a_v * U + c.b_v * V + c.c_v, 0.0, c.G_max)
    return F, G


def growth_rate(k, c: ReactionCoeffs, Du: float, Dv: float):
    """Largest real part of the eigenvalues of ``J - k^2 diag(Du, Dv)``."""
    k = np.asarray(k, dtype=float)
    J = c.jacobian()
    k2 = k ** 2
    a = J[0, 0] - Du * k2
    d = J[1, 1] - Dv * k2
    tr = a + d
    det = a * d - J[0, 1] * J[1, 0]
    disc = tr ** 2 - 4 * det
    root = np.sqrt(np.abs(disc))
    return np.where(disc >= 0, 0.5 * (tr + root), 0.5 * tr)


def fastest_mode(c: ReactionCoeffs, Du: float, Dv: float):
    """Wavenumber and growth rate of the most unstable mode.

    A coarse scan brackets the peak, then a bounded scalar search refines it.
    Returns ``(0.0, rate)`` if the peak sits at k = 0 (no Turing band).
    """
    kmax = 10.0 / np.sqrt(min(Du, Dv))
    ks = np.linspace(0.0, kmax, 4001)
    lam = growth_rate(ks, c, Du, Dv)
    i = int(np.argmax(lam))
    if i == 0:
        return 0.0, float(lam[0])
    lo, hi = ks[max(i - 1, 0)], ks[min(i + 1, len(ks) - 1)]
    res = minimize_scalar(lambda k: -float(growth_rate(k, c, Du, Dv)), bounds=(lo, hi),
                          method="bounded", options={"xatol": 1e-12 * kmax})
    return float(res.x), float(-res.fun)


def unit_wavelength(c: ReactionCoeffs) -> float:
    """Fastest-growing wavelength for unit activator diffusivity."""
    k, lam = fastest_mode(c, 1.0, c.diffusion_ratio)
    if not (k > 0 and lam > 0):
        raise InvalidArgument("coefficient set has no diffusion-driven instability")
    return 2 * np.pi / k


def width_factor(c: ReactionCoeffs) -> float:
    """Factor ``w_factor`` such that lateral diffusivity ``(w_factor * w)^2``
    makes the fastest-growing wavelength equal the pitch ``w``."""
    return 1.0 / unit_wavelength(c)
