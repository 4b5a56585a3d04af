"""Objective terms: outlet uniformity, the weighted total and the
per-outlet mass-flow constraint evaluator."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import InvalidArgument, InvalidState


def _profile_arrays(profile, lengths=None):
    if hasattr(profile, "velocity"):
        u = np.asarray(profile.velocity, dtype=float)
        ds = np.asarray(profile.length, dtype=float)
    else:
        u = np.asarray(profile, dtype=float)
        ds = np.ones_like(u) if lengths is None else np.asarray(lengths, dtype=float)
    if u.ndim != 1 or u.size < 2:
        raise InvalidArgument("outlet profile needs at least two samples")
    if ds.shape != u.shape or np.any(ds <= 0):
        raise InvalidArgument("face lengths must be positive and match the profile")
    return u, ds


def outlet_uniformity(profile, lengths=None, grad: bool = False):
    """Normalized variance of the outlet normal velocity.

    ``f_u = sum(ds (u - ubar)^2) / (ubar^2 L)`` with ``ubar`` the
    length-weighted mean and ``L`` the outlet length. ``profile`` is an
    ``OutletProfile`` or an array of samples (unit lengths unless given).
    With ``grad=True`` the derivative with respect to the samples is returned too.
    """
    u, ds = _profile_arrays(profile, lengths)
    L = ds.sum()
    ubar = float(ds @ u) / L
    if not abs(ubar) > 0:
        raise InvalidState("mean outlet velocity is zero")
    dev = u - ubar
    S = float(ds @ dev ** 2)
    f = S / (ubar ** 2 * L)
    if not grad:
        return f
    g = 2 * ds * dev / (ubar ** 2 * L) - 2 * S * ds / (ubar ** 3 * L ** 2)
    return f, g


@dataclass
class ObjectiveWeights:
    """Weights of the two objective terms and their iteration-0 normalizers."""
    w_dissipation: float = 0.5
    w_uniformity: float = 0.5
    f_o0: Optional[float] = None
    f_u0: Optional[float] = None

    def __post_init__(self):
        if self.w_dissipation < 0 or self.w_uniformity < 0:
            raise InvalidArgument("objective weights must be non-negative")
        if self.w_dissipation == 0 and self.w_uniformity == 0:
            raise InvalidArgument("objective weights cannot both be zero")

    @property
    def normalized(self) -> bool:
        return self.f_o0 is not None and self.f_u0 is not None

    def normalize(self, f_o0: float, f_u0: float):
        self.f_o0, self.f_u0 = float(f_o0), float(f_u0)

    def factors(self):
        """Multipliers ``(w_d / f_o0, w_u / f_u0)`` of the raw terms."""
        if not self.normalized:
            raise InvalidState("objective normalization constants are not set")
        co = self.w_dissipation / self.f_o0 if self.w_dissipation else 0.0
        cu = self.w_uniformity / self.f_u0 if self.w_uniformity else 0.0
        if not (np.isfinite(co) and np.isfinite(cu)):
            raise InvalidState("objective normalization constants must be non-zero")
        return co, cu


def total_objective(f_o: float, f_u: float, w: ObjectiveWeights) -> float:
    co, cu = w.factors()
    return co * f_o + cu * f_u


@dataclass(frozen=True)
class MassFlowConstraint:
    targets: tuple
    delta: float

    def __post_init__(self):
        t = np.asarray(self.targets, dtype=float)
        if t.ndim != 1 or t.size < 1:
            raise InvalidArgument("need at least one outlet target")
        if np.any(t <= 0):
            raise InvalidArgument("mass-flow targets must be positive")
        if not self.delta > 0:
            raise InvalidArgument("tolerance delta must be positive")
        object.__setattr__(self, "targets", tuple(float(v) for v in t))

    @property
    def n(self) -> int:
        return len(self.targets)

    @classmethod
    def uniform(cls, total: float, n: int, delta: float):
        return cls(tuple([total / n] * n), delta)


def mass_flow_violation(mdot, c: MassFlowConstraint) -> np.ndarray:
    """Per-outlet values ``(m_k / m_t,k - 1)^2 - delta^2``; ``<= 0`` is satisfied."""
    m = np.asarray(mdot, dtype=float)
    if m.shape != (c.n,):
        raise InvalidArgument(f"expected {c.n} outlet flows, got shape {m.shape}")
    t = np.asarray(c.targets)
    return (m / t - 1.0) ** 2 - c.delta ** 2
