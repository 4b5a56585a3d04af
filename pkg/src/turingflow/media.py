"""Porous-media parameterization of the design field.

The design variable ``gamma`` in [0, 1] sets the local microchannel width
linearly between ``wc_min`` and ``wc_max``; a constant wall width ``ww`` then
fixes porosity, permeability and the inverse permeability that enters the
Brinkman friction term. The standard convex interpolation is kept for
baseline comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgument


@dataclass(frozen=True)
class MediaParams:
    wc_min: float = 0.6e-3
    wc_max: float = 1.8e-3
    ww: float = 0.6e-3
    q: float = 0.01
    Da: float = 1e-5
    length: float = 0.1
    alpha_min: float = 0.0
    alpha_max_override: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.wc_min <= self.wc_max:
            raise InvalidArgument("need 0 < wc_min <= wc_max")
        if not self.ww > 0:
            raise InvalidArgument("wall width ww must be positive")
        if not self.q > 0:
            raise InvalidArgument("q must be positive")
        if not self.Da > 0:
            raise InvalidArgument("Darcy number must be positive")
        if not self.length > 0:
            raise InvalidArgument("characteristic length must be positive")
        if self.alpha_min < 0:
            raise InvalidArgument("alpha_min must be non-negative")
        if not self.alpha_max > self.alpha_min:
            raise InvalidArgument("alpha_max must exceed alpha_min")

    @property
    def alpha_max(self) -> float:
        if self.alpha_max_override is not None:
            return float(self.alpha_max_override)
        return 1.0 / (self.length ** 2 * self.Da)

    @property
    def kappa_min(self) -> float:
        return porosity_permeability(self.wc_min, self.ww)[1]

    @property
    def pitch_min(self) -> float:
        return self.wc_min + self.ww


def _check_gamma(gamma):
    g = np.asarray(gamma, dtype=float)
    if not np.all(np.isfinite(g)):
        raise InvalidArgument("design variable contains non-finite values")
    if np.any(g < 0.0) or np.any(g > 1.0):
        raise InvalidArgument(
            f"design variable outside [0, 1]: min={g.min():.6g}, max={g.max():.6g}"
        )
    return g


def _unwrap(x):
    return float(x) if np.ndim(x) == 0 else x


def channel_width(gamma, p: MediaParams):
    g = _check_gamma(gamma)
    return _unwrap(p.wc_min + (p.wc_max - p.wc_min) * g)


def porosity_permeability(wc, ww):
    """Porosity and permeability of parallel plate channels of width ``wc``
    separated by walls of width ``ww``."""
    wc = np.asarray(wc, dtype=float)
    if np.any(wc <= 0) or not ww > 0:
        raise InvalidArgument("channel and wall widths must be positive")
    pitch = wc + ww
    eps = wc / pitch
    kappa = eps * wc ** 2 / 12.0
    return _unwrap(eps), _unwrap(kappa)


def pitch(gamma, p: MediaParams):
    return _unwrap(np.asarray(channel_width(gamma, p)) + p.ww)


def inverse_permeability_new(gamma, p: MediaParams):
    wc = np.asarray(channel_width(gamma, p))
    return _unwrap(12.0 * (1.0 / wc ** 2 + p.ww / wc ** 3))


def derivative_alpha_n(gamma, p: MediaParams):
    wc = np.asarray(channel_width(gamma, p))
    dwc = p.wc_max - p.wc_min
    return _unwrap(-12.0 * (2.0 / wc ** 3 + 3.0 * p.ww / wc ** 4) * dwc)


def inverse_permeability_std(gamma, p: MediaParams):
    g = _check_gamma(gamma)
    a0, a1 = p.alpha_min, p.alpha_max
    return _unwrap(a0 + (a1 - a0) * p.q * (1.0 - g) / (p.q + g))


def derivative_alpha_s(gamma, p: MediaParams):
    g = _check_gamma(gamma)
    return _unwrap(-(p.alpha_max - p.alpha_min) * p.q * (1.0 + p.q) / (p.q + g) ** 2)


INTERPOLATIONS = {
    "new": (inverse_permeability_new, derivative_alpha_n),
    "std": (inverse_permeability_std, derivative_alpha_s),
}


class DesignField:
    """Per-cell design variable with eagerly refreshed media quantities.

    ``mode`` selects the inverse-permeability map: ``"new"`` (channel-width
    parameterization, the default) or ``"std"`` (convex interpolation).
    """

    def __init__(self, gamma, params: MediaParams, mode: str = "new"):
        if mode not in INTERPOLATIONS:
            raise InvalidArgument(f"unknown interpolation mode {mode!r}")
        self.params = params
        self.mode = mode
        self.gamma = gamma

    @property
    def gamma(self) -> np.ndarray:
        return self._gamma

    @gamma.setter
    def gamma(self, value):
        g = _check_gamma(value).copy()
        g.setflags(write=False)
        self._gamma = g
        self.wc = np.asarray(channel_width(g, self.params))
        self.porosity, self.kappa = (np.asarray(a) for a in porosity_permeability(self.wc, self.params.ww))
        alpha, dalpha = INTERPOLATIONS[self.mode]
        self.alpha = np.asarray(alpha(g, self.params))
        self.dalpha = np.asarray(dalpha(g, self.params))

    @property
    def pitch(self) -> np.ndarray:
        return self.wc + self.params.ww

    @classmethod
    def uniform(cls, shape, value, params: MediaParams, mode: str = "new"):
        return cls(np.full(shape, float(value)), params, mode)
