"""Method of Moving Asymptotes for bound-constrained problems.

With no general constraints the convex separable subproblem

    min  sum_j p_j / (U_j - x_j) + q_j / (x_j - L_j)
    s.t. a_j <= x_j <= b_j

decouples per variable and has the closed-form minimizer
``x_j = (sqrt(p_j) L_j + sqrt(q_j) U_j) / (sqrt(p_j) + sqrt(q_j))`` clipped
to ``[a_j, b_j]``, which satisfies the subproblem KKT conditions exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import InvalidArgument


@dataclass
class MMA:
    """Asymptote state and settings; one instance per optimization run."""
    xmin: float = 0.0
    xmax: float = 1.0
    move: float = 0.1
    asyinit: float = 0.5
    asyincr: float = 1.2
    asydecr: float = 0.7
    raa0: float = 1e-5
    asymin: float = 1e-5
    iteration: int = 0
    xold1: Optional[np.ndarray] = None
    xold2: Optional[np.ndarray] = None
    low: Optional[np.ndarray] = None
    upp: Optional[np.ndarray] = None

    def asymptotes(self, x):
        span = self.xmax - self.xmin
        if self.iteration < 2 or self.xold2 is None:
            low = x - self.asyinit * span
            upp = x + self.asyinit * span
        else:
            zz = (x - self.xold1) * (self.xold1 - self.xold2)
            fac = np.where(zz > 0, self.asyincr, np.where(zz < 0, self.asydecr, 1.0))
            low = x - fac * (self.xold1 - self.low)
            upp = x + fac * (self.upp - self.xold1)
            low = np.clip(low, x - 10 * span, x - self.asymin * span)
            upp = np.clip(upp, x + self.asymin * span, x + 10 * span)
        return low, upp

    def step(self, x, grad):
        """Return the next iterate; ``grad`` is the objective gradient at ``x``."""
        x = np.asarray(x, dtype=float)
        g = np.asarray(grad, dtype=float)
        if g.shape != x.shape:
            raise InvalidArgument("gradient shape does not match the design")
        if not np.all(np.isfinite(g)):
            raise InvalidArgument("gradient contains non-finite values")
        span = self.xmax - self.xmin
        low, upp = self.asymptotes(x)
        a = np.maximum.reduce([np.full_like(x, self.xmin), low + 0.1 * (x - low), x - self.move * span])
        b = np.minimum.reduce([np.full_like(x, self.xmax), upp - 0.1 * (upp - x), x + self.move * span])
        gmax = float(np.max(np.abs(g))) if g.size else 0.0
        if gmax == 0.0:
            xnew = x.copy()
        else:
            # working with g / max|g| keeps the update invariant under rescaling
            # of the objective and avoids underflow for tiny gradients
            g = g / gmax
            reg = self.raa0 / span
            gp, gm = np.maximum(g, 0), np.maximum(-g, 0)
            p = (upp - x) ** 2 * (1.001 * gp + 0.001 * gm + reg)
            q = (x - low) ** 2 * (0.001 * gp + 1.001 * gm + reg)
            sp_, sq = np.sqrt(p), np.sqrt(q)
            xnew = np.clip((sp_ * low + sq * upp) / (sp_ + sq), a, b)
        self.xold2 = self.xold1
        self.xold1 = x.copy()
        self.low, self.upp = low, upp
        self.iteration += 1
        return np.clip(xnew, self.xmin, self.xmax)


def mma_step(state: MMA, x, grad):
    """One MMA update of ``x`` (any shape) given the objective gradient."""
    shape = np.shape(x)
    xn = state.step(np.ravel(x), np.ravel(grad))
    return xn.reshape(shape)
