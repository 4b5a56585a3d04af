"""Reaction-diffusion state and the semi-implicit time step.

Each step solves, per species,

    (I + dt (A + d I)) U_new = U + dt F(U, V)

where ``A`` is the monotone diffusion matrix and ``F`` the clamped
production. ``I + dt (A + d I)`` is an M-matrix with row sums ``1 + dt d``,
so with ``0 <= F <= F_max`` the update keeps ``0 <= U <= max(U_old, F_max/d)``.
Cells flagged in ``fixed`` are Dirichlet cells held at prescribed values.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..errors import InvalidArgument, NumericalFailure
from ..grid import Grid
from .diffusion import diffusion_matrix
from .kinetics import ReactionCoeffs, production


@dataclass
class TuringState:
    grid: Grid
    U: np.ndarray
    V: np.ndarray
    Du: tuple  # (Dxx, Dxy, Dyy), each (ny, nx)
    Dv: tuple
    coeffs: ReactionCoeffs
    t: float = 0.0
    fixed: Optional[np.ndarray] = None
    fixed_U: Optional[np.ndarray] = None
    fixed_V: Optional[np.ndarray] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def with_tensors(self, Du, Dv):
        return replace(self, Du=Du, Dv=Dv, _cache={})

    def with_fixed(self, fixed, fixed_U, fixed_V):
        U = np.where(fixed, fixed_U, self.U)
        V = np.where(fixed, fixed_V, self.V)
        return replace(self, U=U, V=V, fixed=fixed, fixed_U=fixed_U, fixed_V=fixed_V, _cache={})


def max_stable_dt(coeffs: ReactionCoeffs) -> float:
    """Largest step for which the explicit production part is stable."""
    return 1.0 / coeffs.lipschitz()


def default_dt(coeffs: ReactionCoeffs) -> float:
    return 0.25 * max_stable_dt(coeffs)


class Stepper:
    """Factorized implicit operators for a fixed tensor field and step size.

    Dirichlet cells are eliminated symmetrically, leaving a symmetric
    M-matrix on the free cells. It is factorized without pivoting, so the
    triangular factors keep the M-matrix sign pattern and the solves map
    non-negative right-hand sides to non-negative results in floating point.
    """

    def __init__(self, state: TuringState, dt: float):
        g = state.grid
        n = g.ncells
        self.dt = dt
        self.coeffs = c = state.coeffs
        fixed = np.zeros(n, bool) if state.fixed is None else state.fixed.ravel().copy()
        self.fixed = fixed
        self.free_idx = np.flatnonzero(~fixed)
        fixed_idx = np.flatnonzero(fixed)
        if fixed_idx.size:
            vals_u = state.fixed_U.ravel()[fixed_idx]
            vals_v = state.fixed_V.ravel()[fixed_idx]
        eye = sp.identity(n, format="csr")
        self.lu, self.lift, self.fixed_vals = [], [], []
        for D, decay, vals in ((state.Du, c.d_u, "u"), (state.Dv, c.d_v, "v")):
            A = diffusion_matrix(*D, g.dx, g.dy)
            M = (eye + dt * (A + decay * eye)).tocsr()
            Mff = M[self.free_idx][:, self.free_idx].tocsc()
            self.lu.append(spla.splu(Mff, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                     options=dict(SymmetricMode=True)))
            if fixed_idx.size:
                fv = vals_u if vals == "u" else vals_v
                # contribution of the pinned values, >= 0 since M_fc <= 0
                self.lift.append(-(M[self.free_idx][:, fixed_idx] @ fv))
                self.fixed_vals.append(fv)
            else:
                self.lift.append(0.0)
                self.fixed_vals.append(None)
        self.fixed_idx = fixed_idx

    def step(self, U, V):
        dt, c = self.dt, self.coeffs
        shape = U.shape
        u, v = U.ravel(), V.ravel()
        F, G = production(u, v, c)
        out = []
        for k, r in enumerate((u + dt * F, v + dt * G)):
            x = np.empty_like(r)
            x[self.free_idx] = self.lu[k].solve(r[self.free_idx] + self.lift[k])
            if self.fixed_idx.size:
                x[self.fixed_idx] = self.fixed_vals[k]
            out.append(x.reshape(shape))
        return out[0], out[1]

    def free(self):
        self.lu = []


def check_dt(dt, coeffs: ReactionCoeffs):
    if not dt > 0:
        raise InvalidArgument("time step must be positive")
    if dt > max_stable_dt(coeffs) * (1 + 1e-12):
        raise InvalidArgument(
            f"time step {dt} exceeds the stability bound {max_stable_dt(coeffs):.6g}")


def rd_step(state: TuringState, dt: float) -> TuringState:
    """Advance both species by one semi-implicit step."""
    check_dt(dt, state.coeffs)
    stepper = state._cache.get(dt)
    if stepper is None:
        stepper = state._cache[dt] = Stepper(state, dt)
    U, V = stepper.step(state.U, state.V)
    if not (np.all(np.isfinite(U)) and np.all(np.isfinite(V))):
        bad = int(np.count_nonzero(~np.isfinite(U)) + np.count_nonzero(~np.isfinite(V)))
        raise NumericalFailure(f"non-finite concentrations at t={state.t + dt:.6g} ({bad} values)")
    return replace(state, U=U, V=V, t=state.t + dt)
