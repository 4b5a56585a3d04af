"""Objective evaluation with discrete-adjoint sensitivities.

For the discrete residual ``R(x, alpha) = 0`` and an objective ``F(x, alpha)``

    J^T lam = dF/dx,     dF/dalpha = dF/dalpha|_x - (dR/dalpha)^T lam,

followed by the chain rule through ``alpha(gamma)`` and, when a length scale
is set, through the density filter ``gamma = H rho``. ``J`` is the exact
Newton Jacobian, so the gradient is exact up to the solver tolerance. With
``frozen=True`` the convective linearization is replaced by the cheaper
Picard (frozen-velocity) operator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

from ..errors import ConvergenceFailure
from ..flow import FlowSolution, FluidProps, MacSystem, _tags_for
from ..grid import Grid
from ..linalg import Factorization
from ..media import DesignField, MediaParams
from .objective import ObjectiveWeights, outlet_uniformity


@dataclass
class Evaluation:
    f_o: float
    f_u: float
    F: Optional[float]
    grad: Optional[np.ndarray]  # dF/drho, (ny, nx); equals dF/dgamma without a filter
    solution: FlowSolution


def density_filter(grid: Grid, radius: float) -> sp.csr_matrix:
    """Row-normalized conic filter with support ``radius`` [m].

    Each filtered value is a convex combination of its neighbours, so bounds
    in [0, 1] carry over. A radius below one cell gives the identity.
    """
    n = grid.ncells
    ri, rj = int(np.floor(radius / grid.dx)), int(np.floor(radius / grid.dy))
    if ri == 0 and rj == 0:
        return sp.identity(n, format="csr")
    jj, ii = np.meshgrid(np.arange(grid.ny), np.arange(grid.nx), indexing="ij")
    jj, ii = jj.ravel(), ii.ravel()
    rows, cols, vals = [], [], []
    for dj in range(-rj, rj + 1):
        for di in range(-ri, ri + 1):
            w = radius - np.hypot(di * grid.dx, dj * grid.dy)
            if w <= 0:
                continue
            ok = (ii + di >= 0) & (ii + di < grid.nx) & (jj + dj >= 0) & (jj + dj < grid.ny)
            rows.append(np.flatnonzero(ok))
            cols.append(((jj + dj) * grid.nx + ii + di)[ok])
            vals.append(np.full(ok.sum(), w))
    H = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return sp.diags(1.0 / np.asarray(H.sum(axis=1)).ravel()) @ H


class FlowProblem:
    """Flow system, objective and sensitivities for one design grid.

    The optimizer works on a raw field ``rho``; with ``filter_radius > 0`` the
    physical design is the filtered field, which keeps design features wider
    than the filter and so representable by the microchannel pattern. Cells
    flagged in ``passive`` are held at ``gamma = 0``.
    """

    def __init__(self, grid: Grid, bc, params: MediaParams, fluid: Optional[FluidProps] = None,
                 mode: str = "new", stokes: bool = False, tol: float = 1e-6, frozen: bool = False,
                 filter_radius: float = 0.0, passive=None):
        self.grid = grid
        self.tags = _tags_for(grid, bc)
        self.params = params
        self.fluid = fluid or FluidProps()
        self.mode = mode
        self.tol = tol
        self.frozen = frozen
        self.system = MacSystem(grid, self.tags, self.fluid, stokes=stokes)
        self.out_idx, self.out_sign, _, self.out_len, _ = self.system.outlet_faces()
        self.filter = density_filter(grid, filter_radius)
        self.free = np.ones(grid.ncells) if passive is None else 1.0 - np.ravel(passive).astype(float)

    def design(self, rho) -> DesignField:
        """Physical design for the raw optimization field ``rho``."""
        g = self.free * (self.filter @ np.ravel(np.asarray(rho, dtype=float)))
        return DesignField(np.clip(g, 0.0, 1.0).reshape(self.grid.shape), self.params, self.mode)

    def solve(self, design: DesignField, x0=None) -> FlowSolution:
        return self.system.solve(design.alpha, tol=self.tol, x0=x0)

    def raw_terms(self, sol: FlowSolution, design: DesignField, grad=False):
        sysm = self.system
        un = self.out_sign * sol.x[self.out_idx]
        if not grad:
            return sysm.dissipation(sol.x, design.alpha), outlet_uniformity(un, self.out_len)
        fo, go_x, go_a = sysm.dissipation(sol.x, design.alpha, grad=True)
        fu, gu_un = outlet_uniformity(un, self.out_len, grad=True)
        gu_x = np.zeros_like(sol.x)
        np.add.at(gu_x, self.out_idx, self.out_sign * gu_un)
        return fo, fu, go_x, go_a, gu_x

    def evaluate(self, design: DesignField, weights: ObjectiveWeights, x0=None,
                 gradient: bool = True) -> Evaluation:
        """Solve the flow, set the normalization if unset, return F and its
        gradient with respect to the raw field."""
        sol = self.solve(design, x0)
        if not gradient:
            fo, fu = self.raw_terms(sol, design)
            if not weights.normalized:
                weights.normalize(fo, fu)
            co, cu = weights.factors()
            return Evaluation(fo, fu, co * fo + cu * fu, None, sol)
        fo, fu, go_x, go_a, gu_x = self.raw_terms(sol, design, grad=True)
        if not weights.normalized:
            weights.normalize(fo, fu)
        co, cu = weights.factors()
        F = co * fo + cu * fu
        dFdx = co * go_x + cu * gu_x
        dFda = co * go_a
        lam = self.adjoint(sol.x, design.alpha, dFdx)
        dFda = dFda - self.system.dresidual_dalpha(sol.x).T @ lam
        grad = (self.filter.T @ (self.free * dFda * np.ravel(design.dalpha))).reshape(self.grid.shape)
        return Evaluation(fo, fu, F, grad, sol)

    def adjoint(self, x, alpha, rhs):
        sysm = self.system
        if self.frozen and sysm.conv:
            J = (sysm.linear_matrix(alpha) + sysm.picard_matrix(x)).tocsc()
        else:
            J = sysm.jacobian(x, alpha)
        fac = Factorization(J.T.tocsr())
        try:
            lam = fac.solve(rhs)
        finally:
            fac.free()
        if not np.all(np.isfinite(lam)):
            raise ConvergenceFailure("adjoint solve produced non-finite values", [])
        return lam


def sensitivities(grid: Grid, bc, gamma, fluid: Optional[FluidProps] = None,
                  weights: Optional[ObjectiveWeights] = None, params: Optional[MediaParams] = None,
                  mode: str = "new", stokes: bool = False, tol: float = 1e-10) -> np.ndarray:
    """Adjoint gradient ``dF/dgamma`` of the weighted objective at ``gamma``.

    Unset normalization constants are taken from this design.
    """
    problem = FlowProblem(grid, bc, params or MediaParams(), fluid, mode=mode, stokes=stokes, tol=tol)
    weights = weights if weights is not None else ObjectiveWeights()
    return problem.evaluate(problem.design(gamma), weights).grad


def fd_gradient(problem: FlowProblem, gamma, weights: ObjectiveWeights, cells, h: float = 1e-4,
                x0=None) -> np.ndarray:
    """Central finite differences of F with respect to the raw field at flat cell indices."""
    g0 = np.asarray(gamma, dtype=float).ravel()
    out = np.empty(len(cells))
    for n, c in enumerate(cells):
        vals = []
        for s in (1.0, -1.0):
            g = g0.copy()
            g[c] = g[c] + s * h
            ev = problem.evaluate(problem.design(g), weights, x0=x0, gradient=False)
            vals.append(ev.F)
        out[n] = (vals[0] - vals[1]) / (2 * h)
    return out
