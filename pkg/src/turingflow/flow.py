"""Steady incompressible Navier-Stokes-Brinkman flow on a staggered grid.

Unknowns live on a MAC layout: ``u`` on vertical faces ``(ny, nx+1)``, ``v``
on horizontal faces ``(ny+1, nx)`` and ``p`` at cell centers ``(ny, nx)``.
The full coupled residual

    R(x) = K(alpha) x + C(x) - b

is assembled as sparse matrices, where ``C`` is the central, conservative
convection term written as a sum of products of linear interpolations. That
structure gives the exact Jacobian for Newton's method and, transposed, for
the discrete adjoint used in the optimizer.

Boundary handling uses ghost values that are linear in the unknowns:

* wall / inlet: normal velocity prescribed, tangential ghost mirrors with a
  sign flip (no slip), or without it for free-slip walls;
* outlet: zero pressure on the face (ghost ``p = -p_cell``), zero normal
  gradient of the normal velocity and zero shear.

With convection on, outlet faces where the flow turns back into the domain get
a drag of ``rho/2 |u_n^-|`` per unit length (backflow stabilization), using a
smooth negative part so the Jacobian stays exact. Without it a steady solve
with inflow through the outlet stalls.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from .linalg import spsolve

from .errors import ConvergenceFailure, InvalidArgument
from .grid import INLET, OUTLET, WALL, BoundarySpec, BoundaryTags, Grid, classify_boundary

logger = logging.getLogger(__name__)

# air at 20 C
AIR_DENSITY = 1.204
AIR_VISCOSITY = 1.81e-5


@dataclass(frozen=True)
class FluidProps:
    rho: float = AIR_DENSITY
    eta: float = AIR_VISCOSITY

    def __post_init__(self):
        if not (self.rho > 0 and self.eta > 0):
            raise InvalidArgument("density and viscosity must be positive")


@dataclass
class FlowSolution:
    grid: Grid
    tags: BoundaryTags
    fluid: FluidProps
    x: np.ndarray
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    residuals: dict = field(default_factory=dict)
    history: list = field(default_factory=list)
    iterations: int = 0
    stokes: bool = False

    def cell_velocity(self):
        """Velocity components averaged to cell centers."""
        uc = 0.5 * (self.u[:, :-1] + self.u[:, 1:])
        vc = 0.5 * (self.v[:-1, :] + self.v[1:, :])
        return uc, vc

    def speed(self):
        uc, vc = self.cell_velocity()
        return np.hypot(uc, vc)


@dataclass
class OutletProfile:
    position: np.ndarray  # face-center coordinate along the outlet edge [m]
    velocity: np.ndarray  # outward normal velocity [m/s]
    length: np.ndarray  # face lengths [m]
    index: np.ndarray  # face index along the edge

    def flux(self) -> float:
        return float(np.sum(self.velocity * self.length))


def _free(tag, slip):
    return (tag == OUTLET) | ((tag == WALL) & slip)


def _node_signs(face_tags, slip):
    """Ghost sign for the tangential velocity at each boundary node of an edge.

    A node is free (+1) only when every adjacent face on the edge is free,
    otherwise the no-slip mirror (-1) is used.
    """
    free = _free(face_tags, slip)
    n = len(face_tags)
    s = np.empty(n + 1)
    left = np.concatenate([[True], free])
    right = np.concatenate([free, [True]])
    s[:] = np.where(left & right, 1.0, -1.0)
    return s


class _Triplets:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []

    def add(self, rows, lookup, weight):
        idx, coef = lookup
        vals = np.broadcast_to(np.asarray(weight, dtype=float) * coef, idx.shape)
        keep = vals != 0
        self.rows.append(np.broadcast_to(rows, idx.shape)[keep])
        self.cols.append(idx[keep])
        self.vals.append(vals[keep])

    def matrix(self, shape):
        if not self.rows:
            return sp.csr_matrix(shape)
        r = np.concatenate(self.rows)
        c = np.concatenate(self.cols)
        v = np.concatenate(self.vals)
        return sp.csr_matrix((v, (r, c)), shape=shape)


class MacSystem:
    """Assembled discrete Navier-Stokes-Brinkman operators for one grid and BC set.

    The instance is reusable across inverse-permeability fields, which is how
    the optimizer avoids re-assembly between iterations.
    """

    def __init__(self, grid: Grid, tags: BoundaryTags, fluid: FluidProps, stokes: bool = False):
        self.grid, self.tags, self.fluid, self.stokes = grid, tags, fluid, stokes
        nx, ny = grid.nx, grid.ny
        self.nu = (nx + 1) * ny
        self.nv = nx * (ny + 1)
        self.npres = nx * ny
        self.n = self.nu + self.nv + self.npres
        slip = tags.wall_slip
        self._s = {e: _node_signs(tags[e], slip) for e in ("bottom", "top", "left", "right")}
        self._assemble()

    # -- index lookups with ghost rules -------------------------------------------------
    def iu(self, i, j):
        return j * (self.grid.nx + 1) + i

    def iv(self, i, j):
        return self.nu + j * self.grid.nx + i

    def ip(self, i, j):
        return self.nu + self.nv + j * self.grid.nx + i

    def U(self, i, j):
        nx, ny = self.grid.nx, self.grid.ny
        i, j = np.broadcast_arrays(np.asarray(i), np.asarray(j))
        idx = np.zeros(i.shape, dtype=np.int64)
        coef = np.zeros(i.shape)
        inx = (i >= 0) & (i <= nx)
        iny = (j >= 0) & (j <= ny - 1)
        m = inx & iny
        idx[m], coef[m] = self.iu(i[m], j[m]), 1.0
        m = inx & (j == -1)
        idx[m], coef[m] = self.iu(i[m], 0), self._s["bottom"][i[m]]
        m = inx & (j == ny)
        idx[m], coef[m] = self.iu(i[m], ny - 1), self._s["top"][i[m]]
        m = iny & (i == -1)
        idx[m], coef[m] = self.iu(0, j[m]), 1.0
        m = iny & (i == nx + 1)
        idx[m], coef[m] = self.iu(nx, j[m]), 1.0
        return idx, coef

    def V(self, i, j):
        nx, ny = self.grid.nx, self.grid.ny
        i, j = np.broadcast_arrays(np.asarray(i), np.asarray(j))
        idx = np.zeros(i.shape, dtype=np.int64)
        coef = np.zeros(i.shape)
        inx = (i >= 0) & (i <= nx - 1)
        iny = (j >= 0) & (j <= ny)
        m = inx & iny
        idx[m], coef[m] = self.iv(i[m], j[m]), 1.0
        m = iny & (i == -1)
        idx[m], coef[m] = self.iv(0, j[m]), self._s["left"][j[m]]
        m = iny & (i == nx)
        idx[m], coef[m] = self.iv(nx - 1, j[m]), self._s["right"][j[m]]
        m = inx & (j == -1)
        idx[m], coef[m] = self.iv(i[m], 0), 1.0
        m = inx & (j == ny + 1)
        idx[m], coef[m] = self.iv(i[m], ny), 1.0
        return idx, coef

    def P(self, i, j):
        nx, ny = self.grid.nx, self.grid.ny
        i, j = np.broadcast_arrays(np.asarray(i), np.asarray(j))
        ic = np.clip(i, 0, nx - 1)
        jc = np.clip(j, 0, ny - 1)
        inside = (i == ic) & (j == jc)
        return self.ip(ic, jc), np.where(inside, 1.0, -1.0)

    # -- assembly ------------------------------------------------------------------------
    def _face_sets(self):
        """Active (equation-carrying) and Dirichlet faces for u and v."""
        g, t = self.grid, self.tags
        nx, ny = g.nx, g.ny
        vin = t.inlet_velocity

        ju, iu_ = np.meshgrid(np.arange(ny), np.arange(nx + 1), indexing="ij")
        u_active = (iu_ > 0) & (iu_ < nx)
        u_val = np.zeros((ny, nx + 1))
        u_active[:, 0] = t["left"] == OUTLET
        u_active[:, nx] = t["right"] == OUTLET
        u_val[:, 0] = np.where(t["left"] == INLET, vin, 0.0)
        u_val[:, nx] = np.where(t["right"] == INLET, -vin, 0.0)

        jv, iv_ = np.meshgrid(np.arange(ny + 1), np.arange(nx), indexing="ij")
        v_active = (jv > 0) & (jv < ny)
        v_val = np.zeros((ny + 1, nx))
        v_active[0, :] = t["bottom"] == OUTLET
        v_active[ny, :] = t["top"] == OUTLET
        v_val[0, :] = np.where(t["bottom"] == INLET, vin, 0.0)
        v_val[ny, :] = np.where(t["top"] == INLET, -vin, 0.0)
        return (iu_, ju, u_active, u_val), (iv_, jv, v_active, v_val)

    def _assemble(self):
        g, fl = self.grid, self.fluid
        nx, ny, dx, dy = g.nx, g.ny, g.dx, g.dy
        eta, rho = fl.eta, fl.rho
        vol = dx * dy
        N = self.n
        (iu_, ju, u_act, u_val), (iv_, jv, v_act, v_val) = self._face_sets()

        K = _Triplets()
        b = np.zeros(N)
        # Dirichlet rows scaled to the size of a viscous diagonal
        dscale = eta * vol * (2 / dx ** 2 + 2 / dy ** 2)

        # u momentum
        i, j = iu_[u_act], ju[u_act]
        r = self.iu(i, j)
        cx, cy = eta * vol / dx ** 2, eta * vol / dy ** 2
        K.add(r, self.U(i, j), 2 * cx + 2 * cy)
        K.add(r, self.U(i + 1, j), -cx)
        K.add(r, self.U(i - 1, j), -cx)
        K.add(r, self.U(i, j + 1), -cy)
        K.add(r, self.U(i, j - 1), -cy)
        K.add(r, self.P(i, j), dy)
        K.add(r, self.P(i - 1, j), -dy)
        u_rows, u_i, u_j = r, i, j
        i, j = iu_[~u_act], ju[~u_act]
        r = self.iu(i, j)
        K.add(r, (r, np.ones(r.shape)), dscale)
        b[r] = dscale * u_val[~u_act]

        # v momentum
        i, j = iv_[v_act], jv[v_act]
        r = self.iv(i, j)
        K.add(r, self.V(i, j), 2 * cx + 2 * cy)
        K.add(r, self.V(i + 1, j), -cx)
        K.add(r, self.V(i - 1, j), -cx)
        K.add(r, self.V(i, j + 1), -cy)
        K.add(r, self.V(i, j - 1), -cy)
        K.add(r, self.P(i, j), dx)
        K.add(r, self.P(i, j - 1), -dx)
        v_rows, v_i, v_j = r, i, j
        i, j = iv_[~v_act], jv[~v_act]
        r = self.iv(i, j)
        K.add(r, (r, np.ones(r.shape)), dscale)
        b[r] = dscale * v_val[~v_act]

        # continuity, scaled like a momentum/pressure coupling entry
        jc, ic = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
        ic, jc = ic.ravel(), jc.ravel()
        r = self.ip(ic, jc)
        one = np.ones(r.shape)
        K.add(r, (self.iu(ic + 1, jc), one), -dy)
        K.add(r, (self.iu(ic, jc), one), dy)
        K.add(r, (self.iv(ic, jc + 1), one), -dx)
        K.add(r, (self.iv(ic, jc), one), dx)
        self.K0 = K.matrix((N, N))
        self.b = b

        # Brinkman: rows of active momentum faces, alpha averaged from adjacent cells
        self.mom_rows = np.concatenate([u_rows, v_rows])
        rows, cols, vals = [], [], []
        k0 = 0
        for fi, fj, kind in ((u_i, u_j, "u"), (v_i, v_j, "v")):
            n = len(fi)
            loc = np.arange(k0, k0 + n)
            if kind == "u":
                cells = [(fi - 1, fj), (fi, fj)]
                valid = [fi - 1 >= 0, fi <= nx - 1]
            else:
                cells = [(fi, fj - 1), (fi, fj)]
                valid = [fj - 1 >= 0, fj <= ny - 1]
            cnt = valid[0].astype(float) + valid[1].astype(float)
            for (ci, cj), ok in zip(cells, valid):
                rows.append(loc[ok])
                cols.append((cj * nx + ci)[ok])
                vals.append(1.0 / cnt[ok])
            k0 += n
        self.face_avg = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(len(self.mom_rows), nx * ny),
        )
        self.brink_coef = eta * vol

        # convection terms: sum_t (A_t x) * (B_t x), weights folded into A_t
        self.conv = []
        if not self.stokes:
            i, j = u_i, u_j
            r = u_rows
            terms_u = [
                (rho * dy, [self.U(i, j), self.U(i + 1, j)], [self.U(i, j), self.U(i + 1, j)]),
                (-rho * dy, [self.U(i - 1, j), self.U(i, j)], [self.U(i - 1, j), self.U(i, j)]),
                (rho * dx, [self.V(i - 1, j + 1), self.V(i, j + 1)], [self.U(i, j), self.U(i, j + 1)]),
                (-rho * dx, [self.V(i - 1, j), self.V(i, j)], [self.U(i, j - 1), self.U(i, j)]),
            ]
            i, j = v_i, v_j
            rv = v_rows
            terms_v = [
                (rho * dx, [self.V(i, j), self.V(i, j + 1)], [self.V(i, j), self.V(i, j + 1)]),
                (-rho * dx, [self.V(i, j - 1), self.V(i, j)], [self.V(i, j - 1), self.V(i, j)]),
                (rho * dy, [self.U(i + 1, j - 1), self.U(i + 1, j)], [self.V(i, j), self.V(i + 1, j)]),
                (-rho * dy, [self.U(i, j - 1), self.U(i, j)], [self.V(i - 1, j), self.V(i, j)]),
            ]
            for (wu, au, bu), (wv, av, bv) in zip(terms_u, terms_v):
                A, B = _Triplets(), _Triplets()
                for lk in au:
                    A.add(r, lk, 0.5 * wu)
                for lk in av:
                    A.add(rv, lk, 0.5 * wv)
                for lk in bu:
                    B.add(r, lk, 0.5)
                for lk in bv:
                    B.add(rv, lk, 0.5)
                self.conv.append((A.matrix((N, N)), B.matrix((N, N))))
            self._backflow_terms(u_rows, u_i, u_j, v_rows, v_i, v_j)

    def _backflow_terms(self, u_rows, u_i, u_j, v_rows, v_i, v_j):
        """Rows next to the outlet, their face lengths and the operator giving
        the outward normal velocity there."""
        g, t = self.grid, self.tags
        nx, ny = g.nx, g.ny
        edge = t.outlet_edge
        G, rows, length = _Triplets(), [], []
        if edge in ("bottom", "top"):
            jn = ny if edge == "top" else 0
            jt = ny - 1 if edge == "top" else 0
            sign = 1.0 if edge == "top" else -1.0
            sel = v_j == jn
            r = v_rows[sel]
            G.add(r, self.V(v_i[sel], v_j[sel]), sign)
            rows.append(r)
            length.append(np.full(r.size, g.dx))
            sel = u_j == jt
            r = u_rows[sel]
            for di in (-1, 0):
                G.add(r, self.V(u_i[sel] + di, jn), 0.5 * sign)
            rows.append(r)
            length.append(np.full(r.size, g.dx))
        else:
            i_n = nx if edge == "right" else 0
            it = nx - 1 if edge == "right" else 0
            sign = 1.0 if edge == "right" else -1.0
            sel = u_i == i_n
            r = u_rows[sel]
            G.add(r, self.U(u_i[sel], u_j[sel]), sign)
            rows.append(r)
            length.append(np.full(r.size, g.dy))
            sel = v_i == it
            r = v_rows[sel]
            for dj in (-1, 0):
                G.add(r, self.U(i_n, v_j[sel] + dj), 0.5 * sign)
            rows.append(r)
            length.append(np.full(r.size, g.dy))
        rows = np.concatenate(rows)
        self.bf_rows = rows
        self.bf_coef = 0.5 * self.fluid.rho * np.concatenate(length)
        self.bf_G = G.matrix((self.n, self.n))[rows]
        self.bf_eps = max(1e-3 * t.inlet_velocity, 1e-12)

    def _backflow(self, x):
        z = self.bf_G @ x
        root = np.sqrt(z * z + self.bf_eps ** 2)
        return 0.5 * (root - z), 0.5 * (z / root - 1.0)

    # -- residual and derivatives --------------------------------------------------------
    def brinkman_diag(self, alpha):
        d = np.zeros(self.n)
        d[self.mom_rows] = self.brink_coef * (self.face_avg @ np.ravel(alpha))
        return d

    def linear_matrix(self, alpha):
        return (self.K0 + sp.diags(self.brinkman_diag(alpha))).tocsr()

    def convection(self, x):
        c = np.zeros(self.n)
        for A, B in self.conv:
            c += (A @ x) * (B @ x)
        if self.conv:
            q, _ = self._backflow(x)
            c[self.bf_rows] += self.bf_coef * q * x[self.bf_rows]
        return c

    def _backflow_matrix(self, x, exact):
        q, dq = self._backflow(x)
        r = self.bf_rows
        J = sp.csr_matrix((self.bf_coef * q, (r, r)), shape=(self.n, self.n))
        if exact:
            D = (sp.diags(self.bf_coef * dq * x[r]) @ self.bf_G).tocoo()
            J = J + sp.csr_matrix((D.data, (r[D.row], D.col)), shape=(self.n, self.n))
        return J

    def convection_jacobian(self, x):
        J = sp.csr_matrix((self.n, self.n))
        for A, B in self.conv:
            J = J + sp.diags(B @ x) @ A + sp.diags(A @ x) @ B
        if self.conv:
            J = J + self._backflow_matrix(x, exact=True)
        return J

    def picard_matrix(self, x):
        J = sp.csr_matrix((self.n, self.n))
        for A, B in self.conv:
            J = J + sp.diags(A @ x) @ B
        if self.conv:
            J = J + self._backflow_matrix(x, exact=False)
        return J

    def residual(self, x, alpha):
        return self.linear_matrix(alpha) @ x + self.convection(x) - self.b

    def jacobian(self, x, alpha):
        J = self.linear_matrix(alpha)
        if self.conv:
            J = J + self.convection_jacobian(x)
        return J.tocsc()

    def dresidual_dalpha(self, x):
        """Sparse ``dR/dalpha`` with one column per cell."""
        vals = self.brink_coef * x[self.mom_rows]
        D = sp.diags(vals) @ self.face_avg
        D = D.tocoo()
        return sp.csr_matrix((D.data, (self.mom_rows[D.row], D.col)), shape=(self.n, self.grid.ncells))

    def residual_norms(self, x, alpha):
        """Normalized momentum and continuity residuals."""
        R = self.residual(x, alpha)
        Kabs = abs(self.linear_matrix(alpha))
        scale = Kabs @ np.abs(x)
        for A, B in self.conv:
            scale += np.abs(A @ x) * np.abs(B @ x)
        m = self.mom_rows
        denom = np.linalg.norm(scale[m])
        mom = np.linalg.norm(R[m]) / denom if denom > 0 else float(np.linalg.norm(R[m]))
        cont_rows = slice(self.nu + self.nv, self.n)
        ref = max(self.tags.inlet_velocity, 1e-300) * max(self.grid.dx, self.grid.dy)
        cont = float(np.max(np.abs(R[cont_rows]))) / ref
        return float(mom), cont

    # -- solution ------------------------------------------------------------------------
    def split(self, x):
        nx, ny = self.grid.nx, self.grid.ny
        u = x[: self.nu].reshape(ny, nx + 1)
        v = x[self.nu: self.nu + self.nv].reshape(ny + 1, nx)
        p = x[self.nu + self.nv:].reshape(ny, nx)
        return u, v, p

    def solve(self, alpha, tol=1e-6, max_iter=30, picard_iter=3, x0=None,
              polish=False) -> FlowSolution:
        alpha = np.asarray(alpha, dtype=float)
        if alpha.shape != self.grid.shape:
            raise InvalidArgument(f"alpha shape {alpha.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(alpha)):
            raise InvalidArgument("alpha contains non-finite values")
        if np.any(alpha < 0):
            raise InvalidArgument("inverse permeability must be non-negative")
        if not tol > 0:
            raise InvalidArgument("tolerance must be positive")

        K = self.linear_matrix(alpha)
        if x0 is None or not self.conv:
            x = spsolve(K.tocsc(), self.b)
        else:
            x = np.array(x0, dtype=float)
        history = []
        iters = 0
        if self.conv:
            mom, cont = self.residual_norms(x, alpha)
            history.append(mom)
            for _ in range(picard_iter):
                if mom < 1e-2:
                    break
                x = spsolve((K + self.picard_matrix(x)).tocsc(), self.b)
                iters += 1
                mom, cont = self.residual_norms(x, alpha)
                history.append(mom)
            while mom > tol or polish:
                if iters >= max_iter:
                    raise ConvergenceFailure(
                        f"Newton iteration did not converge in {max_iter} iterations "
                        f"(momentum residual {mom:.3e})", history)
                R = K @ x + self.convection(x) - self.b
                J = (K + self.convection_jacobian(x)).tocsc()
                dx = spsolve(J, -R)
                r0 = np.linalg.norm(R)
                step = 1.0
                for _ in range(12):
                    xt = x + step * dx
                    if np.linalg.norm(K @ xt + self.convection(xt) - self.b) < r0 or step < 1e-3:
                        break
                    step *= 0.5
                x = xt
                iters += 1
                prev = mom
                mom, cont = self.residual_norms(x, alpha)
                history.append(mom)
                if not np.all(np.isfinite(x)):
                    raise ConvergenceFailure("flow solve produced non-finite values", history)
                if polish and mom <= tol:
                    polish = False
                if mom > tol and iters > 4 and mom > 0.9 * prev and prev < 1e-11:
                    # stagnated at roundoff level
                    break
        mom, cont = self.residual_norms(x, alpha)
        if not np.all(np.isfinite(x)):
            raise ConvergenceFailure("flow solve produced non-finite values", history)
        u, v, p = self.split(x)
        return FlowSolution(self.grid, self.tags, self.fluid, x, u, v, p,
                            residuals={"momentum": mom, "continuity": cont},
                            history=history, iterations=iters, stokes=self.stokes)

    # -- objective pieces ----------------------------------------------------------------
    def dissipation_operators(self):
        """Sparse gradient operators and quadrature weights for the dissipation."""
        if hasattr(self, "_diss"):
            return self._diss
        g = self.grid
        nx, ny, dx, dy = g.nx, g.ny, g.dx, g.dy
        N = self.n
        jc, ic = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
        ic, jc = ic.ravel(), jc.ravel()
        rows = np.arange(nx * ny)
        Gx, Gy = _Triplets(), _Triplets()
        Gx.add(rows, self.U(ic + 1, jc), 1 / dx)
        Gx.add(rows, self.U(ic, jc), -1 / dx)
        Gy.add(rows, self.V(ic, jc + 1), 1 / dy)
        Gy.add(rows, self.V(ic, jc), -1 / dy)
        jn, in_ = np.meshgrid(np.arange(ny + 1), np.arange(nx + 1), indexing="ij")
        in_, jn = in_.ravel(), jn.ravel()
        rows = np.arange(len(in_))
        Gs = _Triplets()
        Gs.add(rows, self.U(in_, jn), 1 / dy)
        Gs.add(rows, self.U(in_, jn - 1), -1 / dy)
        Gs.add(rows, self.V(in_, jn), 1 / dx)
        Gs.add(rows, self.V(in_ - 1, jn), -1 / dx)
        wn = np.where((in_ == 0) | (in_ == nx), 0.5, 1.0) * np.where((jn == 0) | (jn == ny), 0.5, 1.0)

        # every velocity face with its adjacent-cell average and trapezoid weight
        fu_j, fu_i = np.meshgrid(np.arange(ny), np.arange(nx + 1), indexing="ij")
        fv_j, fv_i = np.meshgrid(np.arange(ny + 1), np.arange(nx), indexing="ij")
        fu_i, fu_j, fv_i, fv_j = fu_i.ravel(), fu_j.ravel(), fv_i.ravel(), fv_j.ravel()
        rows, cols, vals = [], [], []
        nfu = len(fu_i)
        for k0, fi, fj, kind in ((0, fu_i, fu_j, "u"), (nfu, fv_i, fv_j, "v")):
            loc = np.arange(k0, k0 + len(fi))
            if kind == "u":
                cells = [(fi - 1, fj), (fi, fj)]
                valid = [fi - 1 >= 0, fi <= nx - 1]
            else:
                cells = [(fi, fj - 1), (fi, fj)]
                valid = [fj - 1 >= 0, fj <= ny - 1]
            cnt = valid[0].astype(float) + valid[1].astype(float)
            for (ci, cj), ok in zip(cells, valid):
                rows.append(loc[ok])
                cols.append((cj * nx + ci)[ok])
                vals.append(1.0 / cnt[ok])
        favg = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.nu + self.nv, nx * ny))
        wf = np.concatenate([np.where((fu_i == 0) | (fu_i == nx), 0.5, 1.0),
                             np.where((fv_j == 0) | (fv_j == ny), 0.5, 1.0)])
        self._diss = dict(Gx=Gx.matrix((nx * ny, N)), Gy=Gy.matrix((nx * ny, N)),
                          Gs=Gs.matrix((len(wn), N)), wn=wn, favg=favg, wf=wf)
        return self._diss

    def dissipation(self, x, alpha, grad=False):
        """Viscous plus Brinkman power dissipation per unit depth [W/m].

        With ``grad=True`` also returns the partial derivatives with respect to
        the state vector and the cell inverse permeability.
        """
        d = self.dissipation_operators()
        eta = self.fluid.eta
        A = self.grid.dx * self.grid.dy
        nvel = self.nu + self.nv
        alpha = np.ravel(alpha)
        ex, ey, es = d["Gx"] @ x, d["Gy"] @ x, d["Gs"] @ x
        af = d["favg"] @ alpha
        xf = x[:nvel]
        f = eta * A * (2 * ex @ ex + 2 * ey @ ey + np.sum(d["wn"] * es ** 2)
                       + np.sum(d["wf"] * af * xf ** 2))
        if not grad:
            return float(f)
        gx = 2 * eta * A * (2 * (d["Gx"].T @ ex) + 2 * (d["Gy"].T @ ey) + d["Gs"].T @ (d["wn"] * es))
        gx[:nvel] += 2 * eta * A * d["wf"] * af * xf
        ga = eta * A * (d["favg"].T @ (d["wf"] * xf ** 2))
        return float(f), gx, ga

    def outlet_faces(self):
        return outlet_faces(self.grid, self.tags)


def outlet_faces(grid: Grid, tags: BoundaryTags):
    """State-vector indices, outward signs, positions, lengths and edge
    indices of the outlet faces."""
    nx, ny = grid.nx, grid.ny
    nu = (nx + 1) * ny
    edge = tags.outlet_edge
    k = np.flatnonzero(tags[edge] == OUTLET)
    if edge == "top":
        idx, sign, h = nu + ny * nx + k, 1.0, grid.dx
    elif edge == "bottom":
        idx, sign, h = nu + k, -1.0, grid.dx
    elif edge == "right":
        idx, sign, h = k * (nx + 1) + nx, 1.0, grid.dy
    else:
        idx, sign, h = k * (nx + 1), -1.0, grid.dy
    return idx, sign, (k + 0.5) * h, np.full(len(k), h), k


def _tags_for(grid: Grid, bc):
    if isinstance(bc, BoundaryTags):
        return bc
    if isinstance(bc, BoundarySpec):
        return classify_boundary(grid, bc)
    raise InvalidArgument("bc must be a BoundarySpec or BoundaryTags")


def solve_flow(grid: Grid, bc, alpha, fluid: Optional[FluidProps] = None, tol: float = 1e-6,
               stokes: bool = False, **kwargs) -> FlowSolution:
    """Solve the steady Navier-Stokes-Brinkman equations for a given
    inverse-permeability field (one value per cell, 1/m^2).

    Raises ConvergenceFailure, carrying the residual history, when Newton's
    method does not reach ``tol``.
    """
    fluid = fluid or FluidProps()
    tags = _tags_for(grid, bc)
    system = MacSystem(grid, tags, fluid, stokes=stokes)
    return system.solve(alpha, tol=tol, **kwargs)


def _system_for(sol: FlowSolution) -> MacSystem:
    return MacSystem(sol.grid, sol.tags, sol.fluid, stokes=sol.stokes)


def dissipation(sol: FlowSolution, alpha, fluid: Optional[FluidProps] = None) -> float:
    """Power dissipation of a flow field [W per meter of depth]."""
    system = _system_for(sol)
    if fluid is not None and fluid != sol.fluid:
        system = MacSystem(sol.grid, sol.tags, fluid, stokes=sol.stokes)
    return system.dissipation(sol.x, np.asarray(alpha, dtype=float))


def outlet_profile(sol: FlowSolution, bc=None) -> OutletProfile:
    """Outward normal velocity on each outlet face, ordered by position."""
    tags = sol.tags if bc is None else _tags_for(sol.grid, bc)
    idx, sign, pos, length, k = outlet_faces(sol.grid, tags)
    return OutletProfile(pos, sign * sol.x[idx], length, k)


def inlet_mass_flow(tags: BoundaryTags, fluid: FluidProps) -> float:
    return fluid.rho * tags.inlet_velocity * tags.length(INLET)
