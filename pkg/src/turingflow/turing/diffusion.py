"""Velocity-aligned diffusion tensors and a monotone discretization of
``div(D grad U)`` on a uniform grid.

The operator uses Selling's decomposition: every 2x2 symmetric positive
definite tensor is written as ``sum_k lam_k e_k e_k^T`` with ``lam_k >= 0``
and integer grid offsets ``e_k``. Second differences along those offsets
give a graph Laplacian with non-negative edge weights, so implicit steps
preserve positivity and the discrete maximum principle for any anisotropy.
For mildly anisotropic tensors the offsets stay within the 3x3
neighbourhood and the stencil is an ordinary 9-point one.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from ..errors import InvalidArgument

# below this fraction of the reference speed the flow direction is undefined
STAGNATION_FRACTION = 1e-3


def diffusion_tensor(direction, w, l_factor, w_factor):
    """Diffusion tensor elongated along a unit flow direction.

    The lateral diffusivity is ``W = (w_factor * w)**2`` and the
    along-flow diffusivity ``L = l_factor**2 * W``, so ``l_factor = 1`` is
    isotropic and the anisotropy ratio is ``l_factor**2``.

    Returns a ``(2, 2)`` array, or ``(..., 2, 2)`` for array inputs.
    """
    d = np.asarray(direction, dtype=float)
    w = np.asarray(w, dtype=float)
    lf = np.asarray(l_factor, dtype=float)
    if not (np.all(np.isfinite(d)) and np.all(np.isfinite(w)) and np.all(np.isfinite(lf))
            and np.isfinite(w_factor)):
        raise InvalidArgument("diffusion tensor inputs must be finite")
    if np.any(w <= 0):
        raise InvalidArgument("pitch must be positive")
    if np.any(lf < 1):
        raise InvalidArgument("anisotropy factor must be >= 1")
    W = (w_factor * w) ** 2
    L = lf ** 2 * W
    nrm = np.linalg.norm(d, axis=-1, keepdims=True)
    if np.any(np.abs(nrm - 1) > 1e-6):
        raise InvalidArgument("flow direction must be a unit vector")
    outer = d[..., :, None] * d[..., None, :]
    return (L - W)[..., None, None] * outer + W[..., None, None] * np.eye(2)


def tensor_field(ux, uy, w, l_factor, w_factor, ref_speed):
    """Per-cell tensor components ``(Dxx, Dxy, Dyy)`` from a velocity field.

    Cells whose speed is below ``STAGNATION_FRACTION * ref_speed`` get the
    isotropic tensor ``W I``.
    """
    speed = np.hypot(ux, uy)
    moving = speed > STAGNATION_FRACTION * ref_speed
    safe = np.where(moving, speed, 1.0)
    ex = np.where(moving, ux / safe, 1.0)
    ey = np.where(moving, uy / safe, 0.0)
    lf = np.where(moving, l_factor, 1.0)
    W = (w_factor * np.asarray(w, dtype=float)) ** 2
    L = lf ** 2 * W
    Dxx = (L - W) * ex * ex + W
    Dxy = (L - W) * ex * ey
    Dyy = (L - W) * ey * ey + W
    return Dxx, Dxy, Dyy


def selling(Dxx, Dxy, Dyy, max_iter=200):
    """Selling decomposition of a field of 2x2 SPD tensors.

    Returns ``(weights, offsets)`` with shapes ``(3, ...)`` and
    ``(3, ..., 2)``: ``D = sum_k weights[k] * outer(offsets[k], offsets[k])``.
    Offsets are integer vectors in index units.
    """
    Dxx, Dxy, Dyy = (np.asarray(a, dtype=float) for a in (Dxx, Dxy, Dyy))
    if np.any(Dxx <= 0) or np.any(Dyy <= 0) or np.any(Dxx * Dyy - Dxy ** 2 <= 0):
        raise InvalidArgument("diffusion tensors must be symmetric positive definite")
    shape = Dxx.shape
    e = np.zeros((3,) + shape + (2,), dtype=np.int64)
    e[0, ..., 0] = 1
    e[1, ..., 1] = 1
    e[2, ..., 0] = -1
    e[2, ..., 1] = -1

    def dot(a, b):
        return (a[..., 0] * (Dxx * b[..., 0] + Dxy * b[..., 1])
                + a[..., 1] * (Dxy * b[..., 0] + Dyy * b[..., 1]))

    pairs = ((0, 1, 2), (0, 2, 1), (1, 2, 0))
    for _ in range(max_iter):
        changed = False
        for i, j, k in pairs:
            bad = dot(e[i], e[j]) > 1e-14 * (Dxx + Dyy)
            if np.any(bad):
                changed = True
                ei, ej = e[i][bad].copy(), e[j][bad].copy()
                e[i][bad] = -ei
                e[k][bad] = ei - ej
        if not changed:
            break
    else:
        raise InvalidArgument("Selling reduction did not terminate")

    weights = np.empty((3,) + shape)
    offsets = np.empty((3,) + shape + (2,), dtype=np.int64)
    for i, j, k in pairs:
        weights[k] = np.maximum(-dot(e[i], e[j]), 0.0)
        offsets[k, ..., 0] = -e[k][..., 1]
        offsets[k, ..., 1] = e[k][..., 0]
    return weights, offsets


def diffusion_matrix(Dxx, Dxy, Dyy, hx, hy):
    """Sparse graph Laplacian ``A`` with ``-A U ~ div(D grad U)``.

    Tensors are given per cell on a ``(ny, nx)`` grid; boundaries are
    no-flux (edges leaving the domain are dropped). ``A`` is symmetric
    positive semidefinite with zero row sums.
    """
    Dxx = np.asarray(Dxx, dtype=float)
    ny, nx = Dxx.shape
    # index coordinates
    weights, offsets = selling(Dxx / hx ** 2, np.asarray(Dxy) / (hx * hy), np.asarray(Dyy) / hy ** 2)
    jj, ii = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    rows, cols, vals = [], [], []
    for k in range(3):
        for sgn in (1, -1):
            oi = sgn * offsets[k, ..., 0]
            oj = sgn * offsets[k, ..., 1]
            ti, tj = ii + oi, jj + oj
            ok = (ti >= 0) & (ti < nx) & (tj >= 0) & (tj < ny) & (weights[k] > 0)
            a = (jj * nx + ii)[ok]
            b = (tj * nx + ti)[ok]
            w = 0.5 * weights[k][ok]
            rows += [a, b, a, b]
            cols += [a, b, b, a]
            vals += [w, w, -w, -w]
    n = nx * ny
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    A.sum_duplicates()
    return A
