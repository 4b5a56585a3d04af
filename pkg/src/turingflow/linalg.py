"""Sparse direct solves with an optional PARDISO backend.

PARDISO (through ``pypardiso``) is used when it can be loaded; otherwise
SuperLU with a COLAMD column ordering. Minimum-degree orderings on A^T + A
perform badly on the saddle-point flow systems because of the zero pressure
diagonal, so they are never used here.
"""

from __future__ import annotations

import glob
import logging
import os
import sys

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

logger = logging.getLogger(__name__)

_pardiso = None
_backend = None


def _load_pardiso():
    if "PYPARDISO_MKL_RT" not in os.environ:
        for d in (os.path.join(sys.prefix, "lib"), "/usr/local/lib", "/usr/lib"):
            hits = sorted(glob.glob(os.path.join(d, "libmkl_rt.so*")))
            if hits:
                os.environ["PYPARDISO_MKL_RT"] = hits[0]
                break
    import pypardiso  # noqa: F401

    return pypardiso


def backend() -> str:
    global _pardiso, _backend
    if _backend is None:
        choice = os.environ.get("TURINGFLOW_SOLVER", "auto").lower()
        if choice in ("auto", "pardiso"):
            try:
                _pardiso = _load_pardiso()
                _backend = "pardiso"
            except Exception as exc:  # missing package or MKL runtime
                if choice == "pardiso":
                    raise
                logger.debug("PARDISO unavailable (%s); using SuperLU", exc)
                _backend = "superlu"
        else:
            _backend = "superlu"
    return _backend


# PARDISO's static pivoting occasionally breaks down on the saddle-point
# flow matrices; any solve worse than this falls back to SuperLU.
RESIDUAL_GUARD = 1e-9


class Factorization:
    """LU factors of a square sparse matrix, reusable for many right-hand sides."""

    def __init__(self, A, check=True):
        self.shape = A.shape
        self.check = check
        self._solver = None
        self._lu = None
        if backend() == "pardiso":
            self._solver = _pardiso.PyPardisoSolver()
            self._solver.set_matrix_type(11)
            self._A = sp.csr_matrix(A)
            self._A.sort_indices()
            self._solver.factorize(self._A)
        else:
            self._superlu(A)

    def _superlu(self, A):
        self._lu = spla.splu(sp.csc_matrix(A), permc_spec="COLAMD")

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if self._lu is not None:
            return self._lu.solve(b)
        x = self._solver.solve(self._A, b)
        if self.check:
            bn = np.linalg.norm(b)
            r = np.linalg.norm(self._A @ x - b)
            if not (np.isfinite(r) and r <= RESIDUAL_GUARD * max(bn, 1e-300)):
                logger.debug("PARDISO residual %.3e, refactorizing with SuperLU", r / max(bn, 1e-300))
                self.free()
                self._superlu(self._A)
                x = self._lu.solve(b)
        return x

    def free(self):
        if self._solver is not None:
            self._solver.free_memory(everything=True)
            self._solver = None


def spsolve(A, b):
    """One-shot sparse solve ``A x = b``."""
    if backend() == "pardiso":
        f = Factorization(A)
        try:
            return f.solve(b)
        finally:
            f.free()
    return spla.spsolve(sp.csc_matrix(A), np.asarray(b, dtype=float), permc_spec="COLAMD")
