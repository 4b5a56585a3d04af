"""Outlet channel pinning and conversion of the activator field to a
fluid/solid raster.

Low activator concentration marks fluid, high concentration marks walls.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from ..errors import BinarizationFailure, InvalidArgument
from ..grid import INLET, OUTLET, WALL, BoundaryTags, Grid
from ..media import MediaParams, porosity_permeability
from .kinetics import ReactionCoeffs

logger = logging.getLogger(__name__)

FLUID, SOLID = 1, 0
INNER_LINE_DISTANCE = 3e-3


@dataclass
class Pins:
    """Dirichlet cells of the RD problem and their phase."""
    mask: np.ndarray          # (ny, nx) bool, True where pinned
    phase: np.ndarray         # (ny, nx) int8, FLUID or SOLID where pinned
    U: np.ndarray
    V: np.ndarray
    channels: list = field(default_factory=list)  # (start, stop) cell ranges along the outlet edge

    def as_tuple(self):
        return self.mask, self.U, self.V


def pinned_levels(coeffs: ReactionCoeffs):
    """Activator/inhibitor values imposed on fluid and solid cells."""
    U_hi, _ = coeffs.bounds()
    _, V0 = coeffs.fixed_point()
    return {FLUID: (0.0, V0), SOLID: (U_hi, V0)}


def _edge_index(grid: Grid, edge: str, depth: int):
    """Index tuple selecting the cell line ``depth`` cells in from ``edge``,
    ordered by increasing position along the edge."""
    ny, nx = grid.shape
    if edge == "bottom":
        return (np.full(nx, depth), np.arange(nx))
    if edge == "top":
        return (np.full(nx, ny - 1 - depth), np.arange(nx))
    if edge == "left":
        return (np.arange(ny), np.full(ny, depth))
    return (np.arange(ny), np.full(ny, nx - 1 - depth))


def channel_layout(ncells: int, h: float, wc: float, ww: float):
    """Channel cell ranges along an edge of ``ncells`` cells of size ``h``.

    Widths are snapped to whole cells, the number of channels is
    ``floor(length / pitch)`` and the pattern is centred on the edge.
    """
    nc = max(1, int(round(wc / h)))
    npitch = max(nc + 1, int(round((wc + ww) / h)))
    length = ncells * h
    n = int(np.floor(length / (wc + ww) + 1e-9))
    n = min(n, ncells // npitch)
    if n < 1:
        raise InvalidArgument("outlet shorter than one channel pitch")
    leftover = ncells - n * npitch
    if leftover * h > 0.5 * wc:
        warnings.warn(f"pitch leaves {leftover * h * 1e3:.3g} mm of the outlet unused; pattern centred",
                      stacklevel=2)
    start = leftover // 2 + (npitch - nc) // 2
    return [(start + k * npitch, start + k * npitch + nc) for k in range(n)]


def enforce_outlet_bc(grid: Grid, tags: BoundaryTags, wc_outlet: float, params: MediaParams,
                      coeffs: ReactionCoeffs, inner_distance: float = INNER_LINE_DISTANCE,
                      band: bool = True, pin_walls: bool = False, pin_inlet: bool = False) -> Pins:
    """Pin the outlet channel pattern and the solid/fluid state of the other boundaries.

    The outlet line and a parallel line ``inner_distance`` inside the domain
    get alternating channel (fluid) and wall (solid) cells of the prescribed
    widths; with ``band=True`` every line in between is pinned as well. Cells
    along walls are pinned solid (``pin_walls``) and cells along the inlet
    fluid (``pin_inlet``); unpinned boundaries are no-flux.

    Pinning walls solid tends to grow boundary-parallel walls that cut
    channels off from the inlet, so both are off by default and the inlet is
    opened after binarization instead (see ``open_inlet``).
    """
    if not params.wc_min <= wc_outlet <= params.wc_max:
        raise InvalidArgument(f"outlet channel width {wc_outlet} outside [{params.wc_min}, {params.wc_max}]")
    levels = pinned_levels(coeffs)
    ny, nx = grid.shape
    mask = np.zeros((ny, nx), bool)
    phase = np.full((ny, nx), SOLID, np.int8)
    edge = tags.outlet_edge
    for e in ("bottom", "top", "left", "right"):
        kinds = tags[e]
        line = _edge_index(grid, e, 0)
        for kind, ph, on in ((WALL, SOLID, pin_walls), (INLET, FLUID, pin_inlet)):
            if not on:
                continue
            sel = kinds == kind
            mask[line[0][sel], line[1][sel]] = True
            phase[line[0][sel], line[1][sel]] = ph
    h = grid.face_size(edge)
    across = grid.dy if edge in ("bottom", "top") else grid.dx
    ncell = grid.edge_faces(edge)
    outlet = tags[edge] == OUTLET
    idx = np.flatnonzero(outlet)
    if idx.size == 0:
        raise InvalidArgument("outlet edge has no outlet faces")
    lo, hi = idx[0], idx[-1] + 1
    chans = [(a + lo, b + lo) for a, b in channel_layout(hi - lo, h, wc_outlet, params.ww)]
    line_phase = np.full(ncell, SOLID, np.int8)
    for a, b in chans:
        line_phase[a:b] = FLUID
    depth = int(round(inner_distance / across))
    depths = range(depth + 1) if band else (0, depth)
    for d in depths:
        r, c = _edge_index(grid, edge, d)
        r, c = r[lo:hi], c[lo:hi]
        mask[r, c] = True
        phase[r, c] = line_phase[lo:hi]
    U = np.where(phase == FLUID, levels[FLUID][0], levels[SOLID][0])
    V = np.where(phase == FLUID, levels[FLUID][1], levels[SOLID][1])
    return Pins(mask, phase, U, V, chans)


def rank_fraction(U: np.ndarray, radius: int, stride: int = 1) -> np.ndarray:
    """Fraction of cells in the ``(2 radius + 1)^2`` window with a lower value
    (ties count half). Windows are reflected at the boundary."""
    ny, nx = U.shape
    pad = np.pad(U, radius, mode="reflect")
    below = np.zeros_like(U)
    count = 0
    for dj in range(-radius, radius + 1, stride):
        for di in range(-radius, radius + 1, stride):
            nb = pad[radius + dj:radius + dj + ny, radius + di:radius + di + nx]
            below += (nb < U)
            below += 0.5 * (nb == U)
            count += 1
    # the centre cell ties with itself
    return (below - 0.5) / (count - 1)


def binarize(U: np.ndarray, porosity: np.ndarray, grid: Grid, pitch_max: float,
             pins: Optional[Pins] = None, window_pitches: float = 2.0, stride: int = 1) -> np.ndarray:
    """Fluid/solid raster whose local fluid fraction follows ``porosity``.

    A cell is fluid when its rank among the activator values of a window about
    ``window_pitches`` pitches wide is below the local porosity. Pinned cells
    keep their pinned phase.
    """
    U = np.asarray(U, dtype=float)
    if not np.all(np.isfinite(U)):
        raise BinarizationFailure("activator field contains non-finite values")
    spread = U.max() - U.min()
    if not spread > 1e-9 * max(1.0, abs(U).max()):
        raise BinarizationFailure("activator field is constant; no pattern formed")
    h = min(grid.dx, grid.dy)
    radius = max(1, int(round(0.5 * window_pitches * pitch_max / h)))
    radius = min(radius, min(U.shape) - 1)
    frac = rank_fraction(U, radius, stride)
    out = np.where(frac < porosity, FLUID, SOLID).astype(np.int8)
    if pins is not None:
        out[pins.mask] = pins.phase[pins.mask]
    return out


def open_inlet(raster: np.ndarray, grid: Grid, tags: BoundaryTags) -> np.ndarray:
    """Copy of ``raster`` with the cells along inlet faces set to fluid."""
    out = np.array(raster, copy=True)
    for e in ("bottom", "top", "left", "right"):
        r, c = _edge_index(grid, e, 0)
        sel = tags[e] == INLET
        out[r[sel], c[sel]] = FLUID
    return out


def local_fraction(raster: np.ndarray, size: int) -> np.ndarray:
    """Moving-average fluid fraction over ``size x size`` windows."""
    return ndimage.uniform_filter(raster.astype(float), size=size, mode="reflect")
