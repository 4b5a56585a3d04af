"""Resolved-geometry flow verification and outlet statistics.

Solid cells of a binary pattern are masked by a large Brinkman friction, the
flow is solved on the pattern grid, and the outlet edge is split into the
maximal runs of fluid cells. Each run is one outlet channel.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import InvalidArgument, InvalidGeometry
from .flow import FlowSolution, FluidProps, MacSystem, _tags_for, inlet_mass_flow, outlet_faces
from .grid import INLET, OUTLET, BoundaryTags, Domain, Grid, build_grid
from .media import MediaParams

logger = logging.getLogger(__name__)

FLUID, SOLID = 1, 0
SOLID_FACTOR = 1e5
SEEPAGE_LIMIT = 1e-3


@dataclass
class BinaryPattern:
    """Fluid (1) / solid (0) raster with provenance."""
    raster: np.ndarray
    grid: Grid
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        r = np.asarray(self.raster)
        if r.shape != self.grid.shape:
            raise InvalidArgument(f"raster shape {r.shape} does not match grid {self.grid.shape}")
        if not np.all((r == 0) | (r == 1)):
            raise InvalidArgument("raster values must be 0 (solid) or 1 (fluid)")
        self.raster = r.astype(np.int8)

    @property
    def fluid(self) -> np.ndarray:
        return self.raster == FLUID

    @classmethod
    def all_fluid(cls, grid: Grid, **provenance):
        return cls(np.ones(grid.shape, np.int8), grid, dict(provenance))


@dataclass
class OutletReport:
    mdot: np.ndarray
    mean: float
    avg_variation: float
    max_variation: float
    positions: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return int(self.mdot.size)

    @property
    def deviation(self) -> np.ndarray:
        return (self.mdot - self.mean) / self.mean


def _edge_cells(grid: Grid, edge: str):
    ny, nx = grid.shape
    if edge == "bottom":
        return np.zeros(nx, int), np.arange(nx)
    if edge == "top":
        return np.full(nx, ny - 1), np.arange(nx)
    if edge == "left":
        return np.arange(ny), np.zeros(ny, int)
    return np.arange(ny), np.full(ny, nx - 1)


def segment_outlets(pattern: BinaryPattern, bc) -> List[tuple]:
    """Maximal runs of fluid cells along the outlet faces, as ``(start, stop)``
    face-index intervals on the outlet edge."""
    tags = _tags_for(pattern.grid, bc)
    edge = tags.outlet_edge
    r, c = _edge_cells(pattern.grid, edge)
    open_ = (tags[edge] == OUTLET) & pattern.fluid[r, c]
    if not open_.any():
        raise InvalidGeometry("no fluid cells on the outlet", [])
    d = np.diff(np.concatenate([[0], open_.astype(int), [0]]))
    starts, stops = np.flatnonzero(d == 1), np.flatnonzero(d == -1)
    return list(zip(starts.tolist(), stops.tolist()))


def check_connectivity(pattern: BinaryPattern, bc) -> None:
    """Raise InvalidGeometry unless the inlet adjoins fluid and every outlet
    channel reaches the inlet through face-connected fluid cells."""
    tags = _tags_for(pattern.grid, bc)
    fluid = pattern.fluid
    labels, nlab = ndimage.label(fluid)
    ie = tags.inlet_edge
    r, c = _edge_cells(pattern.grid, ie)
    inl = tags[ie] == INLET
    if not np.any(fluid[r[inl], c[inl]]):
        raise InvalidGeometry("inlet faces adjoin no fluid cells", [])
    inlet_labels = set(np.unique(labels[r[inl], c[inl]])) - {0}
    oe = tags.outlet_edge
    r, c = _edge_cells(pattern.grid, oe)
    orphans = []
    for a, b in segment_outlets(pattern, tags):
        lab = labels[r[a], c[a]]
        if lab not in inlet_labels:
            orphans.append({"outlet_faces": (a, b), "region": int(lab),
                            "cells": int(np.count_nonzero(labels == lab))})
    if orphans:
        raise InvalidGeometry(f"{len(orphans)} outlet channel(s) are not connected to the inlet", orphans)


def fill_orphans(pattern: BinaryPattern, bc) -> BinaryPattern:
    """Turn fluid regions that do not touch the inlet into solid."""
    tags = _tags_for(pattern.grid, bc)
    labels, _ = ndimage.label(pattern.fluid)
    r, c = _edge_cells(pattern.grid, tags.inlet_edge)
    keep = np.unique(labels[r[tags[tags.inlet_edge] == INLET], c[tags[tags.inlet_edge] == INLET]])
    keep = keep[keep > 0]
    raster = np.where(np.isin(labels, keep), FLUID, SOLID).astype(np.int8)
    return BinaryPattern(raster, pattern.grid, dict(pattern.provenance))


def solid_alpha(params: MediaParams) -> float:
    return SOLID_FACTOR / params.kappa_min


def seepage(sol: FlowSolution, pattern: BinaryPattern, fluid: FluidProps) -> dict:
    """Largest mass flux through a single face of a solid cell and the total
    flow passing through solid cells, both relative to the inlet mass flow."""
    solid = ~pattern.fluid
    rho = fluid.rho
    g = sol.grid
    fu = rho * np.abs(sol.u) * g.dy   # (ny, nx+1)
    fv = rho * np.abs(sol.v) * g.dx   # (ny+1, nx)
    su = np.zeros(fu.shape, bool)
    su[:, :-1] |= solid
    su[:, 1:] |= solid
    sv = np.zeros(fv.shape, bool)
    sv[:-1, :] |= solid
    sv[1:, :] |= solid
    face_max = max(float(fu[su].max(initial=0.0)), float(fv[sv].max(initial=0.0)))
    through = 0.5 * (fu[:, :-1] + fu[:, 1:] + fv[:-1, :] + fv[1:, :])
    total = float(through[solid].sum())
    m_in = inlet_mass_flow(sol.tags, fluid)
    return {"face_max": face_max / m_in, "through_solid": total / m_in}


def resolved_flow(pattern: BinaryPattern, bc, fluid: Optional[FluidProps] = None,
                  params: Optional[MediaParams] = None, stokes: bool = False, tol: float = 1e-6,
                  check: bool = True) -> FlowSolution:
    """Flow through the pattern with solid cells penalized at ``1e5 / kappa_min``.

    The solution's ``residuals`` dict gains the seepage diagnostics; a face
    flux above 0.1 % of the inlet flow raises InvalidGeometry.
    """
    fluid = fluid or FluidProps()
    params = params or MediaParams()
    tags = _tags_for(pattern.grid, bc)
    if check:
        check_connectivity(pattern, tags)
    alpha = np.where(pattern.fluid, 0.0, solid_alpha(params))
    system = MacSystem(pattern.grid, tags, fluid, stokes=stokes)
    sol = system.solve(alpha, tol=tol)
    seep = seepage(sol, pattern, fluid)
    sol.residuals.update(seep)
    if seep["face_max"] > SEEPAGE_LIMIT:
        raise InvalidGeometry(
            f"seepage through solid cells {seep['face_max']:.3e} of the inlet flow exceeds "
            f"{SEEPAGE_LIMIT:g}", [])
    return sol


def outlet_mass_flows(sol: FlowSolution, intervals: Sequence[tuple], fluid: Optional[FluidProps] = None):
    """Mass flow through each outlet interval and the interval centres."""
    fluid = fluid or sol.fluid
    idx, sign, pos, length, k = outlet_faces(sol.grid, sol.tags)
    full = np.zeros(sol.grid.edge_faces(sol.tags.outlet_edge))
    full[k] = fluid.rho * sign * sol.x[idx] * length
    h = sol.grid.face_size(sol.tags.outlet_edge)
    mdot = np.array([full[a:b].sum() for a, b in intervals])
    centres = np.array([0.5 * (a + b) * h for a, b in intervals])
    return mdot, centres


def flow_metrics(mdot, positions=None) -> OutletReport:
    """Average and maximum relative deviation of outlet mass flows from their mean."""
    m = np.asarray(mdot, dtype=float).ravel()
    if m.size < 1:
        raise InvalidArgument("need at least one outlet")
    if not np.all(np.isfinite(m)):
        raise InvalidArgument("outlet mass flows must be finite")
    mean = float(m.mean())
    if mean == 0:
        raise InvalidArgument("mean outlet mass flow is zero")
    dev = np.abs(m - mean) / abs(mean)
    return OutletReport(m, mean, float(dev.mean()), float(dev.max()),
                        None if positions is None else np.asarray(positions, dtype=float))


def dof_scaling_report(outlet_counts: Sequence[int], domain: Domain, design_shape: tuple,
                       params: Optional[MediaParams] = None, outlet_length: Optional[float] = None,
                       cells_per_channel: int = 4) -> List[dict]:
    """Cell counts of the design and verification grids versus outlet count.

    For ``n`` outlets the pitch is ``outlet_length / n`` with the channel/wall
    ratio of ``params``; the verification grid resolves the channel with
    ``cells_per_channel`` cells, while the design grid does not depend on ``n``.
    """
    if not len(outlet_counts):
        raise InvalidArgument("need at least one outlet count")
    params = params or MediaParams()
    L = domain.width if outlet_length is None else outlet_length
    ratio = params.wc_min / (params.wc_min + params.ww)
    ny, nx = design_shape
    rows = []
    for n in outlet_counts:
        if int(n) < 1:
            raise InvalidArgument("outlet counts must be positive")
        wc = ratio * L / int(n)
        h = wc / cells_per_channel
        vg = build_grid(domain, nx=max(4, int(np.ceil(domain.width / h))),
                        ny=max(4, int(np.ceil(domain.height / h))))
        rows.append({"outlets": int(n), "design_cells": int(nx * ny), "verify_cells": int(vg.ncells)})
    return rows
