"""Rectangular design domain, uniform structured grid and boundary tagging.

All lengths are in meters. Arrays defined on cells use ``[j, i]`` indexing,
i.e. row ``j`` runs along +y and column ``i`` along +x.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidArgument

WALL, INLET, OUTLET = 0, 1, 2
TAG_NAMES = {WALL: "wall", INLET: "inlet", OUTLET: "outlet"}

EDGES = ("bottom", "top", "left", "right")


@dataclass(frozen=True)
class Domain:
    width: float
    height: float

    def __post_init__(self):
        if not (np.isfinite(self.width) and np.isfinite(self.height)):
            raise InvalidArgument("domain dimensions must be finite")
        if self.width <= 0 or self.height <= 0:
            raise InvalidArgument(
                f"domain dimensions must be positive, got {self.width} x {self.height}"
            )


@dataclass(frozen=True)
class Grid:
    domain: Domain
    nx: int
    ny: int

    @property
    def dx(self) -> float:
        return self.domain.width / self.nx

    @property
    def dy(self) -> float:
        return self.domain.height / self.ny

    @property
    def ncells(self) -> int:
        return self.nx * self.ny

    @property
    def shape(self):
        return (self.ny, self.nx)

    @property
    def xc(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.dx

    @property
    def yc(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.dy

    def cell_centers(self):
        """Meshgrid of cell-center coordinates, each of shape ``(ny, nx)``."""
        return np.meshgrid(self.xc, self.yc)

    def edge_length(self, edge: str) -> float:
        return self.domain.width if edge in ("bottom", "top") else self.domain.height

    def edge_faces(self, edge: str) -> int:
        return self.nx if edge in ("bottom", "top") else self.ny

    def face_size(self, edge: str) -> float:
        return self.dx if edge in ("bottom", "top") else self.dy


def build_grid(domain: Domain, nx: Optional[int] = None, ny: Optional[int] = None,
               cells_per_meter: Optional[float] = None) -> Grid:
    """Uniform structured grid covering ``domain`` exactly.

    Either give ``nx`` and ``ny`` or a ``cells_per_meter`` resolution, in which
    case the counts are rounded to the nearest integer.
    """
    if cells_per_meter is not None:
        if nx is not None or ny is not None:
            raise InvalidArgument("give either nx/ny or cells_per_meter, not both")
        if not cells_per_meter > 0:
            raise InvalidArgument("cells_per_meter must be positive")
        nx = int(round(domain.width * cells_per_meter))
        ny = int(round(domain.height * cells_per_meter))
    if nx is None or ny is None:
        raise InvalidArgument("grid resolution not specified")
    if int(nx) != nx or int(ny) != ny:
        raise InvalidArgument("cell counts must be integers")
    if nx < 4 or ny < 4:
        raise InvalidArgument(f"grid needs at least 4 cells per direction, got {nx} x {ny}")
    return Grid(domain, int(nx), int(ny))


@dataclass(frozen=True)
class Segment:
    """A straight piece of the domain boundary.

    ``offset`` is measured from the lower/left end of the edge. ``width=None``
    means the segment runs to the end of the edge.
    """

    edge: str
    offset: float = 0.0
    width: Optional[float] = None
    velocity: float = 0.0

    def __post_init__(self):
        if self.edge not in EDGES:
            raise InvalidArgument(f"unknown edge {self.edge!r}; expected one of {EDGES}")
        if self.offset < 0:
            raise InvalidArgument("segment offset must be non-negative")
        if self.width is not None and not self.width > 0:
            raise InvalidArgument("segment width must be positive")

    def span(self, edge_length: float):
        width = edge_length - self.offset if self.width is None else self.width
        return self.offset, self.offset + width


@dataclass(frozen=True)
class BoundarySpec:
    """Inlet and outlet segments; the rest of the boundary is wall.

    The inlet carries a uniform inward normal velocity (plug profile); the
    outlet is a zero-pressure, zero-shear boundary. With ``wall_slip`` the
    walls become free-slip instead of no-slip.
    """

    inlet: Segment
    outlet: Segment
    wall_slip: bool = False

    def __post_init__(self):
        if not self.inlet.velocity > 0:
            raise InvalidArgument("inlet velocity must be positive")
        if self.inlet.width is not None and not self.inlet.width > 0:
            raise InvalidArgument("inlet width must be positive")

    def validate(self, domain: Domain):
        for name, seg in (("inlet", self.inlet), ("outlet", self.outlet)):
            length = domain.width if seg.edge in ("bottom", "top") else domain.height
            a, b = seg.span(length)
            if b > length * (1 + 1e-12) or a >= length:
                raise InvalidArgument(f"{name} segment [{a}, {b}] lies off the {seg.edge} edge")
        if self.inlet.edge == self.outlet.edge:
            length = domain.width if self.inlet.edge in ("bottom", "top") else domain.height
            a0, b0 = self.inlet.span(length)
            a1, b1 = self.outlet.span(length)
            if a0 < b1 and a1 < b0:
                raise InvalidArgument("inlet and outlet segments overlap")


@dataclass(frozen=True)
class BoundaryTags:
    """Per-face tags for each edge (``WALL``, ``INLET`` or ``OUTLET``)."""

    grid: Grid
    tags: dict = field(default_factory=dict)
    inlet_velocity: float = 0.0
    wall_slip: bool = False

    def __getitem__(self, edge):
        return self.tags[edge]

    def faces(self, kind: int):
        """List of ``(edge, index)`` pairs carrying tag ``kind``."""
        out = []
        for edge in EDGES:
            for k in np.flatnonzero(self.tags[edge] == kind):
                out.append((edge, int(k)))
        return out

    def count(self, kind: int) -> int:
        return sum(int(np.count_nonzero(self.tags[e] == kind)) for e in EDGES)

    def length(self, kind: int) -> float:
        return sum(np.count_nonzero(self.tags[e] == kind) * self.grid.face_size(e) for e in EDGES)

    @property
    def outlet_edge(self) -> str:
        edges = [e for e in EDGES if np.any(self.tags[e] == OUTLET)]
        if len(edges) != 1:
            raise InvalidArgument("expected exactly one outlet edge")
        return edges[0]

    @property
    def inlet_edge(self) -> str:
        edges = [e for e in EDGES if np.any(self.tags[e] == INLET)]
        if len(edges) != 1:
            raise InvalidArgument("expected exactly one inlet edge")
        return edges[0]


def classify_boundary(grid: Grid, spec: BoundarySpec) -> BoundaryTags:
    """Tag every boundary face as inlet, outlet or wall.

    A face belongs to a segment when its midpoint lies inside the segment, so
    the tagged length matches the segment width to within one cell.
    """
    spec.validate(grid.domain)
    tags = {e: np.full(grid.edge_faces(e), WALL, dtype=np.int8) for e in EDGES}
    for kind, seg in ((OUTLET, spec.outlet), (INLET, spec.inlet)):
        h = grid.face_size(seg.edge)
        mids = (np.arange(grid.edge_faces(seg.edge)) + 0.5) * h
        a, b = seg.span(grid.edge_length(seg.edge))
        hit = (mids > a) & (mids < b)
        if not hit.any():
            raise InvalidArgument(f"segment on {seg.edge} edge covers no faces at this resolution")
        tags[seg.edge][hit] = kind
    return BoundaryTags(grid, tags, inlet_velocity=spec.inlet.velocity,
                        wall_slip=spec.wall_slip)


def outlet_band_mask(grid: Grid, tags: BoundaryTags, depth: float) -> np.ndarray:
    """Cells whose centre lies within ``depth`` of the outlet edge, across
    the outlet faces."""
    edge = tags.outlet_edge
    yc, xc = grid.yc, grid.xc
    across = {"bottom": yc, "top": grid.domain.height - yc,
              "left": xc, "right": grid.domain.width - xc}[edge]
    near = across < depth
    out = tags[edge] == OUTLET
    if edge in ("bottom", "top"):
        return near[:, None] & out[None, :]
    return out[:, None] & near[None, :]
