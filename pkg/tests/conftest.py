import numpy as np
import pytest

from turingflow.grid import BoundarySpec, Domain, Segment, build_grid, classify_boundary
from turingflow.media import MediaParams


@pytest.fixture
def params():
    return MediaParams()


def channel_case(width=0.01, height=0.02, nx=8, ny=16, velocity=0.2):
    """Straight channel: full-width inlet at the bottom, outlet at the top."""
    grid = build_grid(Domain(width, height), nx=nx, ny=ny)
    bc = BoundarySpec(Segment("bottom", 0.0, None, velocity), Segment("top"))
    return grid, bc


def manifold_case(nx=40, ny=20, width=0.04, height=0.02, offset=0.006, inlet=0.004, velocity=0.2):
    """Small manifold with a bottom inlet near the left corner and a top outlet."""
    grid = build_grid(Domain(width, height), nx=nx, ny=ny)
    bc = BoundarySpec(Segment("bottom", offset, inlet, velocity), Segment("top"))
    return grid, bc


# Acceptance verdict lines, repeated in the terminal summary so they show without -s.
VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
