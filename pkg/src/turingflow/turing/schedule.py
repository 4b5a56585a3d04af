"""Anisotropy schedules and the driver that grows a pattern on a flow field."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ..errors import InvalidArgument, NumericalFailure
from ..grid import Grid
from ..media import DesignField, MediaParams, pitch
from .diffusion import tensor_field
from .kinetics import ReactionCoeffs, width_factor
from .model import Stepper, TuringState, check_dt, default_dt

logger = logging.getLogger(__name__)

L_RANGE = (1.0, 10.0)


@dataclass(frozen=True)
class Phase:
    duration: float
    l_u: float
    l_v: float = 1.0

    def __post_init__(self):
        if not self.duration > 0:
            raise InvalidArgument("phase duration must be positive")
        for val in (self.l_u, self.l_v):
            if not L_RANGE[0] <= val <= L_RANGE[1]:
                raise InvalidArgument(f"anisotropy factor {val} outside {list(L_RANGE)}")


@dataclass(frozen=True)
class AnisotropySchedule:
    phases: tuple

    def __post_init__(self):
        phases = tuple(p if isinstance(p, Phase) else Phase(*p) for p in self.phases)
        if not phases:
            raise InvalidArgument("anisotropy schedule is empty")
        last = phases[-1]
        if last.l_u != 1.0 or last.l_v != 1.0:
            raise InvalidArgument("the last phase of a schedule must be isotropic")
        object.__setattr__(self, "phases", phases)

    @property
    def duration(self) -> float:
        return float(sum(p.duration for p in self.phases))

    @classmethod
    def default(cls) -> "AnisotropySchedule":
        """Strongly aligned start, six alternating phases, isotropic finish."""
        mid = [Phase(150.0, l) for l in (10.0, 3.0, 10.0, 3.0, 10.0, 3.0)]
        return cls(tuple([Phase(100.0, 10.0)] + mid + [Phase(800.0, 1.0)]))

    def steps(self, dt: float):
        """Number of steps per phase; durations are rounded to whole steps."""
        return [max(1, int(round(p.duration / dt))) for p in self.phases]


def transfer(values: np.ndarray, src: Grid, dst: Grid) -> np.ndarray:
    """Bilinear interpolation of a cell field between grids on the same domain.

    Points outside the ring of source cell centers take the nearest edge value.
    """
    values = np.asarray(values, dtype=float)
    if values.shape == dst.shape and src.shape == dst.shape:
        return values.copy()
    interp = RegularGridInterpolator((src.yc, src.xc), values, method="linear")
    yy = np.clip(dst.yc, src.yc[0], src.yc[-1])
    xx = np.clip(dst.xc, src.xc[0], src.xc[-1])
    Y, X = np.meshgrid(yy, xx, indexing="ij")
    return interp(np.stack([Y, X], axis=-1))


@dataclass
class RDInputs:
    """Fields on the RD grid that determine the diffusion tensors."""
    grid: Grid
    ux: np.ndarray
    uy: np.ndarray
    w: np.ndarray
    ref_speed: float


def prepare_inputs(design: Optional[DesignField], flow, rd_grid: Grid,
                   params: Optional[MediaParams] = None, direction=None,
                   ref_speed: Optional[float] = None, design_grid: Optional[Grid] = None) -> RDInputs:
    """Transfer pitch and flow direction onto the RD grid.

    Either ``flow`` (a ``FlowSolution``) or a constant ``direction`` gives the
    orientation. Pitch comes from ``design`` or, if it is None, from
    ``params`` at the mid-range channel width.
    """
    if flow is not None:
        src = flow.grid
        uc, vc = flow.cell_velocity()
        ux, uy = transfer(uc, src, rd_grid), transfer(vc, src, rd_grid)
        if ref_speed is None:
            ref_speed = float(flow.tags.inlet_velocity)
    elif direction is not None:
        d = np.asarray(direction, dtype=float)
        ux = np.full(rd_grid.shape, d[0])
        uy = np.full(rd_grid.shape, d[1])
        ref_speed = float(np.hypot(*d)) if ref_speed is None else ref_speed
    else:
        raise InvalidArgument("need a flow solution or a constant direction")
    if design is not None:
        src = design_grid if design_grid is not None else (flow.grid if flow is not None else None)
        if src is None:
            raise InvalidArgument("design grid unknown")
        g = np.clip(transfer(design.gamma, src, rd_grid), 0.0, 1.0)
        w = np.asarray(pitch(g, design.params))
    else:
        p = params if params is not None else MediaParams()
        w = np.full(rd_grid.shape, float(pitch(0.5, p)))
    return RDInputs(rd_grid, ux, uy, w, ref_speed)


def tensors(inputs: RDInputs, phase: Phase, coeffs: ReactionCoeffs):
    """Tensor fields (D_u, D_v) for one phase.

    D_u has lateral diffusivity ``(w_factor w)^2``; D_v is built the same way
    with the lateral value scaled by the diffusion ratio.
    """
    wf = width_factor(coeffs)
    wv = wf * np.sqrt(coeffs.diffusion_ratio)
    Du = tensor_field(inputs.ux, inputs.uy, inputs.w, phase.l_u, wf, inputs.ref_speed)
    Dv = tensor_field(inputs.ux, inputs.uy, inputs.w, phase.l_v, wv, inputs.ref_speed)
    return Du, Dv


def initial_state(grid: Grid, coeffs: ReactionCoeffs, seed: int, amplitude: float = 0.01):
    """Fixed point plus independent uniform perturbations of relative size ``amplitude``."""
    rng = np.random.default_rng(seed)
    U0, V0 = coeffs.fixed_point()
    U = U0 * (1.0 + amplitude * rng.uniform(-1.0, 1.0, grid.shape))
    V = V0 * (1.0 + amplitude * rng.uniform(-1.0, 1.0, grid.shape))
    return U, V


def run_schedule(inputs: RDInputs, schedule: AnisotropySchedule, coeffs: ReactionCoeffs,
                 seed: int = 0, dt: Optional[float] = None, pins=None,
                 monitor: Optional[Callable] = None, snapshot: Optional[Callable] = None) -> TuringState:
    """Integrate the reaction-diffusion system through every schedule phase.

    Tensors are rebuilt at each phase change. ``pins`` is an optional
    ``(mask, U_values, V_values)`` triple of Dirichlet cells. ``monitor`` is
    called as ``monitor(step, t, U, V)`` after every step and ``snapshot``
    as ``snapshot(phase_index, state)`` at the end of every phase.
    """
    if not isinstance(schedule, AnisotropySchedule):
        schedule = AnisotropySchedule(tuple(schedule))
    dt = default_dt(coeffs) if dt is None else float(dt)
    check_dt(dt, coeffs)
    grid = inputs.grid
    U, V = initial_state(grid, coeffs, seed)
    state = TuringState(grid, U, V, None, None, coeffs)
    if pins is not None:
        state = state.with_fixed(*pins)
    count = 0
    for k, (phase, nsteps) in enumerate(zip(schedule.phases, schedule.steps(dt))):
        Du, Dv = tensors(inputs, phase, coeffs)
        state = state.with_tensors(Du, Dv)
        stepper = Stepper(state, dt)
        U, V, t = state.U, state.V, state.t
        for _ in range(nsteps):
            U, V = stepper.step(U, V)
            t += dt
            count += 1
            if monitor is not None:
                monitor(count, t, U, V)
        stepper.free()
        if not (np.all(np.isfinite(U)) and np.all(np.isfinite(V))):
            raise NumericalFailure(f"non-finite concentrations in phase {k} (t={t:.6g})")
        state.U, state.V, state.t = U, V, t
        logger.info("phase %d done: l_u=%g, t=%.1f, U in [%.3g, %.3g]", k, phase.l_u, t, U.min(), U.max())
        if snapshot is not None:
            snapshot(k, state)
    return state
