"""Optimization loop: flow solve, adjoint gradient, MMA update."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from ..errors import ConvergenceFailure
from ..media import DesignField
from .adjoint import FlowProblem
from .mma import MMA, mma_step
from .objective import ObjectiveWeights

logger = logging.getLogger(__name__)

STALL_TOL = 1e-5
STALL_WINDOW = 5
MAX_RETRIES = 3


@dataclass
class HistoryRow:
    iteration: int
    f_o: float
    f_u: float
    F: float
    max_change: float


@dataclass
class OptimState:
    iteration: int
    gamma: np.ndarray
    mma: MMA
    history: List[HistoryRow] = field(default_factory=list)
    gradient: Optional[np.ndarray] = None


@dataclass
class OptimResult:
    design: DesignField
    history: List[HistoryRow]
    best_iteration: int
    weights: ObjectiveWeights
    reason: str


def _stalled(history, window=STALL_WINDOW, tol=STALL_TOL):
    if len(history) <= window:
        return False
    F = np.array([h.F for h in history[-(window + 1):]])
    return bool(np.all(np.abs(np.diff(F)) < tol))


def optimize(problem: FlowProblem, weights: Optional[ObjectiveWeights] = None, max_iters: int = 100,
             gamma0=0.5, move: float = 0.1, callback: Optional[Callable] = None) -> OptimResult:
    """Minimize the weighted objective over ``gamma`` in [0, 1].

    Stops after ``max_iters`` updates or when ``|dF| < 1e-5`` for five
    consecutive iterations, and returns the best design seen. A failed flow
    solve is retried from a design pulled halfway back to the last good one;
    after three failures the run aborts.
    """
    weights = weights if weights is not None else ObjectiveWeights()
    shape = problem.grid.shape
    gamma = np.broadcast_to(np.asarray(gamma0, dtype=float), shape).copy()
    state = OptimState(0, gamma, MMA(move=move))
    ev = problem.evaluate(problem.design(gamma), weights)
    x_prev = ev.solution.x
    best = (ev.F, 0, gamma.copy())
    state.history.append(HistoryRow(0, ev.f_o, ev.f_u, ev.F, 0.0))
    state.gradient = ev.grad
    reason = "max_iters"
    if callback is not None:
        callback(state, ev)
    while state.iteration < max_iters:
        if _stalled(state.history):
            reason = "stalled"
            break
        new = mma_step(state.mma, state.gamma, state.gradient)
        for attempt in range(MAX_RETRIES + 1):
            try:
                ev = problem.evaluate(problem.design(new), weights, x0=x_prev)
                break
            except ConvergenceFailure as exc:
                if attempt == MAX_RETRIES:
                    raise ConvergenceFailure(
                        f"flow solve failed {MAX_RETRIES + 1} times at iteration {state.iteration + 1}: {exc}",
                        exc.history) from exc
                logger.warning("flow solve failed (%s); retrying with a shorter step", exc)
                new = 0.5 * (new + state.gamma)
        change = float(np.max(np.abs(new - state.gamma)))
        state.iteration += 1
        state.gamma = new
        state.gradient = ev.grad
        x_prev = ev.solution.x
        state.history.append(HistoryRow(state.iteration, ev.f_o, ev.f_u, ev.F, change))
        if ev.F < best[0]:
            best = (ev.F, state.iteration, new.copy())
        logger.info("iter %3d  F=%.6f  f_o=%.4e  f_u=%.4e  change=%.3f",
                    state.iteration, ev.F, ev.f_o, ev.f_u, change)
        if callback is not None:
            callback(state, ev)
    else:
        reason = "max_iters"
    return OptimResult(problem.design(best[2]), state.history, best[1], weights, reason)
