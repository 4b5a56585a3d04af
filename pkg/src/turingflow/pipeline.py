"""Pipeline stages and the run manifest.

Every stage reads its inputs from and writes its outputs to the run
directory, so stages can be re-run independently:

* optimize      -> gamma.csv, history.csv, design_ux.csv, design_uy.csv, design_p.csv
* dehomogenize  -> U.csv, pattern.csv, pattern.pgm
* verify        -> outlets.csv, baseline_outlets.csv, verify_speed.csv
* report        -> summary.csv, gamma.pgm, U.pgm, speed.pgm
"""

from __future__ import annotations

import hashlib
import logging
import platform
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy

from . import __version__
from . import io as fio
from .config import RunConfig, load_config, serialize
from .errors import StageInputError
from .flow import FluidProps, inlet_mass_flow
from .grid import OUTLET, Grid, classify_boundary, outlet_band_mask
from .linalg import backend
from .media import DesignField, porosity_permeability, channel_width
from .optim import FlowProblem, ObjectiveWeights, optimize
from .turing.pattern import binarize, channel_layout, enforce_outlet_bc, open_inlet
from .turing.schedule import prepare_inputs, run_schedule, transfer
from .verify import (BinaryPattern, check_connectivity, fill_orphans, flow_metrics,
                     outlet_mass_flows, resolved_flow, segment_outlets)

logger = logging.getLogger(__name__)

STAGES = ("optimize", "dehomogenize", "verify", "report")
CONFIG_NAME = "config.ini"
MANIFEST_NAME = "manifest.json"


class RunManifest:
    """Append-only run record, rewritten atomically after every change."""

    def __init__(self, run_dir, config: Optional[RunConfig] = None):
        self.path = Path(run_dir) / MANIFEST_NAME
        if self.path.exists():
            import json
            self.data = json.loads(self.path.read_text())
        else:
            self.data = {"versions": _versions(), "stages": [], "summary": []}
        if config is not None:
            self.data["config"] = serialize(config)
            self.data["seed"] = config.rd.seed
        self.save()

    def record(self, stage: str, status: str, seconds: float, outputs=(), error: Optional[str] = None,
               **extra):
        entry = {"stage": stage, "status": status, "seconds": round(seconds, 3),
                 "outputs": sorted(outputs)}
        if error is not None:
            entry["error"] = error
        entry.update(extra)
        self.data["stages"].append(entry)
        self.save()

    def add_summary(self, **row):
        self.data["summary"].append(row)
        self.save()

    def save(self):
        fio.write_json(self.path, self.data)


def _versions():
    return {"turingflow": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "solver": backend()}


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _need(path: Path) -> Path:
    if not path.exists():
        raise StageInputError(f"missing input file {path}; run the producing stage first")
    return path


@dataclass
class Context:
    config: RunConfig
    run_dir: Path
    baseline: bool = False
    monitor: Optional[Callable] = None

    @property
    def fluid(self) -> FluidProps:
        return FluidProps(self.config.fluid.rho, self.config.fluid.eta)

    def problem(self) -> FlowProblem:
        c = self.config
        grid = c.design_grid()
        passive = None
        if c.optim.passive_band:
            # the pattern stage pins this band to gamma = 0 channels
            passive = outlet_band_mask(grid, classify_boundary(grid, c.boundary()), c.rd.inner_line)
        return FlowProblem(grid, c.boundary(), c.media_params(), self.fluid, mode=c.media.mode,
                           stokes=c.flow.stokes, tol=c.flow.tol, frozen=c.optim.frozen,
                           filter_radius=c.optim.filter_radius, passive=passive)


# -- stages ----------------------------------------------------------------------------
def stage_optimize(ctx: Context):
    c = ctx.config
    problem = ctx.problem()
    weights = ObjectiveWeights(c.optim.w_dissipation, c.optim.w_uniformity)
    res = optimize(problem, weights, max_iters=c.optim.max_iters, gamma0=c.optim.gamma0, move=c.optim.move)
    d = ctx.run_dir
    fio.write_field_csv(d / "gamma.csv", res.design.gamma)
    fio.write_table(d / "history.csv", ["iteration", "f_o", "f_u", "F", "max_change"],
                    [(h.iteration, h.f_o, h.f_u, h.F, h.max_change) for h in res.history])
    sol = problem.solve(res.design)
    ux, uy = sol.cell_velocity()
    fio.write_field_csv(d / "design_ux.csv", ux)
    fio.write_field_csv(d / "design_uy.csv", uy)
    fio.write_field_csv(d / "design_p.csv", sol.p)
    outputs = ["gamma.csv", "history.csv", "design_ux.csv", "design_uy.csv", "design_p.csv"]
    extra = {"best_iteration": res.best_iteration, "stop_reason": res.reason,
             "iterations": len(res.history) - 1,
             "f_u_reduction": res.history[0].f_u / res.history[res.best_iteration].f_u}
    return outputs, extra


def load_design(ctx: Context) -> DesignField:
    c = ctx.config
    gamma = fio.read_field_csv(_need(ctx.run_dir / "gamma.csv"))
    grid = c.design_grid()
    if gamma.shape != grid.shape:
        raise StageInputError(f"gamma.csv has shape {gamma.shape}, design grid is {grid.shape}")
    return DesignField(np.clip(gamma, 0.0, 1.0), c.media_params(), c.media.mode)


def dehomogenize(ctx: Context, design: DesignField):
    """RD pattern for a design; returns ``(state, pattern, pins)``."""
    c = ctx.config
    problem = ctx.problem()
    sol = problem.solve(design)
    params = c.media_params()
    coeffs = c.coeffs()
    rd = c.rd_grid()
    tags = classify_boundary(rd, c.boundary())
    pins = enforce_outlet_bc(rd, tags, c.outlet_wc(), params, coeffs, inner_distance=c.rd.inner_line,
                             band=c.rd.pin_band, pin_walls=c.rd.pin_walls, pin_inlet=c.rd.pin_inlet)
    inputs = prepare_inputs(design, sol, rd, design_grid=problem.grid)
    state = run_schedule(inputs, c.schedule(), coeffs, seed=c.rd.seed, dt=c.rd.dt, pins=pins.as_tuple(),
                         monitor=ctx.monitor)
    gam = np.clip(transfer(design.gamma, problem.grid, rd), 0.0, 1.0)
    eps = np.asarray(porosity_permeability(channel_width(gam, params), params.ww)[0])
    raster = binarize(state.U, eps, rd, params.wc_max + params.ww, pins, window_pitches=c.rd.window_pitches)
    raster = open_inlet(raster, rd, tags)
    pattern = fill_orphans(BinaryPattern(raster, rd), tags)
    return state, pattern, pins


def stage_dehomogenize(ctx: Context):
    design = load_design(ctx)
    state, pattern, pins = dehomogenize(ctx, design)
    d = ctx.run_dir
    fio.write_field_csv(d / "U.csv", state.U)
    fio.write_field_csv(d / "pattern.csv", pattern.raster)
    fio.write_pgm(d / "pattern.pgm", fio.pattern_image(pattern.raster))
    extra = {"seed": ctx.config.rd.seed, "gamma_sha256": _sha256(d / "gamma.csv"),
             "pinned_channels": len(pins.channels), "fluid_fraction": float(pattern.raster.mean()),
             "U_min": float(state.U.min()), "U_max": float(state.U.max()),
             "V_min": float(state.V.min()), "V_max": float(state.V.max())}
    return ["U.csv", "pattern.csv", "pattern.pgm"], extra


def resample_nearest(raster: np.ndarray, src: Grid, dst: Grid) -> np.ndarray:
    if src.shape == dst.shape:
        return raster
    iy = np.clip(np.floor(dst.yc / src.dy).astype(int), 0, src.ny - 1)
    ix = np.clip(np.floor(dst.xc / src.dx).astype(int), 0, src.nx - 1)
    return raster[np.ix_(iy, ix)]


def _outlet_rows(mdot, pos, mean):
    return [(k, p * 1e3, m, (m - mean) / mean) for k, (m, p) in enumerate(zip(mdot, pos))]


def stage_verify(ctx: Context):
    c = ctx.config
    d = ctx.run_dir
    vg = c.verify_grid()
    tags = classify_boundary(vg, c.boundary())
    params = c.media_params()
    outputs = []
    extra = {}
    if ctx.baseline:
        h = vg.face_size(tags.outlet_edge)
        open_ = np.flatnonzero(tags[tags.outlet_edge] == OUTLET)
        lo, n = int(open_[0]), int(open_.size)
        intervals = [(a + lo, b + lo) for a, b in channel_layout(n, h, c.outlet_wc(), params.ww)]
    else:
        img = fio.read_pgm(_need(d / "pattern.pgm"))
        rd = c.rd_grid()
        if img.shape != rd.shape:
            raise StageInputError(f"pattern.pgm has shape {img.shape}, RD grid is {rd.shape}")
        raster = resample_nearest(fio.pattern_from_image(img), rd, vg)
        pattern = BinaryPattern(raster, vg, {"source": "pattern.pgm", "sha256": _sha256(d / "pattern.pgm")})
        check_connectivity(pattern, tags)
        intervals = segment_outlets(pattern, tags)
        sol = resolved_flow(pattern, tags, ctx.fluid, params, stokes=c.flow.stokes, tol=c.flow.tol)
        mdot, pos = outlet_mass_flows(sol, intervals, ctx.fluid)
        rep = flow_metrics(mdot, pos)
        m_in = inlet_mass_flow(tags, ctx.fluid)
        fio.write_table(d / "outlets.csv", ["outlet", "x_mm", "mdot_kg_s", "deviation"],
                        _outlet_rows(mdot, pos, rep.mean))
        fio.write_field_csv(d / "verify_speed.csv", sol_speed(sol))
        outputs += ["outlets.csv", "verify_speed.csv"]
        extra["optimized"] = {"n": rep.n, "avg_variation": rep.avg_variation,
                              "max_variation": rep.max_variation,
                              "mass_closure": float(abs(mdot.sum() - m_in) / m_in),
                              "seepage_face_max": sol.residuals["face_max"],
                              "through_solid": sol.residuals["through_solid"]}
    base = resolved_flow(BinaryPattern.all_fluid(vg), tags, ctx.fluid, params, stokes=c.flow.stokes,
                         tol=c.flow.tol, check=False)
    mdot, pos = outlet_mass_flows(base, intervals, ctx.fluid)
    rep = flow_metrics(mdot, pos)
    fio.write_table(d / "baseline_outlets.csv", ["outlet", "x_mm", "mdot_kg_s", "deviation"],
                    _outlet_rows(mdot, pos, rep.mean))
    outputs.append("baseline_outlets.csv")
    extra["baseline"] = {"n": rep.n, "avg_variation": rep.avg_variation, "max_variation": rep.max_variation}
    return outputs, extra


def sol_speed(sol) -> np.ndarray:
    uc, vc = sol.cell_velocity()
    return np.hypot(uc, vc)


def summarize(run_dir: Path):
    """Rows ``(case, n, avg_variation, max_variation, mdot_mean)`` from stored outlet tables."""
    rows = []
    for case, name in (("optimized", "outlets.csv"), ("baseline", "baseline_outlets.csv")):
        path = run_dir / name
        if not path.exists():
            continue
        _, table = fio.read_table(path)
        mdot = np.array([float(r[2]) for r in table])
        rep = flow_metrics(mdot)
        rows.append((case, rep.n, rep.avg_variation, rep.max_variation, rep.mean))
    if not rows:
        raise StageInputError(f"no outlet tables in {run_dir}; run the verify stage first")
    return rows


def stage_report(ctx: Context):
    d = ctx.run_dir
    rows = summarize(d)
    fio.write_table(d / "summary.csv", ["case", "n", "avg_variation", "max_variation", "mdot_mean_kg_s"], rows)
    outputs = ["summary.csv"]
    for src, dst in (("gamma.csv", "gamma.pgm"), ("U.csv", "U.pgm"), ("verify_speed.csv", "speed.pgm")):
        if (d / src).exists():
            fio.write_pgm(d / dst, fio.scale_to_bytes(fio.read_field_csv(d / src)))
            outputs.append(dst)
    return outputs, {"summary": [dict(zip(("case", "n", "avg_variation", "max_variation"), r[:4]))
                                 for r in rows]}


STAGE_FUNCS = {"optimize": stage_optimize, "dehomogenize": stage_dehomogenize,
               "verify": stage_verify, "report": stage_report}


def run_pipeline(config: RunConfig, stages: Sequence[str] = STAGES, run_dir=None, baseline: bool = False,
                 monitor: Optional[Callable] = None) -> dict:
    """Run the requested stages in order; returns the per-stage extras.

    With ``baseline`` the optimize and dehomogenize stages are skipped and
    only the all-fluid verification runs. A failing stage is recorded in the
    manifest before the exception propagates.
    """
    run_dir = Path(run_dir if run_dir is not None else config.output.directory)
    run_dir.mkdir(parents=True, exist_ok=True)
    fio.atomic_write(run_dir / CONFIG_NAME, serialize(config))
    manifest = RunManifest(run_dir, config)
    ctx = Context(config, run_dir, baseline, monitor)
    if baseline:
        stages = [s for s in stages if s not in ("optimize", "dehomogenize")]
    results = {}
    for name in STAGES:
        if name not in stages:
            continue
        t0 = time.perf_counter()
        try:
            outputs, extra = STAGE_FUNCS[name](ctx)
        except Exception as exc:
            manifest.record(name, "failed", time.perf_counter() - t0, error=f"{type(exc).__name__}: {exc}")
            raise
        manifest.record(name, "ok", time.perf_counter() - t0, outputs, **_jsonable(extra))
        if name == "verify":
            for case in ("optimized", "baseline"):
                if case in extra:
                    manifest.add_summary(case=case, **{k: extra[case][k] for k in
                                                      ("n", "avg_variation", "max_variation")})
        results[name] = extra
    return results


def report_only(run_dir) -> dict:
    run_dir = Path(run_dir)
    config = load_config(_need(run_dir / CONFIG_NAME))
    return run_pipeline(config, ["report"], run_dir)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj
