"""Acceptance criteria, one test (or group) per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line with the
measured values. The scaled experiment runs once per module and feeds
criteria 7 and 11; the full-size stretch run (criterion 8) only runs when
``TURINGFLOW_STRETCH=1``.
"""

import dataclasses
import json
import os
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

import conftest
from conftest import manifold_case
from test_turing import uniform_inputs
from turingflow.cli import main
from turingflow.config import load_config
from turingflow.flow import solve_flow
from turingflow.grid import BoundarySpec, Domain, Segment, build_grid
from turingflow.media import MediaParams, channel_width, inverse_permeability_new, porosity_permeability
from turingflow.optim import FlowProblem, ObjectiveWeights, fd_gradient
from turingflow.pipeline import Context, dehomogenize, load_design, run_pipeline
from turingflow.turing import (AnisotropySchedule, Phase, ReactionCoeffs, TuringState, angle_to,
                               dominant_wavelength, orientation, run_schedule)
from turingflow.turing.model import Stepper, default_dt
from turingflow.turing.schedule import initial_state, tensors
from turingflow.verify import dof_scaling_report

ROOT = Path(__file__).resolve().parents[1]
C = ReactionCoeffs()


def verdict(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    conftest.VERDICTS.append(line)
    assert ok, line


def timed(f, *args, **kw):
    t0 = time.perf_counter()
    out = f(*args, **kw)
    return out, time.perf_counter() - t0


# -- 1. Poiseuille -----------------------------------------------------------------------

def test_c1_poiseuille():
    def run():
        grid = build_grid(Domain(0.002, 0.04), nx=40, ny=200)
        bc = BoundarySpec(Segment("bottom", 0.0, None, 0.2), Segment("top"))
        sol = solve_flow(grid, bc, np.zeros(grid.shape))
        _, vc = sol.cell_velocity()
        row = vc[int(0.75 * grid.ny)]
        return 0.5 * (row[19] + row[20]) / 0.2
    ratio, sec = timed(run)
    err = abs(ratio / 1.5 - 1)
    verdict(1, err <= 0.02 and sec < 10,
            f"centerline/mean = {ratio:.4f} (error {err:.2%}, tol 2%), 40 cells across, {sec:.1f} s")


# -- 2. Darcy ----------------------------------------------------------------------------

def test_c2_darcy():
    def run():
        grid = build_grid(Domain(0.01, 0.1), nx=4, ny=40)
        bc = BoundarySpec(Segment("bottom", 0.0, None, 0.2), Segment("top"), wall_slip=True)
        sol = solve_flow(grid, bc, np.full(grid.shape, 1e8))
        return -np.gradient(sol.p.mean(axis=1), grid.dy)[5:-5], sol.fluid.eta
    (dpdy, eta), sec = timed(run)
    expected = eta * 1e8 * 0.2
    err = np.max(np.abs(dpdy / expected - 1))
    verdict(2, err < 0.01 and sec < 10,
            f"dp/dx = {dpdy.mean():.6g} Pa/m vs eta*alpha*u = {expected:.6g} (max error {err:.2e}), {sec:.2f} s")


# -- 3. media identity -------------------------------------------------------------------

def test_c3_media_identity():
    p = MediaParams()
    g = np.random.default_rng(3).uniform(0, 1, 1000)
    kap = porosity_permeability(channel_width(g, p), p.ww)[1]
    dev = np.max(np.abs(inverse_permeability_new(g, p) * kap - 1))
    e0, k0 = porosity_permeability(channel_width(0.0, p), p.ww)
    e1, k1 = porosity_permeability(channel_width(1.0, p), p.ww)
    ends = (abs(k0 / 1.5e-8 - 1) < 1e-12 and abs(k1 / 2.025e-7 - 1) < 1e-12
            and abs(e0 - 0.5) < 1e-12 and abs(e1 - 0.75) < 1e-12)
    verdict(3, dev < 1e-12 and ends,
            f"max |alpha*kappa - 1| = {dev:.1e} over 1000 samples; kappa = {float(k0):.4g}, {float(k1):.4g}; "
            f"eps = {float(e0):.4g}, {float(e1):.4g}")


# -- 4. adjoint gradient -----------------------------------------------------------------

def test_c4_adjoint_vs_fd():
    def run():
        grid, bc = manifold_case()
        problem = FlowProblem(grid, bc, MediaParams(length=0.04), tol=1e-11)
        gamma = np.random.default_rng(7).uniform(0.1, 0.9, grid.shape)
        w = ObjectiveWeights()
        ev = problem.evaluate(problem.design(gamma), w)
        cells = np.linspace(0, grid.ncells - 1, 12).astype(int)
        fd = fd_gradient(problem, gamma, w, cells)
        return np.abs(ev.grad.ravel()[cells] - fd) / np.abs(fd)
    rel, sec = timed(run)
    verdict(4, rel.max() < 1e-3 and rel.size >= 10 and sec < 300,
            f"max relative error {rel.max():.2e} over {rel.size} cells (40x20 grid), {sec:.1f} s")


# -- 5, 6. pattern scale and orientation ---------------------------------------------------

def test_c5_wavelength():
    def run():
        inp = uniform_inputs(200)
        s = run_schedule(inp, AnisotropySchedule(((1000, 1.0),)), C, seed=5)
        return dominant_wavelength(s.U, inp.grid.dx)
    lam, sec = timed(run)
    err = lam / 1.2e-3 - 1
    verdict(5, abs(err) <= 0.25 and sec < 300,
            f"wavelength {lam * 1e3:.4f} mm vs pitch 1.2 mm ({err:+.1%}, tol 25%), {sec:.1f} s")


def test_c6_orientation():
    inp = uniform_inputs(200, direction=(0, 1))
    Du, Dv = tensors(inp, Phase(300, 10.0), C)
    U, V = initial_state(inp.grid, C, 1)
    dt = default_dt(C)
    stepper = Stepper(TuringState(inp.grid, U, V, Du, Dv, C), dt)
    for _ in range(int(300 / dt)):
        U, V = stepper.step(U, V)
    theta, _ = orientation(U, inp.grid.dx)
    frac = float(np.mean(np.degrees(angle_to(theta, (0, 1))) <= 15))
    verdict(6, frac >= 0.8, f"{frac:.1%} of cells within 15 deg of the flow direction (need 80%)")


# -- 7. scaled experiment ------------------------------------------------------------------

@pytest.fixture(scope="module")
def scaled_run(tmp_path_factory):
    run_dir = tmp_path_factory.mktemp("scaled")
    cfg = load_config(ROOT / "configs" / "scaled.ini")
    results, sec = timed(run_pipeline, cfg, run_dir=run_dir)
    return cfg, run_dir, results["verify"], sec


def test_c7_optimized_uniformity(scaled_run):
    _, _, res, _ = scaled_run
    o = res["optimized"]
    verdict("7a", o["avg_variation"] <= 0.05 and o["max_variation"] <= 0.15,
            f"optimized n={o['n']}: avg {o['avg_variation']:.2%} (<= 5%), max {o['max_variation']:.2%} (<= 15%)")


def test_c7_baseline_nonuniform(scaled_run):
    _, _, res, _ = scaled_run
    b = res["baseline"]
    verdict("7b", b["max_variation"] >= 0.30,
            f"baseline n={b['n']}: avg {b['avg_variation']:.2%}, max {b['max_variation']:.2%} (>= 30%)")


def test_c7_runtime(scaled_run):
    _, _, res, sec = scaled_run
    verdict("7c", sec < 3600, f"full scaled pipeline {sec / 60:.1f} min (< 60 min), "
                              f"{res['optimized']['n']} outlets")


# -- 8. full-size stretch ------------------------------------------------------------------

def test_c8_full_size_stretch(tmp_path):
    if os.environ.get("TURINGFLOW_STRETCH") != "1":
        line = "criterion 8: SKIP  stretch goal; set TURINGFLOW_STRETCH=1 to run the 200 x 100 mm case"
        conftest.VERDICTS.append(line)
        pytest.skip(line)
    cfg = load_config(ROOT / "configs" / "experiment1.ini")
    results, sec = timed(run_pipeline, cfg, run_dir=tmp_path)
    o, b = results["verify"]["optimized"], results["verify"]["baseline"]
    ok = o["avg_variation"] <= 0.03 and b["max_variation"] >= 0.40
    line = (f"criterion 8: {'PASS' if ok else 'FAIL (non-blocking)'}  optimized n={o['n']} avg "
            f"{o['avg_variation']:.2%} (<= 3%), baseline max {b['max_variation']:.2%} (>= 40%), {sec / 60:.1f} min")
    print(line)
    conftest.VERDICTS.append(line)
    if not ok:
        pytest.xfail(line)


# -- 9. degrees of freedom -----------------------------------------------------------------

def test_c9_dof_scaling():
    rows = dof_scaling_report([20, 40, 80], Domain(0.1, 0.05), (50, 100))
    design = [r["design_cells"] for r in rows]
    verify = [r["verify_cells"] for r in rows]
    ok = len(set(design)) == 1 and all(a < b for a, b in zip(verify, verify[1:]))
    verdict(9, ok, f"design cells {design}, verification cells {verify} for 20/40/80 outlets")


# -- 10. reproducibility -------------------------------------------------------------------

def _strip_timing(manifest):
    for s in manifest["stages"]:
        s.pop("seconds", None)
    return manifest


def test_c10_reproducible(tmp_path):
    run = tmp_path / "run"
    cfg = str(ROOT / "configs" / "small.ini")
    snapshots = []
    for _ in range(2):
        assert main(["pipeline", cfg, "--output-dir", str(run), "--seed", "11"]) == 0
        snapshots.append({p.name: p.read_bytes() for p in sorted(run.iterdir())})
        shutil.rmtree(run)
    a, b = snapshots
    same = [n for n in a if n != "manifest.json" and a[n] == b.get(n)]
    differ = sorted(set(a) ^ set(b) | {n for n in a if n != "manifest.json" and a[n] != b.get(n)})
    man_same = _strip_timing(json.loads(a["manifest.json"])) == _strip_timing(json.loads(b["manifest.json"]))
    verdict(10, not differ and man_same,
            f"{len(same)} artifacts byte-identical across two seeded runs; differing: {differ or 'none'}; "
            f"manifest equal apart from stage timings: {man_same}")


# -- 11. bounds over a long run ------------------------------------------------------------

def test_c11_bounds(scaled_run):
    cfg, run_dir, _, _ = scaled_run
    coeffs = cfg.coeffs()
    U0, V0 = coeffs.fixed_point()
    Ucap = coeffs.F_max / coeffs.d_u + 1.01 * U0
    Vcap = coeffs.G_max / coeffs.d_v + 1.01 * V0
    sched = cfg.schedule()
    dt = sched.duration / 10_000
    while sum(sched.steps(dt)) < 10_000:  # phases round to whole steps
        dt *= 0.9999
    cfg = cfg.replace(rd=dataclasses.replace(cfg.rd, dt=dt))
    stats = {"steps": 0, "violations": 0, "U": [np.inf, -np.inf], "V": [np.inf, -np.inf]}

    def monitor(step, t, U, V):
        lo_u, hi_u, lo_v, hi_v = U.min(), U.max(), V.min(), V.max()
        stats["steps"] = step
        stats["violations"] += int(lo_u < 0) + int(hi_u > Ucap) + int(lo_v < 0) + int(hi_v > Vcap)
        stats["U"] = [min(stats["U"][0], lo_u), max(stats["U"][1], hi_u)]
        stats["V"] = [min(stats["V"][0], lo_v), max(stats["V"][1], hi_v)]

    ctx = Context(cfg, run_dir, monitor=monitor)
    dehomogenize(ctx, load_design(ctx))
    verdict(11, stats["steps"] >= 10_000 and stats["violations"] == 0,
            f"{stats['steps']} steps (dt {dt:g}), {stats['violations']} violations; "
            f"U in [{stats['U'][0]:.3g}, {stats['U'][1]:.4g}] <= {Ucap:.4g}, "
            f"V in [{stats['V'][0]:.3g}, {stats['V'][1]:.4g}] <= {Vcap:.4g}")
