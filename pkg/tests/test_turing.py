import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from hypothesis import given, settings, strategies as st
from scipy import stats

from turingflow.errors import BinarizationFailure, InvalidArgument, NumericalFailure
from turingflow.grid import BoundarySpec, Domain, Segment, build_grid, classify_boundary
from turingflow.media import DesignField, MediaParams
from turingflow.turing import (AnisotropySchedule, Phase, ReactionCoeffs, TuringState, angle_to,
                               binarize, channel_layout, diffusion_matrix, diffusion_tensor,
                               dominant_wavelength, enforce_outlet_bc, fastest_mode, growth_rate,
                               open_inlet, orientation, prepare_inputs, rd_step, reaction,
                               run_schedule, selling, tensor_field)
from turingflow.turing.model import Stepper, default_dt, max_stable_dt
from turingflow.turing.pattern import FLUID, SOLID, local_fraction, pinned_levels
from turingflow.turing.schedule import initial_state, tensors, transfer

C = ReactionCoeffs()


# -- kinetics ----------------------------------------------------------------------------

def dispersion_oracle(c, ratio, ks):
    """Largest real eigenvalue of J - k^2 diag(1, ratio), by dense eigensolves."""
    J = c.jacobian()
    return np.array([np.max(np.linalg.eigvals(J - k * k * np.diag([1.0, ratio])).real) for k in ks])


def test_default_coefficients_frozen():
    J = C.jacobian()
    assert np.trace(J) == pytest.approx(-0.01)
    assert np.linalg.det(J) == pytest.approx(0.005)
    assert C.fixed_point() == pytest.approx((3.0, 2.5))
    k, lam = fastest_mode(C, 1.0, C.diffusion_ratio)
    assert k == pytest.approx(0.1216, abs=5e-4)
    assert lam == pytest.approx(0.0173, abs=5e-4)
    assert C.is_turing()


def test_dispersion_against_eigensolver():
    ks = np.linspace(0, 0.5, 501)
    lam = dispersion_oracle(C, C.diffusion_ratio, ks)
    assert np.allclose(growth_rate(ks, C, 1.0, C.diffusion_ratio), lam, atol=1e-12)
    assert lam[0] < 0 and lam.max() > 0
    assert ks[np.argmax(lam)] == pytest.approx(fastest_mode(C, 1.0, C.diffusion_ratio)[0], abs=1e-3)


def test_instability_needs_fast_inhibitor():
    assert not C.is_turing(ratio=1.0)
    assert not C.is_turing(ratio=10.0)
    assert C.is_turing(ratio=11.0)


def test_reaction_examples():
    Ru, Rv = reaction(0.0, 0.0, C)
    assert Ru == pytest.approx(C.c_u) and Rv == 0.0
    Ru, _ = reaction(100.0, 0.0, C)
    assert Ru == pytest.approx(C.F_max - C.d_u * 100.0)
    assert np.allclose(reaction(*C.fixed_point(), C), 0.0, atol=1e-15)


@pytest.mark.parametrize("kw", [dict(d_u=0.0), dict(d_v=-1.0), dict(F_max=0.0), dict(G_max=-1.0)])
def test_coeff_invariants(kw):
    with pytest.raises(InvalidArgument):
        ReactionCoeffs(**kw)


# -- tensors and stencil ------------------------------------------------------------------

def test_tensor_examples():
    assert np.allclose(diffusion_tensor((0, 1), 1.0, 2.0, 1.0), [[1, 0], [0, 4]])
    s = 1 / np.sqrt(2)
    assert np.allclose(diffusion_tensor((s, s), 1.0, 2.0, 1.0), [[2.5, 1.5], [1.5, 2.5]])
    for d in ((1, 0), (0.6, 0.8), (-s, s)):
        assert np.allclose(diffusion_tensor(d, 2.0, 1.0, 0.5), np.eye(2))


@pytest.mark.parametrize("args", [((np.nan, 1), 1.0, 2.0, 1.0), ((0, 1), 0.0, 2.0, 1.0),
                                  ((0, 1), 1.0, 0.5, 1.0), ((0, 2), 1.0, 2.0, 1.0)])
def test_tensor_errors(args):
    with pytest.raises(InvalidArgument):
        diffusion_tensor(*args)


@settings(max_examples=100, deadline=None)
@given(angle=st.floats(-np.pi, np.pi), w=st.floats(1e-4, 3e-3), l=st.floats(1, 10))
def test_tensor_eigenstructure(angle, w, l):
    d = np.array([np.cos(angle), np.sin(angle)])
    wf = 0.7 / w
    D = diffusion_tensor(d, w, l, wf)
    W = (wf * w) ** 2
    assert np.allclose(D, D.T)
    assert np.allclose(np.linalg.eigvalsh(D), sorted([W, l * l * W]), rtol=1e-10)
    assert np.allclose(D @ d, l * l * W * d, rtol=1e-10)


def test_stagnant_cells_isotropic():
    Dxx, Dxy, Dyy = tensor_field(np.array([0.0, 1.0]), np.array([0.0, 0.0]), 1.0, 3.0, 1.0, 1.0)
    assert (Dxx[0], Dxy[0], Dyy[0]) == (1.0, 0.0, 1.0)
    assert Dxx[1] == 9.0


@settings(max_examples=60, deadline=None)
@given(angle=st.floats(0, np.pi), ratio=st.floats(1, 100))
def test_selling_reconstructs(angle, ratio):
    d = np.array([np.cos(angle), np.sin(angle)])
    D = (ratio - 1) * np.outer(d, d) + np.eye(2)
    wts, off = selling(D[0, 0], D[0, 1], D[1, 1])
    R = sum(wts[k] * np.outer(off[k], off[k]) for k in range(3))
    assert np.all(wts >= 0)
    assert np.allclose(R, D, atol=1e-9 * ratio)


def random_tensors(shape, rng, lmax=10.0):
    ang = rng.uniform(0, np.pi, shape)
    l = rng.uniform(1, lmax, shape)
    return tensor_field(np.cos(ang), np.sin(ang), np.ones(shape), l, 1.0, 1.0)


def test_matrix_is_m_matrix():
    A = diffusion_matrix(*random_tensors((12, 15), np.random.default_rng(0)), 1.0, 1.0)
    assert abs(A - A.T).max() < 1e-12
    off = A - sp.diags(A.diagonal())
    assert off.max() <= 0
    assert np.allclose(A @ np.ones(A.shape[0]), 0, atol=1e-12)


def test_pure_diffusion_conserves_mass():
    A = diffusion_matrix(*random_tensors((20, 20), np.random.default_rng(1)), 1.0, 1.0)
    u = np.zeros(400)
    u[210] = 1.0
    M = (sp.identity(400) + 0.5 * A).tocsc()
    for _ in range(20):
        u = spla.spsolve(M, u)
    assert abs(u.sum() - 1.0) < 1e-12
    assert u.min() >= 0


@pytest.mark.parametrize("angle", [np.pi / 2, np.pi / 6])
def test_heat_kernel_anisotropy(angle):
    # implicit Euler on the graph Laplacian spreads a point seed with covariance 2 D t
    d = np.array([np.cos(angle), np.sin(angle)])
    n = 121
    D = diffusion_tensor(d, 1.0, 5.0, 2.0)
    A = diffusion_matrix(np.full((n, n), D[0, 0]), np.full((n, n), D[0, 1]), np.full((n, n), D[1, 1]),
                         1.0, 1.0)
    u = np.zeros(n * n)
    u[(n // 2) * n + n // 2] = 1.0
    M = (sp.identity(n * n) + 0.05 * A).tocsc()
    lu = spla.splu(M)
    for _ in range(10):
        u = lu.solve(u)
    y, x = np.divmod(np.arange(n * n), n)
    x, y = x - n // 2, y - n // 2
    cov = np.array([[u @ (x * x), u @ (x * y)], [u @ (x * y), u @ (y * y)]])
    assert np.allclose(cov, 2 * D * 0.5, rtol=1e-3)
    ev = np.linalg.eigvalsh(cov)
    assert np.sqrt(ev[1] / ev[0]) == pytest.approx(5.0, rel=1e-3)


# -- time stepping ------------------------------------------------------------------------

def small_state(shape=(16, 20), seed=0, l=4.0):
    grid = build_grid(Domain(float(shape[1]), float(shape[0])), nx=shape[1], ny=shape[0])
    rng = np.random.default_rng(seed)
    Du = random_tensors(shape, rng, l)
    Dv = tuple(C.diffusion_ratio * a for a in Du)
    U, V = initial_state(grid, C, seed)
    return TuringState(grid, U, V, Du, Dv, C)


def test_fixed_point_is_stationary():
    s = small_state()
    U0, V0 = C.fixed_point()
    s.U, s.V = np.full(s.U.shape, U0), np.full(s.V.shape, V0)
    for _ in range(5):
        s = rd_step(s, 1.0)
    assert np.allclose(s.U, U0, rtol=1e-12) and np.allclose(s.V, V0, rtol=1e-12)


def test_step_errors():
    s = small_state()
    with pytest.raises(InvalidArgument):
        rd_step(s, 1.01 * max_stable_dt(C))
    with pytest.raises(InvalidArgument):
        rd_step(s, 0.0)
    s.U[3, 3] = np.nan
    with pytest.raises(NumericalFailure):
        rd_step(s, 1.0)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10 ** 6), scale=st.floats(0, 1), dt=st.floats(0.05, 1.0))
def test_positivity_and_bounds(seed, scale, dt):
    rng = np.random.default_rng(seed)
    s = small_state(seed=seed % 100)
    Umax, Vmax = C.bounds()
    s.U = scale * Umax * rng.uniform(0, 1, s.U.shape)
    s.V = scale * Vmax * rng.uniform(0, 1, s.V.shape)
    U0, V0 = s.U.max(), s.V.max()
    step = dt * max_stable_dt(C)
    for _ in range(10):
        s = rd_step(s, step)
        assert s.U.min() >= 0 and s.V.min() >= 0
        assert s.U.max() <= Umax + U0 and s.V.max() <= Vmax + V0


def test_pinned_cells_hold():
    s = small_state()
    mask = np.zeros(s.U.shape, bool)
    mask[0, :] = True
    s = s.with_fixed(mask, np.where(mask, 0.0, 0), np.where(mask, 2.5, 0))
    for _ in range(3):
        s = rd_step(s, 1.0)
    assert np.all(s.U[0] == 0.0) and np.all(s.V[0] == 2.5)


# -- schedules and runs --------------------------------------------------------------------

def test_schedule_invariants():
    sch = AnisotropySchedule.default()
    assert sch.duration == 1800.0
    assert sch.phases[-1].l_u == 1.0
    assert sum(sch.steps(default_dt(C))) == 1152
    with pytest.raises(InvalidArgument):
        AnisotropySchedule(())
    with pytest.raises(InvalidArgument):
        AnisotropySchedule(((10, 3.0),))
    with pytest.raises(InvalidArgument):
        Phase(0.0, 1.0)
    with pytest.raises(InvalidArgument):
        Phase(10.0, 11.0)
    with pytest.raises(InvalidArgument):
        Phase(10.0, 0.5)


def test_initial_perturbation():
    grid = build_grid(Domain(0.01, 0.01), nx=30, ny=30)
    U, V = initial_state(grid, C, seed=9)
    U0, V0 = C.fixed_point()
    assert np.all(np.abs(U / U0 - 1) <= 0.01) and np.all(np.abs(V / V0 - 1) <= 0.01)
    U2, _ = initial_state(grid, C, seed=9)
    assert np.array_equal(U, U2)


def uniform_inputs(n=100, gamma=0.0, direction=(0, 1)):
    size = n * 0.15e-3
    grid = build_grid(Domain(size, size), nx=n, ny=n)
    dg = build_grid(Domain(size, size), nx=4, ny=4)
    design = DesignField.uniform((4, 4), gamma, MediaParams())
    return prepare_inputs(design, None, grid, direction=direction, design_grid=dg)


def test_run_deterministic():
    inp = uniform_inputs(40)
    sch = AnisotropySchedule(((20, 3.0), (20, 1.0)))
    a = run_schedule(inp, sch, C, seed=4)
    b = run_schedule(inp, sch, C, seed=4)
    c = run_schedule(inp, sch, C, seed=5)
    assert np.array_equal(a.U, b.U) and not np.array_equal(a.U, c.U)
    # phases round up to whole steps
    dt = default_dt(C)
    assert a.t == pytest.approx(dt * sum(sch.steps(dt)))
    assert a.t >= 40.0


def test_isotropic_pattern_is_rotation_invariant():
    inp = uniform_inputs(200)
    s = run_schedule(inp, AnisotropySchedule(((1000, 1.0),)), C, seed=5)
    h = inp.grid.dx
    assert dominant_wavelength(s.U, h) == pytest.approx(1.2e-3, rel=0.25)
    theta, _ = orientation(s.U, h)
    # cells two pitches apart are close to independent
    counts, _ = np.histogram(theta[::16, ::16], bins=8, range=(-np.pi / 2, np.pi / 2))
    assert stats.chisquare(counts).pvalue > 0.05


# -- analysis ------------------------------------------------------------------------------

def test_wavelength_of_sinusoid():
    x = np.arange(256) * 0.1
    X, Y = np.meshgrid(x, x)
    f = np.sin(2 * np.pi * (0.8 * X + 0.6 * Y) / 2.0)
    assert dominant_wavelength(f, 0.1) == pytest.approx(2.0, rel=0.02)


def test_orientation_of_stripes():
    x = np.arange(128) * 1.0
    X, Y = np.meshgrid(x, x)
    f = np.sin(2 * np.pi * X / 8.0)  # stripes run along y
    theta, coh = orientation(f, 1.0)
    inner = (slice(10, -10), slice(10, -10))
    assert np.all(angle_to(theta[inner], (0, 1)) < 1e-6)
    assert np.all(coh[inner] > 0.99)


# -- outlet pinning and binarization --------------------------------------------------------

def outlet_tags(width, h=0.15e-3, height=0.01):
    grid = build_grid(Domain(width, height), nx=int(round(width / h)), ny=int(round(height / h)))
    bc = BoundarySpec(Segment("bottom", 0.0, 0.005, 0.2), Segment("top"))
    return grid, classify_boundary(grid, bc)


@pytest.mark.parametrize("width,count", [(0.2, 166), (0.1, 83)])
def test_outlet_channel_count(width, count):
    grid, tags = outlet_tags(width)
    with pytest.warns(UserWarning):
        pins = enforce_outlet_bc(grid, tags, 0.6e-3, MediaParams(), C)
    assert len(pins.channels) == count == int(np.floor(width / 1.2e-3))
    assert all(b - a == 4 for a, b in pins.channels)
    row = pins.phase[-1]
    assert np.count_nonzero(row == FLUID) == 4 * count


def test_outlet_pins_rows():
    grid, tags = outlet_tags(0.012)
    pins = enforce_outlet_bc(grid, tags, 0.6e-3, MediaParams(), C)
    depth = int(round(3e-3 / grid.dy))
    assert np.all(pins.mask[-depth - 1:])
    assert not pins.mask[:-depth - 1].any()
    levels = pinned_levels(C)
    assert np.all(pins.U[pins.mask & (pins.phase == SOLID)] == levels[SOLID][0])
    assert np.all(pins.U[pins.mask & (pins.phase == FLUID)] == 0.0)
    pins = enforce_outlet_bc(grid, tags, 0.6e-3, MediaParams(), C, band=False, pin_walls=True)
    assert pins.mask[-depth - 1].all() and not pins.mask[-depth].all()
    assert pins.mask[:, 0].all()


def test_outlet_width_range():
    grid, tags = outlet_tags(0.012)
    with pytest.raises(InvalidArgument):
        enforce_outlet_bc(grid, tags, 0.3e-3, MediaParams(), C)


def test_channel_layout_centred():
    ch = channel_layout(100, 0.15e-3, 0.6e-3, 0.6e-3)
    assert len(ch) == 12
    assert ch[0][0] == 100 - ch[-1][1]


def test_open_inlet():
    grid, tags = outlet_tags(0.012)
    raster = np.zeros(grid.shape, np.int8)
    out = open_inlet(raster, grid, tags)
    assert out[0].sum() == np.count_nonzero(tags["bottom"] == 1)
    assert raster.sum() == 0


def test_binarize_constant_field():
    grid = build_grid(Domain(0.01, 0.01), nx=20, ny=20)
    with pytest.raises(BinarizationFailure):
        binarize(np.full(grid.shape, 2.0), 0.5, grid, 2.4e-3)
    with pytest.raises(BinarizationFailure):
        binarize(np.full(grid.shape, np.nan), 0.5, grid, 2.4e-3)


def test_binarize_uniform_porosity():
    inp = uniform_inputs(100)
    s = run_schedule(inp, AnisotropySchedule(((300, 1.0),)), C, seed=2)
    B = binarize(s.U, 0.5, inp.grid, 2.4e-3)
    assert B.mean() == pytest.approx(0.5, abs=0.05)


def test_binarize_tracks_porosity():
    # porosity ramps across the domain; windowed fluid fraction follows it
    rng = np.random.default_rng(0)
    n = 240
    grid = build_grid(Domain(n * 0.15e-3, n * 0.15e-3), nx=n, ny=n)
    x = np.linspace(0, 1, n)
    eps = np.broadcast_to(0.5 + 0.25 * x, (n, n))
    U = rng.normal(size=(n, n))
    from scipy import ndimage
    U = ndimage.gaussian_filter(U, 3)
    B = binarize(U, eps, grid, 2.4e-3)
    win = 8 * 8
    frac = local_fraction(B, win)[::win, ::win].ravel()
    ref = local_fraction(eps, win)[::win, ::win].ravel()
    assert np.corrcoef(frac, ref)[0, 1] > 0.8
    assert np.max(np.abs(B.mean() - eps.mean())) < 0.05
