import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from conftest import EX_I, EX_II
from laneform.model import EntropyState, Grid, ModelParams, SolverConfig, State
from laneform.pde import (
    BoxViolation,
    CFLError,
    ConvergenceError,
    TransformError,
    assemble_G_H,
    assemble_M,
    compute_fluxes,
    entropy_to_primal,
    pde_rhs,
    primal_from_reduced,
    primal_to_entropy,
    reduced_entropy,
    stability_dt,
    step_explicit,
    step_implicit_entropy,
)

GRID = Grid(Lx=1.0, Ly=0.1, Nx=10, Ny=5)
EXPLICIT = {v: SolverConfig(variant=v) for v in ("full", "reduced-sym", "dodge-scaled")}
PARAMS_FOR = {"full": EX_II, "dodge-scaled": EX_II, "reduced-sym": EX_I}


def random_state(rng, shape, hard_fraction=0.1):
    w = rng.dirichlet([1.0, 1.0, 1.0], size=shape)
    r, b = w[..., 0], w[..., 1]
    hard = rng.random(shape) < hard_fraction
    pick = rng.integers(0, 3, size=shape)
    r = np.where(hard, (pick == 0).astype(float), r)
    b = np.where(hard, (pick == 1).astype(float), b)
    return State(r, b)


def smooth_state(grid, r0=0.4, b0=0.3, amp=0.05):
    X, Y = grid.mesh()
    r = r0 + amp * np.sin(2 * np.pi * X) * np.cos(np.pi * Y / grid.Ly)
    b = b0 + amp * np.cos(2 * np.pi * X)
    return State(r, b)


# ---------------------------------------------------------------------------
# fluxes


def test_zero_state_has_zero_flux():
    z = np.zeros(GRID.shape)
    for variant, p in PARAMS_FOR.items():
        f = compute_fluxes(State(z, z), p, variant, GRID)
        for arr in (f.Jr_x, f.Jr_y, f.Jb_x, f.Jb_y):
            assert not arr.any()


def test_constant_state_flux_and_divergence():
    s = State(np.full(GRID.shape, 0.3), np.full(GRID.shape, 0.2))
    f = compute_fluxes(s, EX_I, "reduced-sym", GRID)
    assert np.allclose(f.Jr_x, 0.5 * 0.3, atol=1e-15, rtol=0)
    assert np.allclose(f.Jb_x, -0.5 * 0.2, atol=1e-15, rtol=0)
    dr, db = pde_rhs(s, EX_I, GRID, "reduced-sym")
    assert np.abs(dr).max() <= 1e-12 and np.abs(db).max() <= 1e-12
    out = step_explicit(s, EX_I, EXPLICIT["reduced-sym"], GRID)
    assert np.abs(out.r - s.r).max() <= 1e-15 and np.abs(out.b - s.b).max() <= 1e-15


@given(seed=st.integers(0, 2**32 - 1))
def test_wall_faces_carry_no_flux(seed):
    s = random_state(np.random.default_rng(seed), GRID.shape)
    for variant, p in PARAMS_FOR.items():
        f = compute_fluxes(s, p, variant, GRID)
        for arr in (f.Jr_y, f.Jb_y):
            assert (arr[:, 0] == 0).all() and (arr[:, -1] == 0).all()


@pytest.mark.parametrize("variant", ["full", "dodge-scaled", "reduced-sym"])
def test_red_fluxes_match_term_by_term_oracle(variant):
    rng = np.random.default_rng(hash(variant) % 2**32)
    grid = Grid(Lx=1.0, Ly=0.5, Nx=6, Ny=4)
    p = PARAMS_FOR[variant]
    if variant == "full":
        p = ModelParams(h=0.2, gamma0=0.05, gamma1=0.7, gamma2=0.1, alpha=0.3)
    for _ in range(20):
        s = random_state(rng, grid.shape)
        f = compute_fluxes(s, p, variant, grid)
        for i in range(grid.Nx):
            for j in range(grid.Ny):
                want = oracles.red_x_flux(s.r, s.b, p, i, j, grid.dx)
                assert f.Jr_x[i, j] == pytest.approx(want, abs=1e-14)
                if j + 1 < grid.Ny:
                    want = oracles.red_y_flux(s.r, s.b, p, i, j, grid.dx, grid.dy, variant)
                    assert f.Jr_y[i, j + 1] == pytest.approx(want, abs=1e-14)


@given(seed=st.integers(0, 2**32 - 1))
def test_blue_fluxes_mirror_red_fluxes(seed):
    """Reflecting x and y and swapping species turns blue fluxes into reversed red fluxes."""
    rng = np.random.default_rng(seed)
    grid = Grid(Lx=1.0, Ly=0.5, Nx=7, Ny=4)
    p = ModelParams(h=0.2, gamma0=0.05, gamma1=0.7, gamma2=0.1, alpha=0.3)
    s = random_state(rng, grid.shape)
    m = State(s.b[::-1, ::-1].copy(), s.r[::-1, ::-1].copy())
    for variant in ("full", "dodge-scaled"):
        f = compute_fluxes(s, p, variant, grid)
        g = compute_fluxes(m, p, variant, grid)
        # x-face i (between i, i+1) maps to face Nx-2-i; y-face j maps to Ny-j
        assert np.allclose(f.Jb_x, -np.roll(g.Jr_x[::-1, ::-1], -1, axis=0), atol=1e-14, rtol=0)
        assert np.allclose(f.Jb_y, -g.Jr_y[::-1, ::-1], atol=1e-14, rtol=0)


# ---------------------------------------------------------------------------
# explicit stepping


def test_stability_dt_without_dodging_or_cohesion():
    p = ModelParams(h=0.2, gamma0=0.0, gamma1=0.0, gamma2=0.0, alpha=0.0)
    dx = GRID.dx
    assert stability_dt(None, p, GRID, 0.9) == pytest.approx(0.9 / (2 / dx + p.h / dx**2), rel=1e-15)


def test_doubling_nx_halves_the_drift_limited_step():
    p = ModelParams(h=1e-12, gamma0=0.0, gamma1=0.0, gamma2=0.0)
    coarse = stability_dt(None, p, GRID)
    fine = stability_dt(None, p, replace(GRID, Nx=2 * GRID.Nx))
    assert fine / coarse == pytest.approx(0.5, rel=1e-9)


@given(
    h=st.floats(0.01, 1.0),
    g=st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)),
    alpha=st.floats(0, 0.5),
    safety=st.floats(0.01, 1.0),
)
def test_stability_dt_is_monotone(h, g, alpha, safety):
    p = ModelParams(h=h, gamma0=g[0], gamma1=g[1], gamma2=g[2], alpha=alpha)
    dt = stability_dt(None, p, GRID, safety)
    assert dt > 0
    assert stability_dt(None, replace(p, gamma0=g[0] + 0.1), GRID, safety) <= dt
    assert stability_dt(None, replace(p, alpha=alpha + 0.1), GRID, safety) <= dt
    assert stability_dt(None, p, replace(GRID, Ny=2 * GRID.Ny), safety) <= dt
    assert stability_dt(None, p, GRID, safety / 2) == pytest.approx(dt / 2)


def test_step_above_the_bound_is_refused():
    s = smooth_state(GRID)
    bound = stability_dt(s, EX_II, GRID)
    with pytest.raises(CFLError, match="exceeds the stability bound"):
        step_explicit(s, EX_II, EXPLICIT["full"], GRID, dt=1.01 * bound)
    with pytest.raises(CFLError):
        step_explicit(s, EX_II, replace(EXPLICIT["full"], dt=2 * bound), GRID)


def test_box_violation_names_the_cell():
    r = np.zeros(GRID.shape)
    r[3, 2] = 1.0
    s = State(r, np.zeros(GRID.shape))
    bound = stability_dt(s, EX_II, GRID)
    with pytest.raises(BoxViolation, match=r"r\[\d+,\d+\] = .* leaves the box"):
        step_explicit(s, EX_II, EXPLICIT["full"], GRID, dt=40 * bound, dt_max=100 * bound)


def _random_params(rng, variant, alpha_max):
    if variant == "reduced-sym":
        g = rng.random()
        return ModelParams(h=rng.uniform(0.05, 1), gamma0=rng.random(), gamma1=g, gamma2=g)
    return ModelParams(
        h=rng.uniform(0.05, 1),
        gamma0=rng.random(),
        gamma1=rng.random(),
        gamma2=rng.random(),
        alpha=alpha_max * rng.random(),
    )


def smooth_random_state(rng, grid, vacancy_shift):
    """Low-mode random fields pushed through a softmax; ``vacancy_shift`` << 0 nears a jam."""
    X, Y = grid.mesh()

    def field():
        f = np.zeros(grid.shape)
        for k in range(1, 4):
            for m in range(3):
                phase = rng.uniform(0, 2 * np.pi)
                f += rng.normal() / (k + m) ** 2 * np.cos(2 * np.pi * k * X + phase) * np.cos(np.pi * m * Y / grid.Ly)
        return f

    w = np.exp(np.stack([field(), field(), field() + vacancy_shift]))
    w /= w.sum(axis=0)
    return State(w[0], w[1])


@pytest.mark.parametrize("variant", ["full", "dodge-scaled", "reduced-sym"])
@given(seed=st.integers(0, 2**32 - 1))
def test_step_at_the_bound_stays_in_the_box_without_cohesion(variant, seed):
    rng = np.random.default_rng(seed)
    p = _random_params(rng, variant, alpha_max=0.0)
    s = random_state(rng, GRID.shape, hard_fraction=0.3)
    out = step_explicit(s, p, EXPLICIT[variant], GRID)  # raises on violation
    assert out.r.min() >= 0 and out.b.min() >= 0 and out.rho.max() <= 1


@pytest.mark.parametrize("variant", ["full", "dodge-scaled"])
@given(seed=st.integers(0, 2**32 - 1), shift=st.floats(-8, 1))
def test_cohesive_steps_keep_resolved_data_in_the_box(variant, seed, shift):
    rng = np.random.default_rng(seed)
    grid = Grid()
    p = _random_params(rng, variant, alpha_max=0.5)
    s = smooth_random_state(rng, grid, shift)
    for _ in range(10):
        s = step_explicit(s, p, EXPLICIT[variant], grid)
    assert s.r.min() >= 0 and s.b.min() >= 0 and s.rho.max() <= 1


def test_cohesion_can_empty_a_red_free_cell_on_a_sharp_front():
    # cell 1 holds only blues; its right neighbour is half red
    r = np.array([[0.0], [0.0], [0.5], [0.0]])
    b = np.array([[0.0], [0.95], [0.0], [0.0]])
    p = ModelParams(h=0.5, gamma0=0.0, gamma1=0.0, gamma2=0.0, alpha=0.5)
    grid = Grid(Lx=1.0, Ly=0.25, Nx=4, Ny=1)
    dr, _ = pde_rhs(State(r, b), p, grid, "full")
    assert dr[1, 0] < 0
    with pytest.raises(BoxViolation, match=r"r\[1,0\]"):
        step_explicit(State(r, b), p, EXPLICIT["full"], grid)
    dr0, _ = pde_rhs(State(r, b), replace(p, alpha=0.0), grid, "full")
    assert dr0[1, 0] >= 0


@pytest.mark.parametrize("variant", ["full", "dodge-scaled", "reduced-sym"])
def test_explicit_steps_conserve_mass(variant):
    p = PARAMS_FOR[variant]
    s = random_state(np.random.default_rng(5), GRID.shape, hard_fraction=0.0)
    m0 = np.array(s.masses(GRID))
    for _ in range(1000):
        prev = np.array(s.masses(GRID))
        s = step_explicit(s, p, EXPLICIT[variant], GRID)
        assert np.abs(np.array(s.masses(GRID)) - prev).max() <= 1e-12
    assert np.abs(np.array(s.masses(GRID)) - m0).max() <= 1e-12


def test_mirrored_data_stays_mirrored():
    grid = Grid(Lx=1.0, Ly=0.1, Nx=20, Ny=5)
    p = ModelParams(h=0.3, gamma0=0.1, gamma1=0.2, gamma2=0.2, alpha=0.2)
    X, Y = grid.mesh()
    r = 0.3 + 0.1 * np.sin(2 * np.pi * X) ** 2 * (1 + Y)
    s = State(r, r[::-1].copy())  # r(x, y) = b(1 - x, y)
    for variant in ("full", "reduced-sym"):
        q = p if variant == "full" else replace(p, alpha=0.0)
        t = s
        for _ in range(500):
            t = step_explicit(t, q, EXPLICIT[variant], grid)
            assert np.abs(t.r - t.b[::-1]).max() <= 1e-10


@pytest.mark.slow
def test_lane_parameters_run_bounded_at_the_bound():
    """10^5 steps at dt = dt_max on the 100x10 corridor."""
    grid = Grid()
    s = smooth_state(grid, 0.45, 0.45, 0.04)
    cfg = EXPLICIT["full"]
    dt = stability_dt(s, EX_II, grid, cfg.cfl_safety)
    for _ in range(100_000):
        s = step_explicit(s, EX_II, cfg, grid, dt=dt, dt_max=dt)
    assert np.isfinite(s.r).all() and np.isfinite(s.b).all()
    assert s.box_violation() <= 1e-12


# ---------------------------------------------------------------------------
# entropy variables


def test_entropy_variables_example():
    quarter = np.array([[0.25]])
    ut, vt = reduced_entropy(quarter, quarter)
    want = math.log(0.25) - 0.5 * math.log(0.5)
    assert ut[0, 0] == pytest.approx(want, abs=1e-15) and vt[0, 0] == ut[0, 0]
    grid = Grid(Lx=1.0, Ly=0.1, Nx=4, Ny=1)
    e = primal_to_entropy(State(np.full(grid.shape, 0.25), np.full(grid.shape, 0.25)), grid, h=0.3)
    x = grid.xc
    assert np.allclose(e.u[:, 0], want - 2 * x / 0.3, atol=1e-14, rtol=0)
    assert np.allclose(e.v[:, 0], want + 2 * x / 0.3, atol=1e-14, rtol=0)


def test_equal_entropy_variables_give_equal_densities():
    r, b = primal_from_reduced(np.array([0.3, -2.0, 7.0]), np.array([0.3, -2.0, 7.0]))
    assert np.array_equal(r, b)


def test_round_trip_on_ten_thousand_interior_states():
    rng = np.random.default_rng(11)
    grid = Grid(Lx=1.0, Ly=0.1, Nx=100, Ny=100)
    worst = 0.0
    for h in (1.0, 0.1, 0.01):
        s = random_state(rng, grid.shape, hard_fraction=0.0)
        back = entropy_to_primal(primal_to_entropy(s, grid, h), grid, h)
        worst = max(worst, np.abs(back.r - s.r).max(), np.abs(back.b - s.b).max())
    assert worst <= 1e-12


@given(
    u=st.floats(-15, 15),
    v=st.floats(-15, 15),
    x=st.floats(0, 1),
    h=st.sampled_from([1.0, 0.3, 0.1, 0.03]),
)
def test_inverse_map_matches_high_precision_quadratic(u, v, x, h):
    grid = Grid(Lx=1.0, Ly=0.1, Nx=1, Ny=1)
    # place the single cell centre at x by shifting the variables instead
    shift = 2 * (x - grid.xc[0]) / h
    e = EntropyState(np.array([[u + shift]]), np.array([[v - shift]]), grid, h)
    s = entropy_to_primal(e)
    r, b = oracles.inverse_map_quadratic(u, v, x, h)
    assert s.r[0, 0] == pytest.approx(r, rel=1e-11, abs=1e-300)
    assert s.b[0, 0] == pytest.approx(b, rel=1e-11, abs=1e-300)


@given(u=st.floats(-15, 15), v=st.floats(-15, 15))
def test_inverse_map_lands_inside_the_domain(u, v):
    r, b = primal_from_reduced(np.array([u]), np.array([v]))
    assert r[0] > 0 and b[0] > 0 and r[0] + b[0] < 1


def test_transform_rejects_states_outside_the_domain():
    r = np.full((3, 2), 0.2)
    r[1, 1] = -0.1
    with pytest.raises(TransformError, match=r"r\[1,1\]"):
        reduced_entropy(r, np.full((3, 2), 0.2))
    with pytest.raises(TransformError, match=r"1 - rho at \[0,0\]"):
        reduced_entropy(np.full((3, 2), 0.7), np.full((3, 2), 0.7))
    with pytest.raises(TransformError):
        primal_from_reduced(np.array([np.inf]), np.array([0.0]))


def test_boundary_values_within_the_guard_band_are_clipped_inward():
    r = np.array([[0.0, 0.5]])
    b = np.array([[0.5, 0.5]])
    ut, vt = reduced_entropy(r, b)
    assert np.isfinite(ut).all() and np.isfinite(vt).all()


# ---------------------------------------------------------------------------
# mobility matrices


def _sample_domain(rng, n):
    w = rng.dirichlet([1.0, 1.0, 1.0], size=n)
    return State(w[:, :1], w[:, 1:2])


def test_G_is_positive_semidefinite_on_ten_thousand_samples():
    rng = np.random.default_rng(12)
    s = _sample_domain(rng, 10_000)
    for p in (EX_I, ModelParams(h=0.1, gamma0=1e-4, gamma1=0.5, gamma2=0.5)):
        G = assemble_G_H(s, p).G
        assert np.allclose(G, np.swapaxes(G, -1, -2), atol=0, rtol=0)
        assert np.linalg.eigvalsh(G).min() >= -1e-12


def test_G_and_H_vanish_as_expected():
    z = np.zeros((2, 2))
    m = assemble_G_H(State(z, z), EX_I)
    assert not m.G.any() and not m.H.any()
    q = np.full((2, 2), 0.3)
    assert not assemble_G_H(State(q, q), EX_I).H.any()


def _continuous_fluxes(r, b, grads, p):
    """Reduced symmetric fluxes at a point from (r, b) and their gradients."""
    rx, ry, bx, by = grads
    h, g0, g = p.h, p.gamma0, p.gamma
    A = 1 - r - b
    rhox, rhoy = rx + bx, ry + by
    rby = ry * b + r * by
    cross = 2 * g * (A * rby + r * b * rhoy)
    return np.array(
        [
            r * A - h / 2 * (A * rx + r * rhox),
            -h / 2 * (cross + 2 * g0 * (A * ry + r * rhoy)),
            -b * A - h / 2 * (A * bx + b * rhox),
            -h / 2 * (cross + 2 * g0 * (A * by + b * rhoy)),
        ]
    )


def _entropy_gradient(r, b, grads, h):
    rx, ry, bx, by = grads
    A = 1 - r - b
    rhox, rhoy = rx + bx, ry + by
    return np.array(
        [
            rx / r + 0.5 * rhox / A - 2 / h,
            ry / r + 0.5 * rhoy / A,
            bx / b + 0.5 * rhox / A + 2 / h,
            by / b + 0.5 * rhoy / A,
        ]
    )


@given(seed=st.integers(0, 2**32 - 1))
def test_G_form_and_M_form_reproduce_the_fluxes(seed):
    rng = np.random.default_rng(seed)
    p = ModelParams(h=rng.uniform(0.05, 1), gamma0=rng.random(), gamma1=0.3, gamma2=0.3)
    w = rng.dirichlet([1.0, 1.0, 1.0])
    r, b = float(w[0]), float(w[1])
    grads = rng.normal(size=4)
    J = _continuous_fluxes(r, b, grads, p)
    dw = _entropy_gradient(r, b, grads, p.h)
    s = State(np.array([[r]]), np.array([[b]]))
    m = assemble_G_H(s, p)
    scale = 1 + np.abs(J).max() + np.abs(dw).max()
    assert np.abs(m.G[0, 0] @ dw + m.H[0, 0] + J).max() <= 1e-13 * scale
    M = assemble_M(s, p).M[0, 0]
    rx, ry, bx, by = grads
    extra = np.array([r / 2 * (rx + bx), p.gamma0 * r * (ry + by), b / 2 * (rx + bx), p.gamma0 * b * (ry + by)])
    assert np.abs(p.h / 2 * (M @ dw + extra) + J).max() <= 1e-13 * scale


def test_M_is_symmetric_with_nonnegative_diagonal():
    s = _sample_domain(np.random.default_rng(13), 2000)
    M = assemble_M(s, EX_I).M
    assert np.array_equal(M, np.swapaxes(M, -1, -2))
    assert (np.diagonal(M, axis1=-2, axis2=-1) >= 0).all()
    z = assemble_M(State(np.zeros((3, 1)), np.full((3, 1), 0.4)), EX_I).M
    assert not z[..., :2, :].any() and not z[..., :, :2].any()


# ---------------------------------------------------------------------------
# implicit entropy scheme

IMPLICIT = SolverConfig(scheme="implicit-entropy", variant="reduced-sym", fp_tol=1e-15)
SMALL = Grid(Lx=1.0, Ly=0.2, Nx=20, Ny=4)


def test_constant_state_is_a_fixed_point_without_regularisation():
    s = State(np.full(SMALL.shape, 0.35), np.full(SMALL.shape, 0.25))
    out = step_implicit_entropy(s, EX_I, replace(IMPLICIT, tau=1e-2, reg_weight=0.0, fp_tol=1e-12), SMALL)
    assert np.abs(out.r - s.r).max() <= 1e-12 and np.abs(out.b - s.b).max() <= 1e-12


def test_implicit_and_explicit_steps_agree_to_second_order():
    s = smooth_state(SMALL)
    diffs = []
    for tau in (1e-5, 5e-6, 2.5e-6):
        cfg = replace(IMPLICIT, tau=tau)
        a = step_implicit_entropy(s, EX_I, cfg, SMALL)
        e = step_explicit(s, EX_I, replace(cfg, scheme="explicit"), SMALL, dt=tau)
        diffs.append(max(np.abs(a.r - e.r).max(), np.abs(a.b - e.b).max()))
    assert diffs[0] / diffs[1] >= 3.5 and diffs[1] / diffs[2] >= 3.5


def test_implicit_steps_stay_strictly_inside_and_drift_by_at_most_the_regulariser():
    X, Y = SMALL.mesh()
    r = 0.5 + 0.49 * np.sin(2 * np.pi * X) ** 2 * Y / SMALL.Ly
    b = 1e-6 + 0.4 * (1 - r) * np.cos(np.pi * X) ** 2
    s = State(np.minimum(r, 0.9), b)
    tau = 1e-2
    cfg = replace(IMPLICIT, tau=tau, fp_tol=1e-12)
    dA = SMALL.cell_area
    for _ in range(10):
        out = step_implicit_entropy(s, EX_I, cfg, SMALL)
        assert out.r.min() > 0 and out.b.min() > 0 and out.rho.max() < 1
        e = primal_to_entropy(out, SMALL, EX_I.h)
        for new, old, w in ((out.r, s.r, e.u), (out.b, s.b, e.v)):
            drift = abs((new - old).sum()) * dA
            assert drift <= tau**2 * np.abs(w).sum() * dA * (1 + 1e-8) + 1e-15
        s = out


def test_implicit_scheme_needs_the_symmetric_reduced_model():
    with pytest.raises(ValueError, match="reduced-sym"):
        step_implicit_entropy(smooth_state(SMALL), EX_II, IMPLICIT, SMALL)


def test_implicit_scheme_reports_non_convergence():
    cfg = replace(IMPLICIT, tau=1e-2, fp_maxiter=1, fp_tol=1e-300)
    with pytest.raises(ConvergenceError, match="did not converge in 1 iterations"):
        step_implicit_entropy(smooth_state(SMALL), EX_I, cfg, SMALL)
