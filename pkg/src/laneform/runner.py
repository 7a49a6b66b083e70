"""Run drivers shared by the CLI and the acceptance checks (no file output here)."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from . import lattice as lat
from .diagnostics import (
    EntropyReport,
    classify_lanes,
    compare_micro_macro,
    entropy_growth_check,
    entropy_report,
    throughput,
)
from .model import Grid, ScenarioConfig, State, make_initial
from .pde import CFLError, stability_dt, step_explicit, step_implicit_entropy
from .stationary import Curve, Profile, match_masses, sweep_curves

logger = logging.getLogger(__name__)

TIMESERIES_HEADER = ("t", "mass_r", "mass_b", "entropy", "dissipation", "max_rho", "min_r", "min_b")


def emission_times(T: float, every: float | None) -> list[float]:
    if T == 0:
        return [0.0]
    if every is None or every >= T:
        return [0.0, T]
    n = int(math.floor(T / every + 1e-9))
    times = [k * every for k in range(n + 1)]
    if T - times[-1] > 1e-9 * T:
        times.append(T)
    else:
        times[-1] = T
    return times


def timeseries_row(s: State, rep: EntropyReport, grid: Grid) -> tuple:
    mr, mb = s.masses(grid)
    return (s.t, mr, mb, rep.E, rep.D, float(s.rho.max()), float(s.r.min()), float(s.b.min()))


@dataclass
class PDERun:
    states: list
    reports: list
    steps: int
    dt_max: float | None
    step_index: list  # cumulative step count at each emitted state
    step_size: list  # dt (or tau) used to reach each emitted state; 0 for the initial one

    @property
    def final(self) -> State:
        return self.states[-1]

    def rows(self, grid: Grid) -> list[tuple]:
        return [timeseries_row(s, r, grid) for s, r in zip(self.states, self.reports)]


def run_pde(cfg: ScenarioConfig, on_emit=None) -> PDERun:
    """Integrate to ``T_end``, emitting at the ``output.every`` cadence.

    Explicit steps are sized per emission interval so every emission time is
    hit exactly and no step exceeds the stability bound.  Implicit steps use
    ``tau`` shrunk the same way.
    """
    p, grid, solver = cfg.params, cfg.grid, cfg.solver
    s = make_initial(cfg.initial, grid)
    times = emission_times(cfg.T_end, cfg.output.every)
    states = [s]
    reports = [entropy_report(s, grid, p)]
    if on_emit:
        on_emit(s, reports[-1])
    dt_max = None
    if solver.scheme == "explicit":
        dt_max = stability_dt(s, p, grid, solver.cfl_safety, solver.variant)
        if solver.dt is not None and solver.dt > dt_max * (1.0 + 1e-12):
            raise CFLError(f"solver.dt={solver.dt:.6g} exceeds the stability bound {dt_max:.6g}")
        limit = solver.dt if solver.dt is not None else dt_max
    else:
        limit = solver.tau
    steps = 0
    step_index, step_size = [0], [0.0]
    for t0, t1 in zip(times[:-1], times[1:]):
        n = max(1, math.ceil((t1 - t0) / limit * (1.0 - 1e-12)))
        dt = (t1 - t0) / n
        for k in range(n):
            if solver.scheme == "explicit":
                s = step_explicit(s, p, solver, grid, dt=dt, dt_max=dt_max)
            else:
                s = step_implicit_entropy(s, p, replace(solver, tau=dt), grid)
        s = State(s.r, s.b, t1)  # pin the clock to the emission time
        steps += n
        step_index.append(steps)
        step_size.append(dt)
        states.append(s)
        reports.append(entropy_report(s, grid, p))
        if on_emit:
            on_emit(s, reports[-1])
        logger.info("t=%.6g steps=%d max_rho=%.6g", t1, steps, float(s.rho.max()))
    return PDERun(states, reports, steps, dt_max, step_index, step_size)


def lattice_rate_scale(cfg: ScenarioConfig) -> float:
    rs = cfg.lattice.rate_scale
    if rs == "outflow":
        return lat.scale_rates(cfg.params)
    if rs == "box_safe":
        return lat.scale_rates(cfg.params, box_safe=True)
    return float(rs)


@dataclass
class LatticeRun:
    states: list  # State with physical time
    rate_scale: float
    steps: list  # master-step index of each state


def run_lattice(cfg: ScenarioConfig, grid: Grid | None = None) -> LatticeRun:
    """Master-equation evolution; one step advances physical time by ``lambda h``."""
    grid = grid or cfg.grid
    p = cfg.params
    lam = lattice_rate_scale(cfg)
    s0 = make_initial(cfg.initial, grid)
    dt = lam * p.h
    n = int(round(cfg.T_end / dt))
    every = None
    if cfg.output.every is not None:
        every = max(1, int(round(cfg.output.every / dt)))
    traj = lat.evolve_lattice(lat.LatticeState(s0.r, s0.b, 0, lam), p, n, every)
    states = [State(ls.r, ls.b, ls.k * dt) for ls in traj]
    return LatticeRun(states, lam, [ls.k for ls in traj])


@dataclass
class SampleRun:
    mean: State
    reference: State  # master equation iterated the same number of steps
    z: np.ndarray  # (2, Nx, Ny) binomial z-scores of the ensemble mean
    sweeps: int
    rate_scale: float


def binomial_z(mean: np.ndarray, prob: np.ndarray, n: int) -> np.ndarray:
    """``(mean - prob) / sqrt(prob (1 - prob) / n)``; cells with zero variance get 0 or inf."""
    var = prob * (1.0 - prob) / n
    diff = mean - prob
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(var > 0, diff / np.sqrt(np.where(var > 0, var, 1.0)), np.where(diff == 0, 0.0, np.inf))
    return z


def run_sample(cfg: ScenarioConfig) -> SampleRun:
    p, grid = cfg.params, cfg.grid
    lam = lattice_rate_scale(cfg)
    s0 = make_initial(cfg.initial, grid)
    sweeps = cfg.lattice.sweeps
    if sweeps is None:
        sweeps = int(round(cfg.T_end / (lam * p.h)))
    n = cfg.lattice.ensemble
    r, b = lat.ensemble_from_probabilities(s0.r, s0.b, p, sweeps, cfg.seed, n, lam)
    ref = lat.evolve_lattice(lat.LatticeState(s0.r, s0.b, 0, lam), p, sweeps)[-1]
    t = sweeps * lam * p.h
    z = np.stack([binomial_z(r, ref.r, n), binomial_z(b, ref.b, n)])
    return SampleRun(State(r, b, t), State(ref.r, ref.b, t), z, sweeps, lam)


@dataclass
class StationaryRun:
    profile: Profile | None
    curves: list
    masses: tuple


def run_stationary(cfg: ScenarioConfig) -> StationaryRun:
    p, grid, opt = cfg.params, cfg.grid, cfg.stationary
    if opt.masses is not None:
        masses = tuple(float(m) for m in opt.masses)
    else:
        masses = make_initial(cfg.initial, grid).masses(grid)
    profile = match_masses(masses[0], masses[1], p, grid, dy=opt.dy)
    curves: list[Curve] = sweep_curves(p, opt.C_values, ds=opt.curve_ds)
    return StationaryRun(profile, curves, masses)


@dataclass
class CompareLevel:
    h: float
    grid: Grid
    rate_scale: float
    lattice_steps: int
    pde_steps: int
    T: float
    l2: float
    sup: float
    lattice: State
    pde: State  # block-averaged onto the lattice grid


def refined_grid(base: Grid, h: float) -> Grid:
    nx = int(round(base.Lx / h))
    ny = int(round(base.Ly / h))
    if abs(nx * h - base.Lx) > 1e-9 * base.Lx or abs(ny * h - base.Ly) > 1e-9 * base.Ly:
        raise CompareSetupError(f"h={h} does not tile the {base.Lx} x {base.Ly} corridor")
    return replace(base, Nx=nx, Ny=ny)


def block_average(a: np.ndarray, m: int) -> np.ndarray:
    nx, ny = a.shape
    return a.reshape(nx // m, m, ny // m, m).mean(axis=(1, 3))


class CompareSetupError(ValueError):
    pass


def run_compare(cfg: ScenarioConfig) -> list[CompareLevel]:
    """Lattice vs resolved explicit PDE at each ``h`` of ``compare.h_levels``.

    ``compare.T_end`` must be a whole number of lattice steps ``lambda h`` at
    every level, so all levels are compared at the same time.
    """
    opt = cfg.compare
    m = opt.pde_refine
    solver = replace(cfg.solver, scheme="explicit")
    levels = []
    for h in opt.h_levels:
        grid = refined_grid(cfg.grid, h)
        fine = replace(grid, Nx=grid.Nx * m, Ny=grid.Ny * m)
        p = replace(cfg.params, h=h)
        sub = replace(cfg, params=p, grid=grid, T_end=opt.T_end, output=replace(cfg.output, every=None))
        lam = lattice_rate_scale(sub)
        n = opt.T_end / (lam * h)
        if abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise CompareSetupError(
                f"compare.T_end={opt.T_end} is {n:.6g} lattice steps at h={h} (lambda={lam:.6g}); "
                "choose a multiple of lambda*h"
            )
        lrun = run_lattice(sub, grid)
        T = lrun.states[-1].t
        prun = run_pde(replace(sub, grid=fine, T_end=T, solver=solver))
        coarse = [State(block_average(s.r, m), block_average(s.b, m), s.t) for s in prun.states]
        rep = compare_micro_macro([lrun.states[0], lrun.states[-1]], [lrun.states[0], coarse[-1]], grid)
        levels.append(
            CompareLevel(h, grid, lrun.rate_scale, lrun.steps[-1], prun.steps, T,
                         float(rep.l2[-1]), float(rep.sup[-1]), lrun.states[-1], coarse[-1])
        )
        logger.info("compare h=%g T=%.6g l2=%.3e sup=%.3e", h, T, rep.l2[-1], rep.sup[-1])
    return levels


def summary(cfg: ScenarioConfig, run: PDERun) -> dict:
    """Final-state diagnostics for the run report."""
    grid = cfg.grid
    first, last = run.states[0], run.final
    m0 = np.array(first.masses(grid))
    m1 = np.array(last.masses(grid))
    lanes = classify_lanes(last, grid, p=cfg.params)
    growth = entropy_growth_check(run.reports) if len(run.reports) >= 3 else None
    return {
        "t_end": last.t,
        "steps": run.steps,
        "dt_max": run.dt_max,
        "classification": lanes.classification,
        "crossing_y": lanes.crossing_y,
        "monotonicity_defect": lanes.monotonicity_defect,
        "overlap": lanes.overlap,
        "mass_drift": (m1 - m0).tolist(),
        "max_entropy_rate": growth.max_rate if growth else None,
        "entropy_growth_ok": growth.ok if growth else None,
        "min_r": float(min(s.r.min() for s in run.states)),
        "min_b": float(min(s.b.min() for s in run.states)),
        "max_rho": float(max(s.rho.max() for s in run.states)),
        "throughput": throughput(last, grid),
    }
