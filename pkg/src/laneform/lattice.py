"""Microscopic exclusion-lattice model.

Reds hop in +x, blues in -x; both side-step across the corridor with rates
boosted by an oncoming walker of the other colour.  Every rate carries the
size-exclusion factor ``1 - rho`` of the target site.  Rows along ``i`` are
periodic, the two ``j`` walls reflect (no wall-crossing jumps).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .model import ModelParams

logger = logging.getLogger(__name__)

BOX_TOL = 1e-12

EMPTY, RED, BLUE = 0, 1, 2


class LatticeError(RuntimeError):
    pass


@dataclass(frozen=True)
class TransitionRates:
    fwd: np.ndarray | float
    up: np.ndarray | float
    down: np.ndarray | float


@dataclass(frozen=True, eq=False)
class LatticeState:
    r: np.ndarray
    b: np.ndarray
    k: int = 0
    rate_scale: float = 1.0


def _shift_x(a: np.ndarray, n: int) -> np.ndarray:
    """``out[i] = a[i + n]`` with periodic wrap."""
    return np.roll(a, -n, axis=0)


def _shift_y(a: np.ndarray, n: int, fill: float = 0.0) -> np.ndarray:
    """``out[:, j] = a[:, j + n]``, ``fill`` where ``j + n`` leaves the lattice."""
    out = np.full_like(a, fill)
    ny = a.shape[1]
    if n > 0:
        out[:, : ny - n] = a[:, n:]
    elif n < 0:
        out[:, -n:] = a[:, : ny + n]
    else:
        out[:] = a
    return out


def _wall_masks(shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    has_up = np.ones(shape, dtype=bool)
    has_down = np.ones(shape, dtype=bool)
    has_up[:, -1] = False
    has_down[:, 0] = False
    return has_up, has_down


def red_rate_fields(r: np.ndarray, b: np.ndarray, p: ModelParams) -> TransitionRates:
    """Unscaled red jump rates at every site (zero across the walls)."""
    rho = r + b
    b_ahead = _shift_x(b, 1)
    has_up, has_down = _wall_masks(r.shape)
    fwd = (1.0 - _shift_x(rho, 1)) * (1.0 + p.alpha * _shift_x(r, 2))
    down = np.where(has_down, (1.0 - _shift_y(rho, -1)) * (p.gamma0 + p.gamma1 * b_ahead), 0.0)
    up = np.where(has_up, (1.0 - _shift_y(rho, 1)) * (p.gamma0 + p.gamma2 * b_ahead), 0.0)
    return TransitionRates(fwd, up, down)


def blue_rate_fields(r: np.ndarray, b: np.ndarray, p: ModelParams) -> TransitionRates:
    """Unscaled blue jump rates; ``fwd`` points to ``i - 1``."""
    rho = r + b
    r_ahead = _shift_x(r, -1)
    has_up, has_down = _wall_masks(r.shape)
    fwd = (1.0 - _shift_x(rho, -1)) * (1.0 + p.alpha * _shift_x(b, -2))
    up = np.where(has_up, (1.0 - _shift_y(rho, 1)) * (p.gamma0 + p.gamma1 * r_ahead), 0.0)
    down = np.where(has_down, (1.0 - _shift_y(rho, -1)) * (p.gamma0 + p.gamma2 * r_ahead), 0.0)
    return TransitionRates(fwd, up, down)


def _pick(rates: TransitionRates, i: int, j: int) -> TransitionRates:
    return TransitionRates(float(rates.fwd[i, j]), float(rates.up[i, j]), float(rates.down[i, j]))


def rates_red(s: LatticeState, p: ModelParams, i: int, j: int) -> TransitionRates:
    """Red rates out of site ``(i, j)``, before the uniform ``rate_scale``."""
    return _pick(red_rate_fields(s.r, s.b, p), i, j)


def rates_blue(s: LatticeState, p: ModelParams, i: int, j: int) -> TransitionRates:
    return _pick(blue_rate_fields(s.r, s.b, p), i, j)


def scale_rates(p: ModelParams, box_safe: bool = False) -> float:
    """Uniform rate factor keeping the synchronous update a probability update.

    The default bounds a site's total outflow, ``lam * (1 + alpha + 2 (gamma0 +
    max(gamma1, gamma2))) <= 1``, which keeps probabilities nonnegative.
    With ``box_safe`` the factor also bounds the worst-case inflow into an
    empty site (a red from behind and a blue from ahead both arriving), which
    is what ``rho <= 1`` needs for arbitrary states.
    """
    lateral = p.gamma0 + max(p.gamma1, p.gamma2)
    worst = (1.0 + p.alpha) + 2.0 * lateral
    if box_safe:
        worst = max(worst, 2.0 * (1.0 + p.alpha) + 2.0 * lateral)
    return min(1.0, 1.0 / worst)


def _master_update(q: np.ndarray, rates: TransitionRates, lam: float, direction: int) -> np.ndarray:
    # Additions are grouped so that the x-reflection / y-flip symmetries hold
    # bit for bit: (up + down) terms commute exactly.
    fwd, up, down = (lam * rates.fwd, lam * rates.up, lam * rates.down)
    flow_fwd = fwd * q
    flow_up = up * q
    flow_down = down * q
    in_x = _shift_x(flow_fwd, -direction)
    in_y = _shift_y(flow_up, -1) + _shift_y(flow_down, 1)
    out = fwd + (up + down)
    return (q + (in_x + in_y)) - out * q


def master_step(s: LatticeState, p: ModelParams) -> LatticeState:
    """One synchronous step of both master equations with ``s.rate_scale`` applied."""
    lam = s.rate_scale
    r_new = _master_update(s.r, red_rate_fields(s.r, s.b, p), lam, +1)
    b_new = _master_update(s.b, blue_rate_fields(s.r, s.b, p), lam, -1)

    for name, arr in (("r", r_new), ("b", b_new)):
        low = np.unravel_index(np.argmin(arr), arr.shape)
        if arr[low] < -BOX_TOL:
            raise LatticeError(
                f"step {s.k + 1}: {name}[{low[0]},{low[1]}] = {arr[low]:.3e} < 0; "
                f"rate_scale={lam} too large for these parameters"
            )
    rho = r_new + b_new
    high = np.unravel_index(np.argmax(rho), rho.shape)
    if rho[high] > 1.0 + BOX_TOL:
        raise LatticeError(
            f"step {s.k + 1}: rho[{high[0]},{high[1]}] = {rho[high]:.17g} > 1; "
            f"use scale_rates(..., box_safe=True) for this state"
        )
    return LatticeState(r_new, b_new, s.k + 1, lam)


def evolve_lattice(
    s0: LatticeState, p: ModelParams, steps: int, every: int | None = None
) -> list[LatticeState]:
    """Iterate ``master_step``; snapshots every ``every`` steps plus the last one.

    Physical time of snapshot ``s`` is ``s.k * s.rate_scale * p.h``.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    traj = [s0]
    s = s0
    for n in range(1, steps + 1):
        s = master_step(s, p)
        if (every and n % every == 0) or n == steps:
            traj.append(s)
    return traj


def lattice_time(s: LatticeState, p: ModelParams) -> float:
    return s.k * s.rate_scale * p.h


# ---------------------------------------------------------------------------
# stochastic hard-core sampler


def _hard_rates(occ: np.ndarray, i: int, j: int, p: ModelParams, lam: float):
    """Rates (fwd, up, down) for the particle at ``(i, j)`` on a 0/1 configuration."""
    nx, ny = occ.shape
    species = occ[i, j]
    if species == RED:
        ahead, ahead2, other, same = (i + 1) % nx, (i + 2) % nx, BLUE, RED
        g_up, g_down = p.gamma2, p.gamma1
    else:
        ahead, ahead2, other, same = (i - 1) % nx, (i - 2) % nx, RED, BLUE
        g_up, g_down = p.gamma1, p.gamma2
    oncoming = 1.0 if occ[ahead, j] == other else 0.0
    fwd = (occ[ahead, j] == EMPTY) * (1.0 + p.alpha * (occ[ahead2, j] == same))
    up = 0.0
    down = 0.0
    if j + 1 < ny and occ[i, j + 1] == EMPTY:
        up = p.gamma0 + g_up * oncoming
    if j > 0 and occ[i, j - 1] == EMPTY:
        down = p.gamma0 + g_down * oncoming
    return lam * fwd, lam * up, lam * down, ahead


def sample_exclusion(
    occ0: np.ndarray,
    p: ModelParams,
    steps: int,
    seed: int,
    rate_scale: float | None = None,
    every: int = 1,
) -> list[np.ndarray]:
    """Random-sequential hard-core exclusion process.

    Each sweep visits every particle present at the start of the sweep once,
    in a uniformly random order, and moves it forward, up, down or not at all
    with the scaled rates evaluated on the current configuration.  Returns the
    occupancy (0 empty, 1 red, 2 blue) at sweep 0 and every ``every`` sweeps.
    """
    lam = scale_rates(p) if rate_scale is None else rate_scale
    rng = np.random.default_rng(seed)
    occ = np.array(occ0, dtype=np.int8, copy=True)
    if not np.isin(occ, (EMPTY, RED, BLUE)).all():
        raise ValueError("occupancy must contain only 0 (empty), 1 (red), 2 (blue)")
    traj = [occ.copy()]
    for sweep in range(1, steps + 1):
        sites = np.argwhere(occ != EMPTY)
        if len(sites):
            sites = sites[rng.permutation(len(sites))]
            draws = rng.random(len(sites))
        moved = np.zeros(occ.shape, dtype=bool)  # marks a particle's new site; it moves once per sweep
        for (i, j), u in zip(sites, draws if len(sites) else ()):
            if occ[i, j] == EMPTY or moved[i, j]:
                continue
            fwd, up, down, ahead = _hard_rates(occ, i, j, p, lam)
            if u < fwd:
                target = (ahead, j)
            elif u < fwd + up:
                target = (i, j + 1)
            elif u < fwd + up + down:
                target = (i, j - 1)
            else:
                continue
            occ[target] = occ[i, j]
            occ[i, j] = EMPTY
            moved[target] = True
        if sweep % every == 0 or sweep == steps:
            traj.append(occ.copy())
    return traj


def occupancy_from_probabilities(r: np.ndarray, b: np.ndarray, seed: int) -> np.ndarray:
    """Draw one hard configuration with site marginals ``(r, b)``."""
    rng = np.random.default_rng(seed)
    u = rng.random(r.shape)
    occ = np.zeros(r.shape, dtype=np.int8)
    occ[u < r] = RED
    occ[(u >= r) & (u < r + b)] = BLUE
    return occ


def ensemble_mean(
    occ0: np.ndarray, p: ModelParams, steps: int, seeds, rate_scale: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Mean red/blue occupation after ``steps`` sweeps from one fixed configuration."""
    r_acc = np.zeros(occ0.shape)
    b_acc = np.zeros(occ0.shape)
    n = 0
    for seed in seeds:
        final = sample_exclusion(occ0, p, steps, seed, rate_scale, every=max(steps, 1))[-1]
        r_acc += final == RED
        b_acc += final == BLUE
        n += 1
    return r_acc / n, b_acc / n


def ensemble_from_probabilities(
    r0: np.ndarray,
    b0: np.ndarray,
    p: ModelParams,
    steps: int,
    seed: int,
    members: int,
    rate_scale: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Ensemble mean where every member draws its own start from the site marginals.

    This is the estimator to hold against ``master_step`` iterated from
    ``(r0, b0)``.  Member ``k`` uses the ``k``-th child of
    ``SeedSequence(seed)`` for both its initial draw and its dynamics.
    """
    if members < 1:
        raise ValueError("members must be >= 1")
    r_acc = np.zeros(r0.shape)
    b_acc = np.zeros(r0.shape)
    for child in np.random.SeedSequence(seed).spawn(members):
        init_seed, dyn_seed = (int(x) for x in child.generate_state(2))
        occ = occupancy_from_probabilities(r0, b0, init_seed)
        final = sample_exclusion(occ, p, steps, dyn_seed, rate_scale, every=max(steps, 1))[-1]
        r_acc += final == RED
        b_acc += final == BLUE
    return r_acc / members, b_acc / members


def with_scale(s: LatticeState, lam: float) -> LatticeState:
    return replace(s, rate_scale=lam)
