"""Entropy, dissipation, lane classification and micro/macro comparison."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import xlogy

from . import stencils as st
from .model import Grid, ModelParams, State

SUPPORT_TOL = 1e-6
MONO_TOL = 1e-8
CONTRAST_TOL = 1e-6


@dataclass(frozen=True)
class EntropyReport:
    E: float
    D: float
    t: float
    components: dict = field(default_factory=dict)


def entropy_density_terms(s: State, grid: Grid, h: float) -> dict[str, np.ndarray]:
    """Pointwise integrands; ``x log x`` is continued by 0 at ``x = 0``."""
    r, b = s.r, s.b
    vac = 1.0 - (r + b)
    X, _ = grid.mesh()
    return {
        "r": xlogy(r, r) - r,
        "b": xlogy(b, b) - b,
        "vacancy": 0.5 * (xlogy(vac, vac) - vac),
        "potential": (2.0 / h) * (-X * r + X * b),
    }


def entropy(s: State, grid: Grid, h: float) -> EntropyReport:
    """Midpoint-rule entropy with its four contributions; ``D`` is left at 0."""
    dA = grid.cell_area
    comps = {k: float(v.sum() * dA) for k, v in entropy_density_terms(s, grid, h).items()}
    return EntropyReport(E=sum(comps.values()), D=0.0, t=s.t, components=comps)


def dissipation_constant(p: ModelParams) -> float:
    return 0.5 * p.h * min(0.5, p.gamma0)


def dissipation(s: State, grid: Grid, p: ModelParams, which: str = "D1") -> float:
    """Quadrature of the ``D0`` or ``D1`` integrand over cell faces.

    Gradients are face differences (the flux stencils); the ``(1-rho)``
    weight is the face mean of ``(1-rho)`` for D0 and of ``(1-rho)^2`` for D1.
    """
    if which not in ("D0", "D1"):
        raise ValueError(f"which must be 'D0' or 'D1' (got {which!r})")
    r = np.maximum(s.r, 0.0)
    b = np.maximum(s.b, 0.0)
    vac = np.clip(1.0 - (r + b), 0.0, None)
    weight = vac if which == "D0" else vac * vac
    sr, sb, sv = np.sqrt(r), np.sqrt(b), np.sqrt(vac)
    rho = r + b
    dA = grid.cell_area

    def integrate(diff, mean):
        return (
            mean(weight) * (diff(sr) ** 2 + diff(sb) ** 2) + diff(sv) ** 2 + diff(rho) ** 2
        ).sum() * dA

    total = integrate(lambda q: st.diff_x(q, grid.dx), st.mean_x)
    total += integrate(lambda q: st.diff_y(q, grid.dy), st.mean_y)
    return float(dissipation_constant(p) * total)


def entropy_report(s: State, grid: Grid, p: ModelParams, which: str = "D1") -> EntropyReport:
    rep = entropy(s, grid, p.h)
    return EntropyReport(rep.E, dissipation(s, grid, p, which), s.t, rep.components)


@dataclass(frozen=True)
class GrowthCheck:
    ok: bool
    C: float
    max_rate: float
    rates: np.ndarray


def entropy_growth_check(
    reports: Sequence[EntropyReport], rtol: float = 0.05, atol: float = 1e-9
) -> GrowthCheck:
    """Test ``dE/dt + D <= C`` on a sampled run and that the bound is not drifting up.

    ``g_k = (E_k - E_{k-1}) / dt + (D_k + D_{k-1}) / 2``.  ``C`` is the
    smallest admissible constant, ``max(0, max g)``.  The check fails when
    the second half of the run exceeds the first-half maximum (clamped at 0)
    by more than ``rtol * max|g| + atol``, i.e. when the rate trends upward.
    """
    if len(reports) < 3:
        raise ValueError("entropy_growth_check needs at least 3 samples")
    t = np.array([r.t for r in reports], dtype=float)
    E = np.array([r.E for r in reports], dtype=float)
    D = np.array([r.D for r in reports], dtype=float)
    dt = np.diff(t)
    if (dt <= 0).any():
        raise ValueError("sample times must be strictly increasing")
    g = np.diff(E) / dt + 0.5 * (D[1:] + D[:-1])
    half = len(g) // 2
    early = max(float(g[: max(half, 1)].max()), 0.0)
    late = float(g[half:].max())
    scale = float(np.abs(g).max())
    finite = bool(np.isfinite(g).all()) and bool((D >= -1e-10).all())
    ok = finite and late <= early + rtol * scale + atol
    return GrowthCheck(ok=ok, C=max(0.0, float(g.max())), max_rate=float(g.max()), rates=g)


# ---------------------------------------------------------------------------
# lanes


@dataclass(frozen=True)
class LaneTolerances:
    support_tol: float = SUPPORT_TOL
    mono_tol: float = MONO_TOL
    contrast_tol: float = CONTRAST_TOL  # below this max|rbar - bbar| the species are not separated


@dataclass(frozen=True)
class LaneReport:
    classification: str  # strong | weak | none
    crossing_y: float | None
    monotonicity_defect: float
    overlap: float
    support_gap: float | None


def _unique_crossing(d: np.ndarray) -> int | None:
    """Index ``k`` of the single ``+ -> -`` change of ``d`` between samples ``k`` and ``k+1``."""
    signs = np.sign(d)
    nz = np.flatnonzero(signs)
    if len(nz) < 2:
        return None
    seq = signs[nz]
    changes = np.flatnonzero(np.diff(seq) != 0)
    if len(changes) != 1 or seq[0] < 0:
        return None
    k_lo, k_hi = nz[changes[0]], nz[changes[0] + 1]
    if k_hi - k_lo > 2:  # a run of exact ties is not a single crossing
        return None
    return int(k_lo)


def classify_lanes(
    s: State,
    grid: Grid,
    tols: LaneTolerances = LaneTolerances(),
    p: ModelParams | None = None,
) -> LaneReport:
    """Classify x-averaged profiles as strong, weak or no lanes.

    The default orientation has reds below blues (right-stepping preference,
    ``gamma1 > gamma2``); with ``gamma2 > gamma1`` the profiles are flipped in
    ``y`` first so the same ordering rules apply.
    """
    rbar = s.r.mean(axis=0)
    bbar = s.b.mean(axis=0)
    y = grid.yc
    flip = p is not None and p.gamma2 > p.gamma1
    if flip:
        rbar, bbar = rbar[::-1], bbar[::-1]
    overlap = float((s.r * s.b).sum() * grid.cell_area)

    def unflip(yv):
        if yv is None or not flip:
            return yv
        return float(2.0 * grid.y0 + grid.Ly - yv)

    dr = np.diff(rbar)
    db = np.diff(bbar)
    defect = float(max(dr.max(initial=0.0), (-db).max(initial=0.0), 0.0))

    supp_r = np.flatnonzero(rbar > tols.support_tol)
    supp_b = np.flatnonzero(bbar > tols.support_tol)
    if len(supp_r) and len(supp_b) and supp_r.max() < supp_b.min():
        gap = float(y[supp_b.min()] - y[supp_r.max()])
        return LaneReport("strong", None, defect, overlap, gap)

    contrast = float(np.abs(rbar - bbar).max(initial=0.0))
    k = None
    if defect <= tols.mono_tol and contrast > tols.contrast_tol:
        k = _unique_crossing(rbar - bbar)
    if k is not None:
        d0 = rbar[k] - bbar[k]
        d1 = rbar[k + 1] - bbar[k + 1]
        # linear interpolation; a tie at k+1 puts the crossing on that cell centre
        cross = y[k] + (y[k + 1] - y[k]) * d0 / (d0 - d1)
        return LaneReport("weak", unflip(float(cross)), defect, overlap, None)
    return LaneReport("none", None, defect, overlap, None)


# ---------------------------------------------------------------------------
# micro / macro


class ComparisonError(ValueError):
    pass


@dataclass(frozen=True)
class MicroMacroReport:
    times: np.ndarray
    l2: np.ndarray
    sup: np.ndarray


def compare_micro_macro(
    lattice_traj: Sequence[State], pde_traj: Sequence[State], grid: Grid, time_rtol: float = 1e-9
) -> MicroMacroReport:
    """L2 and sup distances of ``(r, b)`` at shared output times.

    Lattice states must already carry physical time ``k * lambda * h``.
    """
    if len(lattice_traj) != len(pde_traj):
        raise ComparisonError(f"trajectory lengths differ ({len(lattice_traj)} vs {len(pde_traj)})")
    times, l2, sup = [], [], []
    for a, b in zip(lattice_traj, pde_traj):
        if a.r.shape != grid.shape or b.r.shape != grid.shape:
            raise ComparisonError(f"grid mismatch: {a.r.shape} / {b.r.shape} vs {grid.shape}")
        if abs(a.t - b.t) > time_rtol * max(1.0, abs(a.t)):
            raise ComparisonError(f"time mismatch: lattice t={a.t!r}, pde t={b.t!r}")
        dr = a.r - b.r
        dbl = a.b - b.b
        times.append(a.t)
        l2.append(float(np.sqrt(((dr * dr + dbl * dbl).sum()) * grid.cell_area)))
        sup.append(float(max(np.abs(dr).max(), np.abs(dbl).max())))
    return MicroMacroReport(np.array(times), np.array(l2), np.array(sup))


def throughput(s: State, grid: Grid) -> float:
    """Red x-drift throughput ``int (1 - rho) r dA``."""
    return float(((1.0 - s.rho) * s.r).sum() * grid.cell_area)
