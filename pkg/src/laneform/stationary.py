"""x-independent steady states of the dodge-scaled model.

With ``S = (gamma1 + gamma2)/2``, ``g = gamma0`` and ``F = r b / (1 - rho)``
the zero-flux conditions read

    0 =  F + S d(F) + g d(r / (1 - rho))
    0 = -F + S d(F) + g d(b / (1 - rho))

Expanding the derivatives and multiplying by ``(1 - rho)^2`` gives

    [[(1-b)(S b + g),    r (S (1-r) + g)],     [r']   [-r b (1-rho)]
     [b (S (1-b) + g),   (1-r)(S r + g)  ]]  .  [b'] = [ r b (1-rho)]

whose determinant is ``g (1 - rho) (S (r + b - 2 r b) + g)``.  Solving,

    r' = -r b (2 S r (1-r) + g) / (g (S (r + b - 2 r b) + g))
    b' =  r b (2 S b (1-b) + g) / (g (S (r + b - 2 r b) + g))

Summing the two relations and integrating gives the level sets of
``curve_constant``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import brentq

from .model import CLIP_EPS, Grid, ModelParams

MASS_RTOL = 1e-6


class StationaryError(RuntimeError):
    pass


class MassMatchError(StationaryError):
    pass


@dataclass(frozen=True, eq=False)
class Profile:
    y: np.ndarray
    r: np.ndarray
    b: np.ndarray
    C: float
    C_drift: float = 0.0
    truncated: bool = False

    @property
    def rho(self) -> np.ndarray:
        return self.r + self.b

    def masses(self, Lx: float = 1.0) -> tuple[float, float]:
        order = np.argsort(self.y)
        y = self.y[order]
        return (
            float(Lx * trapezoid(self.r[order], y)),
            float(Lx * trapezoid(self.b[order], y)),
        )

    def curve_values(self, p: ModelParams) -> np.ndarray:
        return np.array([curve_constant(r, b, p) for r, b in zip(self.r, self.b)])


@dataclass(frozen=True, eq=False)
class Curve:
    C: float
    r: np.ndarray
    b: np.ndarray


def _S(p: ModelParams) -> float:
    return 0.5 * (p.gamma1 + p.gamma2)


def curve_constant(r: float, b: float, p: ModelParams, clip_eps: float = CLIP_EPS) -> float:
    vac = 1.0 - (r + b)
    if vac <= clip_eps:
        raise StationaryError(f"curve constant is singular at rho = {r + b!r}")
    return ((p.gamma1 + p.gamma2) * r * b + p.gamma0 * (r + b)) / vac


def stationary_rhs(r: float, b: float, p: ModelParams, clip_eps: float = CLIP_EPS) -> tuple[float, float]:
    """``(dr/dy, db/dy)`` on the steady-state curve through ``(r, b)``."""
    S, g = _S(p), p.gamma0
    if not (r + b < 1.0 - clip_eps):
        raise StationaryError(f"rho = {r + b!r} too close to 1 at (r, b) = ({r!r}, {b!r})")
    den = g * (S * (r + b - 2.0 * r * b) + g)
    if den <= 0.0:
        raise StationaryError(f"singular stationary system at (r, b) = ({r!r}, {b!r})")
    rb = r * b
    return (-rb * (2.0 * S * r * (1.0 - r) + g) / den, rb * (2.0 * S * b * (1.0 - b) + g) / den)


def _rk4_step(f: Callable, r: float, b: float, h: float) -> tuple[float, float]:
    k1r, k1b = f(r, b)
    k2r, k2b = f(r + 0.5 * h * k1r, b + 0.5 * h * k1b)
    k3r, k3b = f(r + 0.5 * h * k2r, b + 0.5 * h * k2b)
    k4r, k4b = f(r + h * k3r, b + h * k3b)
    return (
        r + h / 6.0 * (k1r + 2.0 * k2r + 2.0 * k3r + k4r),
        b + h / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b),
    )


def _admissible(r: float, b: float, clip_eps: float) -> bool:
    return r > -clip_eps and b > -clip_eps and r + b < 1.0 - clip_eps


def integrate_profile(
    r0: float,
    b0: float,
    p: ModelParams,
    y_span: tuple[float, float],
    dy: float,
    clip_eps: float = CLIP_EPS,
) -> Profile:
    """Classical RK4 with fixed step from ``y_span[0]`` to ``y_span[1]`` (either direction)."""
    if not _admissible(r0, b0, clip_eps) or r0 < 0 or b0 < 0:
        raise StationaryError(f"initial point ({r0!r}, {b0!r}) is not admissible")
    if dy <= 0:
        raise ValueError("dy must be > 0")
    y_a, y_b = map(float, y_span)
    n = max(1, int(round(abs(y_b - y_a) / dy)))
    h = (y_b - y_a) / n

    def f(r, b):
        return stationary_rhs(r, b, p, clip_eps)

    C0 = curve_constant(r0, b0, p)
    ys, rs, bs = [y_a], [r0], [b0]
    r, b = r0, b0
    truncated = False
    drift = 0.0
    for k in range(1, n + 1):
        try:
            r_new, b_new = _rk4_step(f, r, b, h)
        except StationaryError:
            truncated = True
            break
        if not _admissible(r_new, b_new, clip_eps):
            truncated = True
            break
        r, b = r_new, b_new
        ys.append(y_a + k * h)
        rs.append(r)
        bs.append(b)
        drift = max(drift, abs(curve_constant(r, b, p) - C0))
    return Profile(np.array(ys), np.array(rs), np.array(bs), C0, drift, truncated)


def symmetric_seed(C: float, p: ModelParams) -> float:
    """The point ``r = b = x`` on the level set ``C``.

    From ``2 S x^2 + 2 g x = C (1 - 2 x)``.
    """
    S, g = _S(p), p.gamma0
    if S == 0.0:
        return C / (2.0 * (g + C))
    return (-(g + C) + math.sqrt((g + C) ** 2 + 2.0 * S * C)) / (2.0 * S)


def profile_through_crossing(
    C: float, y_cross: float, p: ModelParams, y_lo: float, y_hi: float, dy: float
) -> Profile:
    """Profile on ``[y_lo, y_hi]`` whose reds and blues cross at ``y_cross`` on level ``C``.

    Integrates from the symmetric seed outward in both directions; the
    crossing may lie outside the interval.
    """
    x = symmetric_seed(C, p)
    up = integrate_profile(x, x, p, (y_cross, y_hi), dy) if y_hi > y_cross else None
    down = integrate_profile(x, x, p, (y_cross, y_lo), dy) if y_lo < y_cross else None
    parts_y, parts_r, parts_b = [], [], []
    drift, trunc = 0.0, False
    if down is not None:
        parts_y.append(down.y[::-1])
        parts_r.append(down.r[::-1])
        parts_b.append(down.b[::-1])
        drift, trunc = max(drift, down.C_drift), trunc or down.truncated
    if up is not None:
        skip = 1 if down is not None else 0
        parts_y.append(up.y[skip:])
        parts_r.append(up.r[skip:])
        parts_b.append(up.b[skip:])
        drift, trunc = max(drift, up.C_drift), trunc or up.truncated
    y = np.concatenate(parts_y)
    r = np.concatenate(parts_r)
    b = np.concatenate(parts_b)
    # clip to the requested window when the seed sits outside it
    keep = (y >= y_lo - 1e-12 * max(1.0, abs(y_lo))) & (y <= y_hi + 1e-12 * max(1.0, abs(y_hi)))
    return Profile(y[keep], r[keep], b[keep], curve_constant(x, x, p), drift, trunc)


def match_masses(
    M_r: float,
    M_b: float,
    p: ModelParams,
    grid: Grid,
    dy: float | None = None,
    mass_rtol: float = MASS_RTOL,
) -> Profile:
    """Steady profile on ``[y0, y0 + Ly]`` carrying masses ``(M_r, M_b)`` over the corridor.

    The seed family is (crossing height, level ``C``).  The inner root
    solve fixes the total mass through ``C`` at a given crossing height, the
    outer one moves the crossing until the mass split matches.  Both use a
    bracketing root finder; a failed bracket reports the achievable range.
    """
    if p.gamma0 <= 0:
        raise StationaryError("stationary profiles need gamma0 > 0")
    if not (0 < M_r < grid.area and 0 < M_b < grid.area):
        raise MassMatchError(f"masses must lie in (0, {grid.area}) (got {M_r}, {M_b})")
    y_lo, y_hi = grid.y0, grid.y0 + grid.Ly
    dy = dy if dy is not None else grid.Ly / 4000.0
    Lx = grid.Lx
    total = M_r + M_b
    split = M_r - M_b
    xtol = 1e-14

    def at(C, yc):
        return profile_through_crossing(C, yc, p, y_lo, y_hi, dy)

    def total_for(C, yc):
        prof = at(C, yc)
        if prof.truncated:
            return math.inf
        mr, mb = prof.masses(Lx)
        return mr + mb

    # C large enough to saturate: rho -> C / (C + g) ... bounded below 1
    C_lo, C_hi = 1e-12, 1.0
    while C_hi < 1e12:
        if total_for(C_hi, 0.5 * (y_lo + y_hi)) > total:
            break
        C_hi *= 4.0

    def C_for(yc):
        f_lo = total_for(C_lo, yc) - total
        f_hi = total_for(C_hi, yc) - total
        if not (f_lo < 0 < f_hi):
            raise MassMatchError(
                f"total mass {total} outside achievable range "
                f"[{f_lo + total:.6g}, {f_hi + total:.6g}] at crossing y={yc:.6g}"
            )
        return brentq(lambda C: total_for(C, yc) - total, C_lo, C_hi, xtol=xtol, rtol=1e-15)

    def split_for(yc):
        prof = at(C_for(yc), yc)
        mr, mb = prof.masses(Lx)
        return (mr - mb) - split

    if abs(split) <= mass_rtol * total:
        yc = 0.5 * (y_lo + y_hi)
    else:
        # crossing may sit outside the corridor for strongly unequal masses
        span = y_hi - y_lo
        a, b_ = y_lo - 2.0 * span, y_hi + 2.0 * span
        f_a, f_b = split_for(a), split_for(b_)
        if not (f_a < 0 < f_b):
            raise MassMatchError(
                f"mass split {split:.6g} outside achievable range "
                f"[{f_a + split:.6g}, {f_b + split:.6g}]"
            )
        yc = brentq(split_for, a, b_, xtol=1e-13, rtol=1e-15)
    prof = at(C_for(yc), yc)
    mr, mb = prof.masses(Lx)
    if abs(mr - M_r) > mass_rtol * M_r or abs(mb - M_b) > mass_rtol * M_b:
        raise MassMatchError(f"matched masses ({mr:.10g}, {mb:.10g}) miss targets ({M_r}, {M_b})")
    return prof


def overlap_metrics(prof: Profile, Lx: float = 1.0) -> dict[str, float]:
    """``int r b dA`` and ``max_y min(r, b)`` of a steady profile."""
    order = np.argsort(prof.y)
    return {
        "rb_integral": float(Lx * trapezoid((prof.r * prof.b)[order], prof.y[order])),
        "max_min": float(np.minimum(prof.r, prof.b).max()),
    }


def _curve_field(p: ModelParams):
    """Steady-state field rescaled by ``r b g (S (r+b-2rb) + g) > 0`` (same orbits, no stiffness)."""
    S, g = _S(p), p.gamma0

    def f(r, b):
        return (-(2.0 * S * r * (1.0 - r) + g), 2.0 * S * b * (1.0 - b) + g)

    return f


def sweep_curves(
    p: ModelParams,
    C_values: Sequence[float],
    ds: float = 1e-3,
    axis_tol: float = 1e-6,
    max_steps: int = 10**6,
) -> list[Curve]:
    """Phase-plane level curves, traced from the symmetric seed toward both axes.

    ``C = 0`` gives the single point ``(0, 0)``; negative ``C`` gives an empty
    curve.  Tracing stops before ``min(r, b)`` drops below ``axis_tol``.
    """
    f = _curve_field(p)
    curves = []
    for C in C_values:
        C = float(C)
        if C < 0:
            curves.append(Curve(C, np.empty(0), np.empty(0)))
            continue
        if C == 0:
            curves.append(Curve(C, np.zeros(1), np.zeros(1)))
            continue
        x = symmetric_seed(C, p)
        branches = []
        for sign in (1.0, -1.0):
            pts = []
            r, b = x, x
            for _ in range(max_steps):
                r_new, b_new = _rk4_step(f, r, b, sign * ds)
                if min(r_new, b_new) < axis_tol:
                    break
                r, b = r_new, b_new
                pts.append((r, b))
            branches.append(pts)
        toward_b, toward_r = branches  # +s lowers r, -s lowers b
        pts = toward_r[::-1] + [(x, x)] + toward_b
        arr = np.array(pts)
        curves.append(Curve(C, arr[:, 0], arr[:, 1]))
    return curves
