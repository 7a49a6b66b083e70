"""Macroscopic cross-diffusion system on the periodic corridor.

Explicit conservative finite-volume stepping for the full flux, the
symmetric reduced model and the dodge-scaled model, and an implicit Euler
step posed in entropy variables for the symmetric reduced model.

Every face flux is assembled in "hop" form ``q_from * (1 - rho_to)``: the
bracketed cross-diffusion terms ``(1-rho) dq + q drho`` with central
differences and arithmetic face means collapse exactly to
``(1-rho_j) q_{j+1} - (1-rho_{j+1}) q_j``, and drift terms take the density
from the upwind cell and the vacancy from the receiving cell.  That keeps
the discrete update inside the admissible box under the step bound below.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import stencils as st
from .model import CLIP_EPS, EntropyState, Grid, ModelParams, SolverConfig, State

logger = logging.getLogger(__name__)

BOX_TOL = 1e-12
VARIANTS = ("full", "reduced-sym", "dodge-scaled")


class PDEError(RuntimeError):
    """Numerical failure inside the PDE solvers."""


class CFLError(PDEError):
    pass


class BoxViolation(PDEError):
    pass


class TransformError(PDEError):
    pass


class ConvergenceError(PDEError):
    pass


@dataclass(frozen=True, eq=False)
class FluxField:
    """Face fluxes; x arrays ``(Nx, Ny)``, y arrays ``(Nx, Ny+1)`` with zero walls."""

    Jr_x: np.ndarray
    Jr_y: np.ndarray
    Jb_x: np.ndarray
    Jb_y: np.ndarray


@dataclass(frozen=True, eq=False)
class MobilityMatrices:
    G: np.ndarray | None = None  # (..., 4, 4)
    H: np.ndarray | None = None  # (..., 4)
    M: np.ndarray | None = None  # (..., 4, 4)


def check_variant(p: ModelParams, variant: str) -> None:
    if variant not in VARIANTS:
        raise ValueError(f"unknown model variant {variant!r}; expected one of {VARIANTS}")
    if variant == "reduced-sym" and not p.is_reduced:
        raise ValueError(
            "reduced-sym needs gamma1 == gamma2 and alpha == 0 "
            f"(got gamma1={p.gamma1}, gamma2={p.gamma2}, alpha={p.alpha})"
        )


def lateral_drift(p: ModelParams, variant: str) -> float:
    """Coefficient ``c`` of the red lateral drift ``-c (1-rho) r b``."""
    if variant == "dodge-scaled":
        return p.h
    if variant == "reduced-sym":
        return 0.0
    return p.gamma1 - p.gamma2


def _has_cross(variant: str) -> bool:
    return variant == "full"


def _upwind(v, q_from_lo, q_from_hi, vac_lo, vac_hi, mobility: str):
    """Flux ``v * q * (1 - rho)`` across a face with the ``lo`` cell behind it.

    Positive ``v`` moves mass from ``lo`` to ``hi``.
    """
    if mobility == "mean":
        vac = 0.5 * (vac_lo + vac_hi)
        return np.maximum(v, 0.0) * q_from_lo * vac + np.minimum(v, 0.0) * q_from_hi * vac
    return np.maximum(v, 0.0) * q_from_lo * vac_hi + np.minimum(v, 0.0) * q_from_hi * vac_lo


def compute_fluxes(
    s: State, p: ModelParams, variant: str, grid: Grid, mobility: str = "downstream"
) -> FluxField:
    check_variant(p, variant)
    r, b = s.r, s.b
    vac = 1.0 - (r + b)
    dx, dy = grid.dx, grid.dy
    h, a = p.h, p.alpha
    rR, bR, vR = st.right(r), st.right(b), st.right(vac)

    # x: drift + (h/2)[d_x(q(1-rho)(1+a q)) - 2(1-rho) d_x q]
    kx = h / (2.0 * dx)
    red_move = r * (1.0 + a * r)
    blue_move = bR * (1.0 + a * bR)
    if mobility == "mean":
        face_vac = 0.5 * (vac + vR)
        drift_r = red_move * face_vac
        drift_b = -blue_move * face_vac
    else:
        drift_r = red_move * vR
        drift_b = -blue_move * vac
    hop_r = r * vR - rR * vac
    hop_b = b * vR - bR * vac
    if a:
        hop_r = hop_r + a * (rR * rR * vR - r * r * vac)
        hop_b = hop_b + a * (bR * bR * vR - b * b * vac)
    Jr_x = drift_r + kx * hop_r
    Jb_x = drift_b + kx * hop_b

    ny = r.shape[1]
    if ny < 2:
        zero = np.zeros((r.shape[0], ny + 1))
        return FluxField(Jr_x, zero, Jb_x, zero.copy())

    # y: lateral drift, bracketed diffusion, and (full model only) x-gradient cross term
    ky = h / (2.0 * dy)
    lo, hi = st.lower, st.upper
    rb = r * b
    vlo, vhi = lo(vac), hi(vac)

    def bracket(q):
        return vlo * hi(q) - vhi * lo(q)

    common = -ky * (p.gamma1 + p.gamma2) * bracket(rb)
    c = lateral_drift(p, variant)
    Jr_y = common - ky * 2.0 * p.gamma0 * bracket(r)
    Jb_y = common - ky * 2.0 * p.gamma0 * bracket(b)
    if c:
        Jr_y = Jr_y + _upwind(-c, lo(rb), hi(rb), vlo, vhi, mobility)
        Jb_y = Jb_y + _upwind(c, lo(rb), hi(rb), vlo, vhi, mobility)
    if _has_cross(variant) and p.gamma1 != p.gamma2:
        g = h * (p.gamma1 - p.gamma2)
        dbx = st.central_x(b, dx)
        drx = st.central_x(r, dx)
        w_r = -g * 0.5 * (lo(dbx) + hi(dbx))
        w_b = -g * 0.5 * (lo(drx) + hi(drx))
        Jr_y = Jr_y + _upwind(w_r, lo(r), hi(r), vlo, vhi, mobility)
        Jb_y = Jb_y + _upwind(w_b, lo(b), hi(b), vlo, vhi, mobility)
    return FluxField(Jr_x, st.y_faces(Jr_y), Jb_x, st.y_faces(Jb_y))


def pde_rhs(
    s: State, p: ModelParams, grid: Grid, variant: str, mobility: str = "downstream"
) -> tuple[np.ndarray, np.ndarray]:
    """``(-div J_r, -div J_b)`` at cell centres."""
    f = compute_fluxes(s, p, variant, grid, mobility)
    return (
        -st.divergence(f.Jr_x, f.Jr_y, grid.dx, grid.dy),
        -st.divergence(f.Jb_x, f.Jb_y, grid.dx, grid.dy),
    )


def stability_dt(
    s: State | None, p: ModelParams, grid: Grid, cfl_safety: float = 0.9, variant: str = "full"
) -> float:
    """State-independent explicit step bound.

    Each term bounds the per-step outflow coefficient of one flux piece on
    the box ``0 <= r, b, r + b <= 1``:

    * x drift: ``(1+alpha) / dx`` out of a cell; doubled because a cell can
      receive a red from behind and a blue from ahead in the same step.
    * x diffusion: hop coefficient ``h/(2 dx^2)`` per face, two faces, with
      the cohesion correction widening it to ``h (1 + 2 alpha) / dx^2``.
    * y diffusion: ``h gamma0 / dy^2`` and ``h (gamma1+gamma2)/2 / dy^2`` per
      face, two faces each (``rb <= r``).
    * lateral drift ``|c| / dy`` and the cross term, whose velocity is at most
      ``h |gamma1-gamma2| / dx`` since central differences of a density are
      bounded by ``1 / dx``.

    Summing the rates (rather than taking the smallest single-term limit)
    keeps the 2D update a convex combination for ``alpha = 0``, so ``s`` is
    not consulted.  The cohesion part of the x flux is anti-diffusive: a
    red-free cell beside a crowded one loses red mass through it whenever
    its vacancy is below ``alpha r (1 - rho)`` of the neighbour.  With
    ``alpha > 0`` the box is therefore kept on resolved data only, and
    ``step_explicit`` reports any excursion.
    """
    check_variant(p, variant)
    dx, dy = grid.dx, grid.dy
    h, a = p.h, p.alpha
    rate = 2.0 * (1.0 + a) / dx + h * (1.0 + 2.0 * a) / dx**2
    if grid.Ny > 1:
        rate += (2.0 * h * p.gamma0 + h * (p.gamma1 + p.gamma2)) / dy**2
        rate += abs(lateral_drift(p, variant)) / dy
        if _has_cross(variant):
            rate += h * abs(p.gamma1 - p.gamma2) / (dx * dy)
    return cfl_safety / rate


def _enforce_box(r: np.ndarray, b: np.ndarray, where: str) -> tuple[np.ndarray, np.ndarray]:
    """Clip round-off excursions up to ``BOX_TOL``; anything larger is an error."""
    rho = r + b
    for name, arr, bad in (("r", r, -r), ("b", b, -b), ("rho", rho, rho - 1.0)):
        idx = np.unravel_index(np.argmax(bad), bad.shape)
        if bad[idx] > BOX_TOL:
            raise BoxViolation(
                f"{where}: {name}[{idx[0]},{idx[1]}] = {arr[idx]!r} leaves the box by {bad[idx]:.3e}"
            )
    if (r < 0).any() or (b < 0).any() or (rho > 1).any():
        r = np.maximum(r, 0.0)
        b = np.maximum(b, 0.0)
        over = r + b - 1.0
        mask = over > 0
        if mask.any():
            share = r[mask] / (r[mask] + b[mask])
            r[mask] -= over[mask] * share
            b[mask] -= over[mask] * (1.0 - share)
        logger.debug("%s: clipped round-off box excursions", where)
    return r, b


def step_explicit(
    s: State,
    p: ModelParams,
    cfg: SolverConfig,
    grid: Grid,
    dt: float | None = None,
    dt_max: float | None = None,
) -> State:
    """One forward-Euler step ``s - dt div J``; refuses steps above the CFL bound."""
    limit = dt_max if dt_max is not None else stability_dt(s, p, grid, cfg.cfl_safety, cfg.variant)
    dt = dt if dt is not None else (cfg.dt if cfg.dt is not None else limit)
    if dt > limit * (1.0 + 1e-12):
        raise CFLError(f"dt={dt:.6g} exceeds the stability bound {limit:.6g}")
    dr, db = pde_rhs(s, p, grid, cfg.variant, cfg.mobility)
    r, b = _enforce_box(s.r + dt * dr, s.b + dt * db, f"t={s.t + dt:.6g}")
    return State(r, b, s.t + dt)


# ---------------------------------------------------------------------------
# entropy variables


def _potential(grid: Grid, h: float) -> np.ndarray:
    """``(2/h) x`` at cell centres; ``u = u~ - 2x/h``, ``v = v~ + 2x/h``."""
    X, _ = grid.mesh()
    return 2.0 * X / h


def _clip_interior(r, b, clip_eps):
    r = np.array(r, dtype=float, copy=True)
    b = np.array(b, dtype=float, copy=True)
    for name, arr in (("r", r), ("b", b)):
        bad = np.argwhere(arr <= -clip_eps)
        if len(bad):
            i, j = bad[0]
            raise TransformError(f"{name}[{i},{j}] = {arr[i, j]!r} is not positive")
    vac = 1.0 - (r + b)
    bad = np.argwhere(vac <= -clip_eps)
    if len(bad):
        i, j = bad[0]
        raise TransformError(f"1 - rho at [{i},{j}] = {vac[i, j]!r} is not positive")
    n_clip = int((r <= 0).sum() + (b <= 0).sum() + (vac <= 0).sum())
    if n_clip:
        logger.warning("clipping %d values into the interior by %g", n_clip, clip_eps)
        r = np.maximum(r, clip_eps)
        b = np.maximum(b, clip_eps)
        rho = r + b
        scale = np.where(rho >= 1.0 - clip_eps, (1.0 - clip_eps) / rho, 1.0)
        r, b = r * scale, b * scale
    return r, b


def reduced_entropy(r: np.ndarray, b: np.ndarray, clip_eps: float = CLIP_EPS):
    """Potential-free entropy variables ``(log r - log(1-rho)/2, log b - log(1-rho)/2)``."""
    r, b = _clip_interior(r, b, clip_eps)
    half_log_vac = 0.5 * np.log1p(-(r + b))
    return np.log(r) - half_log_vac, np.log(b) - half_log_vac


def primal_from_reduced(ut: np.ndarray, vt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Invert ``reduced_entropy``.

    With ``s = sqrt(1 - rho)`` we have ``r = e^u s`` and ``b = e^v s``, so
    ``s^2 + (e^u + e^v) s - 1 = 0`` and ``s = 2 / (E + sqrt(E^2 + 4))``.
    For large exponents everything is scaled by ``e^-m``, ``m = max(u, v)``.
    """
    ut = np.asarray(ut, dtype=float)
    vt = np.asarray(vt, dtype=float)
    if not (np.isfinite(ut).all() and np.isfinite(vt).all()):
        raise TransformError("entropy variables must be finite")
    m = np.maximum(np.maximum(ut, vt), 0.0)
    eu = np.exp(ut - m)
    ev = np.exp(vt - m)
    with np.errstate(under="ignore"):
        tail = 4.0 * np.exp(-2.0 * m)
    S = eu + ev
    denom = S + np.sqrt(S * S + tail)
    r = 2.0 * eu / denom
    b = 2.0 * ev / denom
    if not (np.isfinite(r).all() and np.isfinite(b).all()):
        raise TransformError("overflow evaluating the inverse entropy map")
    return r, b


def primal_to_entropy(s: State, grid: Grid, h: float, clip_eps: float = CLIP_EPS) -> EntropyState:
    ut, vt = reduced_entropy(s.r, s.b, clip_eps)
    pot = _potential(grid, h)
    return EntropyState(u=ut - pot, v=vt + pot, grid=grid, h=h)


def entropy_to_primal(e: EntropyState, grid: Grid | None = None, h: float | None = None, t: float = 0.0) -> State:
    grid = grid or e.grid
    h = h if h is not None else e.h
    pot = _potential(grid, h)
    with np.errstate(over="raise", invalid="raise"):
        try:
            ut = e.u + pot
            vt = e.v - pot
        except FloatingPointError as exc:
            raise TransformError(f"overflow shifting entropy variables: {exc}") from exc
    r, b = primal_from_reduced(ut, vt)
    return State(r, b, t)


def hessian_inverse(r: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Entries ``(a11, a12, a22)`` of ``(D^2 E)^-1 = d(r,b)/d(u,v)``."""
    two_minus = 2.0 - (r + b)
    a11 = r * (2.0 - 2.0 * r - b) / two_minus
    a22 = b * (2.0 - 2.0 * b - r) / two_minus
    a12 = -r * b / two_minus
    return a11, a12, a22


# ---------------------------------------------------------------------------
# mobility matrices of the symmetric reduced model


def assemble_G_H(s: State, p: ModelParams) -> MobilityMatrices:
    """Per-cell ``G`` (4x4) and ``H`` (4) with ``d_t(r,b) = div(G grad(u,v) + H)``.

    Ordering is ``(d_x u, d_y u, d_x v, d_y v)``.  Rows three and four are the
    blue mirror of rows one and two, which is what makes ``G`` symmetric.
    """
    g, g0, h = p.gamma, p.gamma0, p.h
    r = np.asarray(s.r, dtype=float)
    b = np.asarray(s.b, dtype=float)
    rho = r + b
    vac = 1.0 - rho
    q = 1.0 / (2.0 - rho)
    G = np.zeros(r.shape + (4, 4))
    G[..., 0, 0] = vac * r * (1.0 + r * q)
    G[..., 0, 2] = G[..., 2, 0] = vac * r * b * q
    G[..., 2, 2] = vac * b * (1.0 + b * q)
    G[..., 1, 1] = 2.0 * vac * r * (g0 * (2.0 - b) * q + g * b)
    G[..., 1, 3] = G[..., 3, 1] = 2.0 * vac * r * b * (g0 * q + g)
    G[..., 3, 3] = 2.0 * vac * b * (g0 * (2.0 - r) * q + g * r)
    G *= 0.5 * h
    H = np.zeros(r.shape + (4,))
    H[..., 0] = vac * r * (r - b) * q
    H[..., 2] = vac * b * (r - b) * q
    return MobilityMatrices(G=G, H=H)


def assemble_M(s: State, p: ModelParams) -> MobilityMatrices:
    """Mobility of ``d_t(r,b) = (h/2) div(M grad(u,v) + (r/2 d_x rho, g0 r d_y rho, b/2 d_x rho, g0 b d_y rho))``."""
    g, g0 = p.gamma, p.gamma0
    r = np.asarray(s.r, dtype=float)
    b = np.asarray(s.b, dtype=float)
    vac = 1.0 - (r + b)
    M = np.zeros(r.shape + (4, 4))
    M[..., 0, 0] = vac * r
    M[..., 2, 2] = vac * b
    cross = 2.0 * g * vac * r * b
    M[..., 1, 1] = 2.0 * g0 * vac * r + cross
    M[..., 3, 3] = 2.0 * g0 * vac * b + cross
    M[..., 1, 3] = M[..., 3, 1] = cross
    return MobilityMatrices(M=M)


# ---------------------------------------------------------------------------
# implicit Euler in entropy variables


def _index(grid: Grid) -> np.ndarray:
    return np.arange(grid.Nx * grid.Ny).reshape(grid.shape)


def _face_pairs(grid: Grid):
    """Cell index pairs ``(a, c)`` across x-faces and interior y-faces."""
    idx = _index(grid)
    x_pairs = (idx.ravel(), st.right(idx).ravel())
    y_pairs = (st.lower(idx).ravel(), st.upper(idx).ravel())
    return x_pairs, y_pairs


def _stiffness(pairs, coef: np.ndarray, scale: float, n: int) -> sp.csr_matrix:
    """Matrix of ``q -> sum_faces coef (q_c - q_a)`` added to ``a`` and subtracted from ``c``."""
    a, c = pairs
    w = coef.ravel() * scale
    rows = np.concatenate([a, a, c, c])
    cols = np.concatenate([a, c, a, c])
    data = np.concatenate([-w, w, w, -w])
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def _implicit_residual(ut, vt, r, b, s_prev, p, grid, tau, reg, pot, mobility):
    dr, db = pde_rhs(State(r, b), p, grid, "reduced-sym", mobility)
    Rr = r - s_prev.r - tau * dr
    Rb = b - s_prev.b - tau * db
    if reg:
        lap_u = st.laplacian(ut, grid.dx, grid.dy)
        lap_v = st.laplacian(vt, grid.dx, grid.dy)
        Rr = Rr - tau * reg * (lap_u - (ut - pot))
        Rb = Rb - tau * reg * (lap_v - (vt + pot))
    return Rr, Rb


def _implicit_matrix(r, b, p, grid, tau, reg):
    """Lagged-coefficient linearisation: ``(D^2E)^-1 - tau div(G grad) - tau reg (Lap - I)``."""
    n = grid.Nx * grid.Ny
    dx, dy = grid.dx, grid.dy
    a11, a12, a22 = hessian_inverse(r, b)
    G = assemble_G_H(State(r, b), p).G
    (xa, xc), (ya, yc) = _face_pairs(grid)

    def xface(k, l):
        return st.mean_x(G[..., k, l])

    def yface(k, l):
        g = G[..., k, l]
        return 0.5 * (st.lower(g) + st.upper(g))

    x_pairs, y_pairs = (xa, xc), (ya, yc)
    blocks = [[None, None], [None, None]]
    for bi, (kx, ky) in enumerate(((0, 1), (2, 3))):
        for bj, (lx, ly) in enumerate(((0, 1), (2, 3))):
            K = _stiffness(x_pairs, xface(kx, lx), 1.0 / dx**2, n)
            if grid.Ny > 1:
                K = K + _stiffness(y_pairs, yface(ky, ly), 1.0 / dy**2, n)
            blocks[bi][bj] = -tau * K
    diag = {(0, 0): a11, (0, 1): a12, (1, 0): a12, (1, 1): a22}
    for (bi, bj), vals in diag.items():
        blocks[bi][bj] = blocks[bi][bj] + sp.diags(vals.ravel())
    if reg:
        ones = np.ones(grid.shape)
        lap = _stiffness(x_pairs, ones[:, :], 1.0 / dx**2, n)
        if grid.Ny > 1:
            lap = lap + _stiffness(y_pairs, np.ones((grid.Nx, grid.Ny - 1)), 1.0 / dy**2, n)
        reg_op = -tau * reg * (lap - sp.identity(n))
        blocks[0][0] = blocks[0][0] + reg_op
        blocks[1][1] = blocks[1][1] + reg_op
    return sp.bmat(blocks, format="csc")


@dataclass(frozen=True)
class ImplicitStats:
    iterations: int
    residual: float
    increment: float


def step_implicit_entropy(
    s_prev: State,
    p: ModelParams,
    cfg: SolverConfig,
    grid: Grid,
    return_stats: bool = False,
):
    """One regularised implicit Euler step of the symmetric reduced model.

    Solves for ``(u, v)`` with ``(r, b) = DE^-1(u, v)``::

        r - r_prev = tau * L(r, b) + tau * w * (Lap u - u)

    (and the blue analogue), where ``L`` is the explicit finite-volume
    operator of the reduced model and ``w`` is ``cfg.reg_weight`` (``tau``
    when unset).  Each iteration freezes ``G`` at the current iterate,
    solves the linear elliptic system for the update and halves the step
    while the residual grows.  Converged when successive primal iterates
    differ by less than ``fp_tol`` in the sup norm.
    """
    check_variant(p, "reduced-sym")
    tau = cfg.tau
    reg = tau if cfg.reg_weight is None else cfg.reg_weight
    pot = _potential(grid, p.h)
    n = grid.Nx * grid.Ny

    ut, vt = reduced_entropy(s_prev.r, s_prev.b, cfg.clip_eps)
    r, b = primal_from_reduced(ut, vt)
    Rr, Rb = _implicit_residual(ut, vt, r, b, s_prev, p, grid, tau, reg, pot, cfg.mobility)
    res = max(np.abs(Rr).max(), np.abs(Rb).max())
    increment = math.inf
    for it in range(1, cfg.fp_maxiter + 1):
        if res == 0.0:
            increment = 0.0
            break
        A = _implicit_matrix(r, b, p, grid, tau, reg)
        try:
            delta = spla.spsolve(A, -np.concatenate([Rr.ravel(), Rb.ravel()]))
        except RuntimeError as exc:  # singular factorisation
            raise ConvergenceError(f"linear solve failed at iteration {it}: {exc}") from exc
        if not np.isfinite(delta).all():
            raise ConvergenceError(f"linear solve broke down at iteration {it}")
        du = delta[:n].reshape(grid.shape)
        dv = delta[n:].reshape(grid.shape)
        step = 1.0
        for _ in range(30):
            ut_new, vt_new = ut + step * du, vt + step * dv
            r_new, b_new = primal_from_reduced(ut_new, vt_new)
            Rr_new, Rb_new = _implicit_residual(
                ut_new, vt_new, r_new, b_new, s_prev, p, grid, tau, reg, pot, cfg.mobility
            )
            res_new = max(np.abs(Rr_new).max(), np.abs(Rb_new).max())
            if res_new <= res or res_new < BOX_TOL * 1e-2:
                break
            step *= 0.5
        increment = max(np.abs(r_new - r).max(), np.abs(b_new - b).max())
        ut, vt, r, b, Rr, Rb, res = ut_new, vt_new, r_new, b_new, Rr_new, Rb_new, res_new
        if increment < cfg.fp_tol:
            break
    else:
        raise ConvergenceError(
            f"implicit step did not converge in {cfg.fp_maxiter} iterations "
            f"(residual {res:.3e}, last increment {increment:.3e})"
        )
    out = State(r, b, s_prev.t + tau)
    if return_stats:
        return out, ImplicitStats(it, float(res), float(increment))
    return out
