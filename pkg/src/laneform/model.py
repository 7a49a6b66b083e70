"""Shared domain types for the lane-formation simulator.

Densities live on a cell-centred rectangular grid ``(Nx, Ny)`` indexed
``[i, j]`` with ``i`` running along the corridor (periodic) and ``j`` across
it (walls at both ends).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

CLIP_EPS = 1e-10


@dataclass(frozen=True)
class ModelParams:
    """Lattice/PDE coefficients.

    ``gamma1`` weights side-steps to the walker's right, ``gamma2`` to the
    left; the symmetric reduced model is ``gamma1 == gamma2`` with ``alpha == 0``.
    """

    h: float
    gamma0: float
    gamma1: float
    gamma2: float
    alpha: float = 0.0

    @property
    def gamma(self) -> float:
        """Common dodge coefficient of the symmetric model."""
        if self.gamma1 != self.gamma2:
            raise ValueError(
                f"gamma is only defined for gamma1 == gamma2 (got {self.gamma1}, {self.gamma2})"
            )
        return self.gamma1

    @property
    def is_reduced(self) -> bool:
        return self.gamma1 == self.gamma2 and self.alpha == 0.0


def validate_params(p: ModelParams) -> list[str]:
    """Return every violated bound; an empty list means the parameters are valid."""
    violations = []
    if not (p.h > 0 and math.isfinite(p.h)):
        violations.append(f"h must be > 0 (got {p.h})")
    for name in ("gamma0", "gamma1", "gamma2"):
        value = getattr(p, name)
        if not 0.0 <= value <= 1.0:
            violations.append(f"{name} must lie in [0, 1] (got {value})")
    if p.alpha < 0.0:
        violations.append(f"alpha < 0 (got {p.alpha})")
    elif p.alpha > 0.5:
        violations.append(f"alpha > 1/2 (got {p.alpha})")
    return violations


@dataclass(frozen=True)
class Grid:
    """Cell-centred discretisation of ``[x0, x0+Lx] x [y0, y0+Ly]``.

    Boundary policy is fixed: periodic in x, no-flux in y.
    """

    Lx: float = 1.0
    Ly: float = 0.1
    Nx: int = 100
    Ny: int = 10
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        if not (self.Lx > 0 and self.Ly > 0):
            raise ValueError(f"grid extents must be positive (Lx={self.Lx}, Ly={self.Ly})")
        if int(self.Nx) != self.Nx or int(self.Ny) != self.Ny or self.Nx < 1 or self.Ny < 1:
            raise ValueError(f"cell counts must be positive integers (Nx={self.Nx}, Ny={self.Ny})")

    boundary_x = "periodic"
    boundary_y = "no-flux"

    @property
    def shape(self) -> tuple[int, int]:
        return (self.Nx, self.Ny)

    @property
    def dx(self) -> float:
        return self.Lx / self.Nx

    @property
    def dy(self) -> float:
        return self.Ly / self.Ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def area(self) -> float:
        return self.Lx * self.Ly

    @property
    def xc(self) -> np.ndarray:
        return self.x0 + (np.arange(self.Nx) + 0.5) * self.dx

    @property
    def yc(self) -> np.ndarray:
        return self.y0 + (np.arange(self.Ny) + 0.5) * self.dy

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-centre coordinates as two ``(Nx, Ny)`` arrays."""
        return np.meshgrid(self.xc, self.yc, indexing="ij")


@dataclass(frozen=True, eq=False)
class State:
    """Red/blue densities on a grid at time ``t``."""

    r: np.ndarray
    b: np.ndarray
    t: float = 0.0

    @property
    def rho(self) -> np.ndarray:
        return self.r + self.b

    def masses(self, grid: Grid) -> tuple[float, float]:
        dA = grid.cell_area
        return float(self.r.sum() * dA), float(self.b.sum() * dA)

    def box_violation(self) -> float:
        """Largest amount by which ``0 <= r, b`` or ``r + b <= 1`` is violated."""
        worst = max(-float(self.r.min()), -float(self.b.min()), float(self.rho.max()) - 1.0)
        return max(worst, 0.0)


@dataclass(frozen=True, eq=False)
class EntropyState:
    """Entropy variables ``u = dE/dr``, ``v = dE/db`` (potentials included)."""

    u: np.ndarray
    v: np.ndarray
    grid: Grid
    h: float


class InitialConditionError(ValueError):
    pass


@dataclass(frozen=True)
class InitialCondition:
    """Initial-condition descriptor.

    ``kind`` is ``"constant"``, ``"sinusoidal"`` or ``"table"``.  The
    sinusoidal profile is ``c_r + A sin(pi xi) cos(pi eta)`` for reds and
    ``c_b - A sin(pi xi) cos(pi eta)`` for blues, with ``xi``/``eta`` the
    cell-centre coordinates rescaled to ``[0, 1]``; on the default corridor
    this is ``sin(pi x) cos(pi y / 0.1)``.
    """

    kind: str = "sinusoidal"
    c_r: float = 0.4
    c_b: float = 0.4
    amplitude: float = 0.02
    table: Any = None  # (r, b) arrays or a CSV path with columns i,j,r,b


def _load_table(table, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(table, (tuple, list)):
        if len(table) != 2:
            raise InitialConditionError("table must be an (r, b) pair or a CSV path")
        r, b = (np.array(a, dtype=float) for a in table)
    else:
        data = np.genfromtxt(table, delimiter=",", names=True)
        r = np.full(grid.shape, np.nan)
        b = np.full(grid.shape, np.nan)
        i = data["i"].astype(int)
        j = data["j"].astype(int)
        r[i, j] = data["r"]
        b[i, j] = data["b"]
        if np.isnan(r).any() or np.isnan(b).any():
            raise InitialConditionError(f"table {table} does not cover every cell of a {grid.shape} grid")
    if r.shape != grid.shape or b.shape != grid.shape:
        raise InitialConditionError(f"table shape {r.shape} does not match grid {grid.shape}")
    return r, b


def make_initial(desc: InitialCondition, grid: Grid) -> State:
    """Sample the descriptor at cell centres and return the ``t = 0`` state."""
    if desc.kind == "constant":
        r = np.full(grid.shape, float(desc.c_r))
        b = np.full(grid.shape, float(desc.c_b))
    elif desc.kind == "sinusoidal":
        X, Y = grid.mesh()
        xi = (X - grid.x0) / grid.Lx
        eta = (Y - grid.y0) / grid.Ly
        bump = desc.amplitude * np.sin(np.pi * xi) * np.cos(np.pi * eta)
        r = desc.c_r + bump
        # written as total minus red so that r + b == c_r + c_b up to one rounding
        b = (desc.c_r + desc.c_b) - r
    elif desc.kind == "table":
        r, b = _load_table(desc.table, grid)
    else:
        raise InitialConditionError(f"unknown initial-condition kind {desc.kind!r}")

    for name, arr in (("r", r), ("b", b), ("rho", r + b)):
        lo, hi = (0.0, 1.0)
        bad = np.argwhere((arr < lo) | (arr > hi) | ~np.isfinite(arr))
        if len(bad):
            i, j = bad[0]
            raise InitialConditionError(
                f"{name}[{i},{j}] = {arr[i, j]!r} outside [0, 1] for descriptor {desc.kind}"
            )
    return State(r=r, b=b, t=0.0)


@dataclass(frozen=True)
class SolverConfig:
    """Time-stepping options for the PDE solvers.

    ``dt`` of ``None`` means "use the CFL limit".  ``reg_weight`` of ``None``
    ties the implicit H1-regularisation weight to ``tau``.
    """

    scheme: str = "explicit"  # explicit | implicit-entropy
    variant: str = "full"  # full | reduced-sym | dodge-scaled
    dt: float | None = None
    tau: float = 1e-3
    cfl_safety: float = 0.9
    fp_tol: float = 1e-12
    fp_maxiter: int = 50
    clip_eps: float = CLIP_EPS
    reg_weight: float | None = None
    mobility: str = "downstream"  # downstream | mean

    def __post_init__(self):
        if self.scheme not in ("explicit", "implicit-entropy"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.variant not in ("full", "reduced-sym", "dodge-scaled"):
            raise ValueError(f"unknown model variant {self.variant!r}")
        if self.dt is not None and not self.dt > 0:
            raise ValueError(f"dt must be > 0 (got {self.dt})")
        if not self.tau > 0:
            raise ValueError(f"tau must be > 0 (got {self.tau})")
        if not 0 < self.cfl_safety <= 1:
            raise ValueError(f"cfl_safety must lie in (0, 1] (got {self.cfl_safety})")
        if not self.fp_tol > 0:
            raise ValueError(f"fp_tol must be > 0 (got {self.fp_tol})")
        if self.mobility not in ("downstream", "mean"):
            raise ValueError(f"unknown face mobility {self.mobility!r}")
        if self.reg_weight is not None and self.reg_weight < 0:
            raise ValueError(f"reg_weight must be >= 0 (got {self.reg_weight})")
        if self.fp_maxiter < 1:
            raise ValueError("fp_maxiter must be >= 1")


@dataclass(frozen=True)
class OutputConfig:
    every: float | None = None  # emission cadence in model time; None = only start/end
    snapshots: bool = True

    def __post_init__(self):
        if self.every is not None and not self.every > 0:
            raise ValueError(f"output.every must be > 0 (got {self.every})")


@dataclass(frozen=True)
class LatticeOptions:
    """``rate_scale``: "outflow" (worst-case outflow bound), "box_safe" or a number."""

    rate_scale: Any = "outflow"
    ensemble: int = 100
    sweeps: int | None = None  # None = as many sweeps as master steps to T_end

    def __post_init__(self):
        if isinstance(self.rate_scale, str):
            if self.rate_scale not in ("outflow", "box_safe"):
                raise ValueError(f"unknown rate_scale {self.rate_scale!r}")
        elif not 0 < float(self.rate_scale) <= 1:
            raise ValueError(f"rate_scale must lie in (0, 1] (got {self.rate_scale})")
        if self.ensemble < 1:
            raise ValueError("ensemble must be >= 1")


@dataclass(frozen=True)
class StationaryOptions:
    dy: float = 1e-4
    C_values: tuple = (0.003, 0.01, 0.03, 0.1, 0.3, 1.0)
    masses: tuple | None = None  # (M_r, M_b); None = masses of the initial condition
    curve_ds: float = 1e-3

    def __post_init__(self):
        if not self.dy > 0 or not self.curve_ds > 0:
            raise ValueError("dy and curve_ds must be > 0")
        if self.masses is not None and len(self.masses) != 2:
            raise ValueError("masses must be a pair [M_r, M_b]")


@dataclass(frozen=True)
class CompareOptions:
    """Micro/macro study settings.

    The lattice grid is rebuilt with dx = dy = h.  The PDE is solved on a grid
    ``pde_refine`` times finer and block-averaged back, so that its own
    upwind diffusion (order dx) stays small next to the physical h/2.
    ``T_end`` is the comparison horizon, kept short because the constant
    state of the corridor example is linearly unstable at small h.
    """

    h_levels: tuple = (0.05, 0.025, 0.0125)
    pde_refine: int = 4
    T_end: float = 0.25

    def __post_init__(self):
        if any(not h > 0 for h in self.h_levels):
            raise ValueError("h_levels must be positive")
        if isinstance(self.pde_refine, bool) or not isinstance(self.pde_refine, int) or self.pde_refine < 1:
            raise ValueError(f"pde_refine must be a positive integer (got {self.pde_refine!r})")
        if not self.T_end > 0:
            raise ValueError(f"compare T_end must be > 0 (got {self.T_end!r})")


@dataclass(frozen=True)
class ScenarioConfig:
    params: ModelParams
    grid: Grid = field(default_factory=Grid)
    initial: InitialCondition = field(default_factory=InitialCondition)
    T_end: float = 1.0
    solver: SolverConfig = field(default_factory=SolverConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0
    lattice: LatticeOptions = field(default_factory=LatticeOptions)
    stationary: StationaryOptions = field(default_factory=StationaryOptions)
    compare: CompareOptions = field(default_factory=CompareOptions)

    def __post_init__(self):
        if not self.T_end >= 0:
            raise ValueError(f"T_end must be >= 0 (got {self.T_end})")
