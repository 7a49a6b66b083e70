"""Face/cell stencils shared by the steppers and the diagnostics.

x-faces: array ``(Nx, Ny)``, entry ``i`` is the face between cells ``i`` and
``i+1`` (periodic wrap).  y-faces: array ``(Nx, Ny+1)``, entry ``j`` is the
face below cell ``j``; entries ``0`` and ``Ny`` are the walls.
"""
from __future__ import annotations

import numpy as np


def right(q: np.ndarray) -> np.ndarray:
    """``q[i+1, j]`` with periodic wrap."""
    return np.roll(q, -1, axis=0)


def left(q: np.ndarray) -> np.ndarray:
    return np.roll(q, 1, axis=0)


def diff_x(q: np.ndarray, dx: float) -> np.ndarray:
    return (right(q) - q) / dx


def mean_x(q: np.ndarray) -> np.ndarray:
    return 0.5 * (q + right(q))


def y_faces(interior: np.ndarray) -> np.ndarray:
    """Pad ``(Nx, Ny-1)`` interior face values with zero wall faces."""
    nx, m = interior.shape
    out = np.zeros((nx, m + 2))
    out[:, 1:-1] = interior
    return out


def lower(q: np.ndarray) -> np.ndarray:
    """Cell values just below each interior y-face, shape ``(Nx, Ny-1)``."""
    return q[:, :-1]


def upper(q: np.ndarray) -> np.ndarray:
    return q[:, 1:]


def diff_y(q: np.ndarray, dy: float) -> np.ndarray:
    """Face differences with zeros on the walls (no-flux)."""
    return y_faces((upper(q) - lower(q)) / dy)


def mean_y(q: np.ndarray) -> np.ndarray:
    """Face means; wall faces take the adjacent cell value."""
    out = np.empty((q.shape[0], q.shape[1] + 1))
    out[:, 1:-1] = 0.5 * (lower(q) + upper(q))
    out[:, 0] = q[:, 0]
    out[:, -1] = q[:, -1]
    return out


def divergence(fx: np.ndarray, fy: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """Conservative cell divergence of face fluxes."""
    return (fx - left(fx)) / dx + (fy[:, 1:] - fy[:, :-1]) / dy


def laplacian(q: np.ndarray, dx: float, dy: float) -> np.ndarray:
    """5-point Laplacian, periodic in x and homogeneous Neumann in y."""
    return divergence(diff_x(q, dx), diff_y(q, dy), dx, dy)


def central_x(q: np.ndarray, dx: float) -> np.ndarray:
    """Cell-centred ``d/dx``."""
    return (right(q) - left(q)) / (2.0 * dx)


def central_y(q: np.ndarray, dy: float) -> np.ndarray:
    """Cell-centred ``d/dy``; one-sided at the walls (zero for a single row)."""
    return np.gradient(q, dy, axis=1) if q.shape[1] > 1 else np.zeros_like(q)
