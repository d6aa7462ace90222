"""Sine-Gordon  u_tt - Lap u + sin u = 0  on [0, 1]^2 with homogeneous Neumann data."""

from __future__ import annotations

import math

import numpy as np

from ..errors import ParameterError
from . import leapfrog
from .grids import GridSpec2D, Trajectory, snapshot_times

DEFAULT_CFL = 0.5
# 5-point Laplacian + leapfrog is stable for dt <= h / sqrt(2)
STABILITY_LIMIT = 1 / math.sqrt(2)


def neumann_laplacian(u: np.ndarray, grid: GridSpec2D) -> np.ndarray:
    """5-point Laplacian with ghost nodes mirrored across each edge."""
    p = np.pad(u, 1, mode="reflect")
    return (p[2:, 1:-1] - 2 * u + p[:-2, 1:-1]) / grid.hx**2 + (p[1:-1, 2:] - 2 * u + p[1:-1, :-2]) / grid.hy**2


def solve_sine_gordon(u0, T: float = 20.0, n_snapshots: int = 200, cfl: float = DEFAULT_CFL, forcing=None) -> Trajectory:
    """Leapfrog integration from rest; the internal step is at most ``cfl * h``.

    The trajectory's ``info["velocity"]`` holds solver-state velocities at the
    snapshot times.
    """
    values = np.asarray(getattr(u0, "values", u0), dtype=np.float64)
    if values.ndim != 2:
        raise ParameterError("sine-Gordon initial condition must be a 2D grid field")
    if not 0 < cfl <= STABILITY_LIMIT:
        raise ParameterError(f"cfl={cfl} violates the leapfrog stability limit {STABILITY_LIMIT:.4f}")
    grid = GridSpec2D(*values.shape)
    times = snapshot_times(T, n_snapshots)

    def accel(u, t):
        a = neumann_laplacian(u, grid) - np.sin(u)
        if forcing is not None:
            a = a + forcing(t)
        return a

    snaps, vels, dt = leapfrog.integrate(values, accel, times, cfl * grid.spacing, label="sine-Gordon")
    info = {"method": "leapfrog-fd5-neumann", "dt": dt, "cfl": cfl, "velocity": vels}
    return Trajectory(grid, times, snaps, "sine_gordon", info)
