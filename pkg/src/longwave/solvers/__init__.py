"""Reference solvers for the three wave problems and their conserved quantities."""

from .grids import GridSpec1D, GridSpec2D, PointCloud, Space, Trajectory, snapshot_times
from .kdv import solve_kdv
from .klein_gordon import solve_klein_gordon
from .nodes import generate_irregular_nodes
from .quantities import (
    POTENTIALS,
    conserved_quantities_kdv,
    klein_gordon_potential,
    sine_gordon_potential,
    trajectory_energy,
    wave_energy,
)
from .rbf import rbf_fd_gradient, rbf_fd_laplacian
from .sine_gordon import solve_sine_gordon

__all__ = [
    "GridSpec1D",
    "GridSpec2D",
    "POTENTIALS",
    "PointCloud",
    "Space",
    "Trajectory",
    "conserved_quantities_kdv",
    "generate_irregular_nodes",
    "klein_gordon_potential",
    "rbf_fd_gradient",
    "rbf_fd_laplacian",
    "sine_gordon_potential",
    "snapshot_times",
    "solve_kdv",
    "solve_klein_gordon",
    "solve_sine_gordon",
    "trajectory_energy",
    "wave_energy",
]
