"""Spatial discretization descriptors and the trajectory container."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ParameterError, ShapeError

EQUATIONS = ("kdv", "sine_gordon", "klein_gordon")


@dataclass(frozen=True)
class GridSpec1D:
    """Uniform periodic grid on [0, 1) with ``n`` points."""

    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ParameterError(f"1D grid needs at least 2 points, got {self.n}")

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.n) / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,)

    def coords(self) -> np.ndarray:
        return self.x[:, None]

    def quadrature_weights(self) -> np.ndarray:
        return np.full(self.n, self.spacing)

    def describe(self) -> dict:
        return {"kind": "grid1d", "n": self.n, "domain": [0.0, 1.0]}


@dataclass(frozen=True)
class GridSpec2D:
    """Tensor grid on [0, 1]^2 including the boundary points."""

    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ParameterError(f"2D grid needs at least 2x2 points, got {self.nx}x{self.ny}")

    @property
    def hx(self) -> float:
        return 1.0 / (self.nx - 1)

    @property
    def hy(self) -> float:
        return 1.0 / (self.ny - 1)

    @property
    def spacing(self) -> float:
        return min(self.hx, self.hy)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.nx, self.ny)

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        return np.linspace(0.0, 1.0, self.nx), np.linspace(0.0, 1.0, self.ny)

    def coords(self) -> np.ndarray:
        x, y = self.axes()
        X, Y = np.meshgrid(x, y, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def quadrature_weights(self) -> np.ndarray:
        """Tensor trapezoid weights; they integrate constants exactly."""
        wx = np.full(self.nx, self.hx)
        wx[[0, -1]] *= 0.5
        wy = np.full(self.ny, self.hy)
        wy[[0, -1]] *= 0.5
        return np.outer(wx, wy)

    def describe(self) -> dict:
        return {"kind": "grid2d", "nx": self.nx, "ny": self.ny, "domain": [[0.0, 1.0], [0.0, 1.0]]}


@dataclass(eq=False)
class PointCloud:
    """Scattered nodes on an irregular planar domain.

    ``weights`` are per-node quadrature weights (areas); they are filled in by
    the node generator and may be absent for hand-built clouds.
    """

    coords: np.ndarray
    boundary_mask: np.ndarray
    target_spacing: float
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.boundary_mask = np.asarray(self.boundary_mask, dtype=bool)
        if self.coords.ndim != 2 or self.coords.shape[1] != 2:
            raise ShapeError(f"point coords must be [n, 2], got {self.coords.shape}")
        if self.boundary_mask.shape != (len(self.coords),):
            raise ShapeError("boundary_mask must have one entry per node")

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,)

    @property
    def spacing(self) -> float:
        return self.target_spacing

    @property
    def interior(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    @property
    def boundary(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask)

    def quadrature_weights(self) -> np.ndarray:
        if self.weights is None:
            raise ParameterError("point cloud carries no quadrature weights")
        return self.weights

    def describe(self) -> dict:
        return {
            "kind": "cloud",
            "n": self.n,
            "n_boundary": int(self.boundary_mask.sum()),
            "target_spacing": self.target_spacing,
        }


Space = GridSpec1D | GridSpec2D | PointCloud


@dataclass(eq=False)
class Trajectory:
    """One solved sample: snapshots ``u[t_index, dof...]`` at ``times``."""

    space: Space
    times: np.ndarray
    u: np.ndarray
    equation: str
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.equation not in EQUATIONS:
            raise ParameterError(f"unknown equation {self.equation!r}")
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.u.shape[0] != len(self.times) or self.u.shape[1:] != self.space.shape:
            raise ShapeError(
                f"snapshots {self.u.shape} do not match times {len(self.times)} x space {self.space.shape}"
            )

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


def snapshot_times(T: float, n_snapshots: int) -> np.ndarray:
    """Uniform output times on [0, T): ``t_j = j T / n``."""
    if n_snapshots < 2:
        raise ParameterError("need at least 2 snapshots")
    if T <= 0:
        raise ParameterError("T must be positive")
    return np.arange(n_snapshots) * (T / n_snapshots)
