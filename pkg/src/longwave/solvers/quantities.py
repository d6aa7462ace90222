"""Conserved quantities: KdV invariants and the nonlinear-wave energy."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..errors import ParameterError, ShapeError
from .grids import GridSpec1D, GridSpec2D, PointCloud
from .kdv import spectral_derivative


def conserved_quantities_kdv(u, delta: float = 1.0) -> tuple[float, float, float]:
    """(E1, E2, E3) of a periodic field on [0, 1) by the rectangle rule.

    E3 = int u^3/3 - delta^2 u_x^2 uses the spectral derivative. It is the
    invariant of u_t + u u_x + delta^2 u_xxx = 0; ``delta=1`` gives the
    unscaled form.
    """
    values = np.asarray(getattr(u, "values", u), dtype=np.float64)
    if values.ndim != 1:
        raise ParameterError("KdV quantities need a 1D periodic field")
    if not np.all(np.isfinite(values)):
        raise ParameterError("field contains non-finite values")
    ux = spectral_derivative(values)
    E1 = float(np.mean(values))
    E2 = float(np.mean(values**2))
    E3 = float(np.mean(values**3 / 3 - delta**2 * ux**2))
    return E1, E2, E3


def sine_gordon_potential(u):
    return 1 - np.cos(u)


def klein_gordon_potential(u):
    return 0.25 * u**4


POTENTIALS: dict[str, Callable] = {
    "sine_gordon": sine_gordon_potential,
    "klein_gordon": klein_gordon_potential,
}


def grid_gradient(u: np.ndarray, grid: GridSpec2D) -> tuple[np.ndarray, np.ndarray]:
    """Central differences; the mirror closure makes normal derivatives vanish on edges."""
    p = np.pad(u, [(0, 0)] * (u.ndim - 2) + [(1, 1), (1, 1)], mode="reflect")
    gx = (p[..., 2:, 1:-1] - p[..., :-2, 1:-1]) / (2 * grid.hx)
    gy = (p[..., 1:-1, 2:] - p[..., 1:-1, :-2]) / (2 * grid.hy)
    return gx, gy


def wave_energy(u_t, u, space, F: Callable = sine_gordon_potential, gradient_ops=None) -> float:
    """Quadrature of (u_t)^2 + |grad u|^2 + 2 F(u) over the domain.

    On a point cloud the gradient comes from RBF-FD weights; pass prebuilt
    ``gradient_ops=(Dx, Dy)`` to avoid reassembling them.
    """
    u = np.asarray(u, dtype=np.float64)
    u_t = np.asarray(u_t, dtype=np.float64)
    if u.shape != u_t.shape or u.shape != space.shape:
        raise ShapeError(f"u {u.shape}, u_t {u_t.shape} and space {space.shape} must agree")
    if isinstance(space, GridSpec2D):
        gx, gy = grid_gradient(u, space)
    elif isinstance(space, PointCloud):
        if gradient_ops is None:
            from .rbf import rbf_fd_gradient

            gradient_ops = rbf_fd_gradient(space)
        Dx, Dy = gradient_ops
        gx, gy = Dx @ u, Dy @ u
    elif isinstance(space, GridSpec1D):
        gx = spectral_derivative(u)
        gy = np.zeros_like(u)
    else:
        raise ParameterError(f"unsupported space {type(space).__name__}")
    density = u_t**2 + gx**2 + gy**2 + 2 * F(u)
    return float(np.sum(space.quadrature_weights() * density))


def trajectory_energy(traj, F: Callable | None = None, gradient_ops=None) -> np.ndarray:
    """Energy at each snapshot, with u_t from central differences of snapshots."""
    F = F or POTENTIALS[traj.equation]
    if isinstance(traj.space, PointCloud) and gradient_ops is None:
        from .rbf import rbf_fd_gradient

        gradient_ops = rbf_fd_gradient(traj.space)
    u_t = np.gradient(traj.u, traj.times, axis=0)
    return np.array(
        [wave_energy(u_t[j], traj.u[j], traj.space, F, gradient_ops) for j in range(len(traj.times))]
    )
