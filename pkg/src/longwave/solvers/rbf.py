"""RBF-FD differentiation weights: polyharmonic spline r^3 with quadratic augmentation."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from ..errors import DiscretizationError
from .grids import PointCloud

STENCIL_SIZE = 15
MAX_CONDITION = 1e12


def _monomials(X: np.ndarray) -> np.ndarray:
    x, y = X[:, 0], X[:, 1]
    return np.stack([np.ones_like(x), x, y, x * x, x * y, y * y], axis=1)


# operator values at the stencil centre (local coords, centre at origin)
_POLY_RHS = {
    "lap": np.array([0.0, 0, 0, 2, 0, 2]),
    "dx": np.array([0.0, 1, 0, 0, 0, 0]),
    "dy": np.array([0.0, 0, 1, 0, 0, 0]),
}
_SCALE_POWER = {"lap": 2, "dx": 1, "dy": 1}


def _phs_rhs(op: str, X: np.ndarray) -> np.ndarray:
    r = np.hypot(X[:, 0], X[:, 1])
    if op == "lap":
        return 9.0 * r  # Lap r^3 = 9 r in 2D
    comp = 0 if op == "dx" else 1
    return -3.0 * r * X[:, comp]


def stencil_weights(center: np.ndarray, neighbors: np.ndarray, ops, node: int = -1) -> dict:
    """Weights of each operator in ``ops`` for one stencil.

    Coordinates are shifted to the centre and scaled by the stencil radius
    before the saddle-point system is solved.
    """
    X = neighbors - center
    scale = np.max(np.hypot(X[:, 0], X[:, 1]))
    X = X / scale
    k = len(X)
    D = np.hypot(X[:, None, 0] - X[None, :, 0], X[:, None, 1] - X[None, :, 1])
    P = _monomials(X)
    m = P.shape[1]
    A = np.zeros((k + m, k + m))
    A[:k, :k] = D**3
    A[:k, k:] = P
    A[k:, :k] = P.T
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise DiscretizationError(f"ill-conditioned RBF-FD stencil (cond={cond:.3g})", node)
    rhs = np.stack([np.concatenate([_phs_rhs(op, X), _POLY_RHS[op]]) for op in ops], axis=1)
    sol = np.linalg.solve(A, rhs)
    return {op: sol[:k, i] / scale ** _SCALE_POWER[op] for i, op in enumerate(ops)}


def assemble(cloud: PointCloud, ops, rows: np.ndarray | None = None, stencil_size: int = STENCIL_SIZE):
    """Sparse [n, n] matrices for each operator; rows outside ``rows`` stay empty."""
    coords = cloud.coords
    n = len(coords)
    rows = np.arange(n) if rows is None else np.asarray(rows)
    _, nbr = cKDTree(coords).query(coords[rows], k=min(stencil_size, n))
    data = {op: np.empty(nbr.shape) for op in ops}
    for r, (i, idx) in enumerate(zip(rows, nbr)):
        w = stencil_weights(coords[i], coords[idx], ops, node=int(i))
        for op in ops:
            data[op][r] = w[op]
    rr = np.repeat(rows, nbr.shape[1])
    cc = nbr.ravel()
    return {op: sp.csr_matrix((data[op].ravel(), (rr, cc)), shape=(n, n)) for op in ops}


def rbf_fd_laplacian(cloud: PointCloud, interior_only: bool = True) -> sp.csr_matrix:
    rows = cloud.interior if interior_only else None
    return assemble(cloud, ("lap",), rows)["lap"]


def rbf_fd_gradient(cloud: PointCloud) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    mats = assemble(cloud, ("dx", "dy"))
    return mats["dx"], mats["dy"]
