"""Klein-Gordon  u_tt - Lap u + u^3 = 0  on scattered nodes with Dirichlet data."""

from __future__ import annotations

import math

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, eigs

from ..errors import ParameterError
from . import leapfrog
from .grids import PointCloud, Trajectory, snapshot_times
from .rbf import rbf_fd_laplacian

STEP_FACTOR = 0.25
# hyperviscosity eps = HV_FACTOR * h^4 damps the spurious complex modes of the
# non-symmetric RBF-FD Laplacian that leapfrog would otherwise amplify
HV_FACTOR = 0.2
# the damping is explicit (lagged velocity), so dt * eps * rho(L)^2 must stay
# bounded; only binds on coarse clouds where the step is long
HV_STEP_LIMIT = 1.0


def spectral_radius(L) -> float:
    try:
        return float(np.abs(eigs(L, k=1, which="LM", return_eigenvectors=False, tol=1e-3, maxiter=5000)[0]))
    except ArpackNoConvergence:
        # Gershgorin bound: safe, only makes the damping cap stricter
        return float(abs(L).sum(axis=1).max())


def solve_klein_gordon(
    u0_values,
    cloud: PointCloud,
    T: float = 10.0,
    n_snapshots: int = 200,
    laplacian=None,
    forcing=None,
    boundary=None,
    step_factor: float = STEP_FACTOR,
    hyperviscosity: float | None = None,
) -> Trajectory:
    """Leapfrog in time with an RBF-FD Laplacian at the interior nodes.

    Boundary nodes keep their initial values unless ``boundary(t)`` supplies
    time-dependent Dirichlet data. ``forcing(t)`` adds a source term (used by
    manufactured-solution checks). ``laplacian`` may be passed to reuse an
    assembled operator across samples.

    A velocity damping  -eps Lap^2 u_t  (default eps = 0.2 h^4) keeps the
    explicit scheme stable; pass ``hyperviscosity=0`` to disable it.
    """
    u0 = np.asarray(u0_values, dtype=np.float64)
    if u0.shape != (cloud.n,):
        raise ParameterError(f"u0 has shape {u0.shape}, cloud has {cloud.n} nodes")
    if not 0 < step_factor <= STEP_FACTOR:
        raise ParameterError(f"step_factor must lie in (0, {STEP_FACTOR}]")
    L = rbf_fd_laplacian(cloud) if laplacian is None else laplacian
    bidx = cloud.boundary
    fixed = u0[bidx].copy()
    times = snapshot_times(T, n_snapshots)
    if hyperviscosity is None:
        eps = HV_FACTOR * cloud.target_spacing**4
        dt_snap = times[1] - times[0]
        dt = dt_snap / max(1, math.ceil(dt_snap / (step_factor * cloud.target_spacing) - 1e-9))
        rho = spectral_radius(L)
        eps = min(eps, HV_STEP_LIMIT / (dt * rho**2))
    else:
        eps = hyperviscosity
    if eps < 0:
        raise ParameterError("hyperviscosity must be non-negative")

    def damping(v):
        return -eps * (L @ (L @ v))

    def accel(u, t):
        a = L @ u - u**3
        if forcing is not None:
            a = a + forcing(t)
        a[bidx] = 0.0
        return a

    def constrain(u, t):
        u[bidx] = fixed if boundary is None else boundary(t)[bidx]

    snaps, vels, dt = leapfrog.integrate(
        u0,
        accel,
        times,
        step_factor * cloud.target_spacing,
        constrain,
        label="Klein-Gordon",
        damping=damping if eps > 0 else None,
    )
    info = {"method": "leapfrog-rbffd-phs3-deg2", "dt": dt, "hyperviscosity": eps, "velocity": vels}
    return Trajectory(cloud, times, snaps, "klein_gordon", info)
