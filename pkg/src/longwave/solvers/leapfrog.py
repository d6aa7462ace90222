"""Explicit leapfrog for second-order-in-time systems  u'' = a(u, t)."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from ..errors import SolverBlowupError


def integrate(
    u0: np.ndarray,
    accel: Callable[[np.ndarray, float], np.ndarray],
    times: np.ndarray,
    max_step: float,
    constrain: Callable[[np.ndarray, float], None] | None = None,
    label: str = "leapfrog",
    damping: Callable[[np.ndarray], np.ndarray] | None = None,
):
    """Advance from rest (u'(0) = 0) and sample at ``times``.

    ``constrain(u, t)`` is called in place after every step (Dirichlet data).
    ``damping(v)`` adds a velocity-dependent term evaluated at the lagged
    velocity (u^n - u^{n-1}) / dt.
    Returns (snapshots, velocities, dt); velocities are the centred
    difference (u^{n+1} - u^{n-1}) / 2dt at each snapshot.
    """
    dt_snap = float(times[1] - times[0])
    substeps = max(1, math.ceil(dt_snap / max_step - 1e-9))
    dt = dt_snap / substeps
    n_steps = substeps * (len(times) - 1)

    snaps = np.empty((len(times),) + u0.shape)
    vels = np.empty_like(snaps)
    u_cur = np.array(u0, dtype=np.float64)
    # Taylor start with zero initial velocity
    u_next = u_cur + 0.5 * dt**2 * accel(u_cur, 0.0)
    if constrain is not None:
        constrain(u_next, dt)
    u_prev = u_next.copy()
    for step in range(n_steps + 1):
        t = step * dt
        if step > 0:
            a = accel(u_cur, t)
            if damping is not None:
                a = a + damping((u_cur - u_prev) / dt)
            u_next = 2 * u_cur - u_prev + dt**2 * a
            if constrain is not None:
                constrain(u_next, t + dt)
        if step % substeps == 0:
            j = step // substeps
            if not np.all(np.isfinite(u_cur)):
                raise SolverBlowupError(f"{label} state became non-finite", t)
            snaps[j] = u_cur
            vels[j] = (u_next - u_prev) / (2 * dt)
        u_prev, u_cur = u_cur, u_next
    return snaps, vels, dt
