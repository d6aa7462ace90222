"""Scattered nodes on the star-shaped domain r = 0.4 + 0.05 (sin 4t + cos 3t) about (0.5, 0.5)."""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from ..errors import ParameterError
from .grids import PointCloud

CENTER = np.array([0.5, 0.5])
# dart-throwing radius relative to the target spacing; repulsion then evens it out
DART_RADIUS = 0.75
MIN_INTERIOR = 10


def polar_radius(theta):
    return 0.4 + 0.05 * (np.sin(4 * theta) + np.cos(3 * theta))


def curve_point(theta):
    r = polar_radius(theta)
    return CENTER + np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)


def inside(points: np.ndarray, margin: float = 0.0) -> np.ndarray:
    """True where ``points`` lie strictly inside the curve, shrunk radially by ``margin``."""
    d = points - CENTER
    rho = np.hypot(d[:, 0], d[:, 1])
    theta = np.arctan2(d[:, 1], d[:, 0])
    return rho < polar_radius(theta) - margin


def domain_area() -> float:
    theta = np.linspace(0, 2 * np.pi, 20001)
    return float(0.5 * np.trapezoid(polar_radius(theta) ** 2, theta))


def boundary_nodes(spacing: float) -> np.ndarray:
    """Nodes at equal arc-length intervals, each exactly on the curve."""
    theta = np.linspace(0.0, 2 * np.pi, 40001)
    pts = curve_point(theta)
    seg = np.hypot(*np.diff(pts, axis=0).T)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    m = max(8, int(round(arc[-1] / spacing)))
    targets = np.arange(m) * (arc[-1] / m)
    return curve_point(np.interp(targets, arc, theta))


def _dart_throw(rng, spacing: float, bnd: np.ndarray) -> np.ndarray:
    radius = DART_RADIUS * spacing
    n_candidates = int(40 * domain_area() / spacing**2)
    cand = rng.uniform(0.05, 0.95, size=(n_candidates, 2))
    cand = cand[inside(cand, margin=0.5 * spacing)]
    cand = cand[cKDTree(bnd).query(cand)[0] > 0.6 * spacing]

    cell = radius / np.sqrt(2)
    ncell = int(np.ceil(1.0 / cell)) + 1
    occupied = -np.ones((ncell, ncell), dtype=np.int64)
    accepted = []
    for p in cand:
        i, j = int(p[0] / cell), int(p[1] / cell)
        ok = True
        for a in range(max(i - 2, 0), min(i + 3, ncell)):
            for b in range(max(j - 2, 0), min(j + 3, ncell)):
                k = occupied[a, b]
                if k >= 0 and (accepted[k][0] - p[0]) ** 2 + (accepted[k][1] - p[1]) ** 2 < radius**2:
                    ok = False
                    break
            if not ok:
                break
        if ok:
            occupied[i, j] = len(accepted)
            accepted.append(p)
    return np.array(accepted).reshape(-1, 2)


def _repel(interior: np.ndarray, bnd: np.ndarray, spacing: float, sweeps: int) -> np.ndarray:
    """Lloyd-style smoothing: push each node away from neighbours closer than the target spacing."""
    reach = 1.2 * spacing
    for _ in range(sweeps):
        allpts = np.vstack([interior, bnd])
        tree = cKDTree(allpts)
        pairs = tree.query_pairs(reach, output_type="ndarray")
        disp = np.zeros_like(allpts)
        d = allpts[pairs[:, 0]] - allpts[pairs[:, 1]]
        dist = np.hypot(d[:, 0], d[:, 1])[:, None]
        push = 0.1 * (reach - dist) * d / dist
        np.add.at(disp, pairs[:, 0], push)
        np.add.at(disp, pairs[:, 1], -push)
        moved = interior + disp[: len(interior)]
        ok = inside(moved, margin=0.3 * spacing)
        interior = np.where(ok[:, None], moved, interior)
    return interior


def quadrature_weights(coords: np.ndarray, spacing: float, refine: int = 6) -> np.ndarray:
    """Areas of node Voronoi cells clipped to the domain, on a background lattice."""
    h = spacing / refine
    g = np.arange(h / 2, 1.0, h)
    X, Y = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    pts = pts[inside(pts)]
    owner = cKDTree(coords).query(pts)[1]
    w = np.bincount(owner, minlength=len(coords)) * h * h
    return w * (domain_area() / w.sum())


def generate_irregular_nodes(target_spacing: float, seed: int = 0, sweeps: int = 5) -> PointCloud:
    if not 0 < target_spacing < 0.1:
        raise ParameterError(f"target_spacing must lie in (0, 0.1), got {target_spacing}")
    rng = np.random.default_rng(seed)
    bnd = boundary_nodes(target_spacing)
    interior = _dart_throw(rng, target_spacing, bnd)
    if len(interior) < MIN_INTERIOR:
        raise ParameterError(f"spacing {target_spacing} leaves only {len(interior)} interior nodes")
    interior = _repel(interior, bnd, target_spacing, sweeps)
    coords = np.vstack([bnd, interior])
    mask = np.zeros(len(coords), dtype=bool)
    mask[: len(bnd)] = True
    cloud = PointCloud(coords, mask, target_spacing)
    cloud.weights = quadrature_weights(coords, target_spacing)
    return cloud
