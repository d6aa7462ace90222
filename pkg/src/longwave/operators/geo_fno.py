"""Geo-FNO: learned deformation of scattered nodes onto a rectangular latent grid.

Node values are scattered onto the latent grid with normalized Gaussian
weights, processed by an FNO-2D, and gathered back to the nodes with the
same kernel. Both normalizations make the weights a partition of unity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
from scipy.spatial import cKDTree

from ..errors import ParameterError, ShapeError
from .fno import FNO, FnoConfig


@dataclass
class GeoFnoConfig:
    base: FnoConfig
    latent_grid: tuple[int, int] = (32, 32)
    deform_layers: list[int] = field(default_factory=lambda: [32, 32])
    bandwidth: float = 0.0  # 0 -> one latent grid spacing

    def __post_init__(self):
        if isinstance(self.base, dict):
            self.base = FnoConfig(**self.base)
        if self.base.variant != "fno2d":
            raise ParameterError("the Geo-FNO base must be fno2d")
        self.latent_grid = tuple(int(g) for g in self.latent_grid)
        if len(self.latent_grid) != 2 or min(self.latent_grid) < 2:
            raise ParameterError("latent_grid must be two extents of at least 2")

    def to_dict(self) -> dict:
        return {
            "base": self.base.to_dict(),
            "latent_grid": list(self.latent_grid),
            "deform_layers": list(self.deform_layers),
            "bandwidth": self.bandwidth,
        }


class Deformation(nn.Module):
    """x -> x + MLP(x); the last layer starts at zero so the map starts as the identity."""

    def __init__(self, widths: list[int]):
        super().__init__()
        dims = [2] + list(widths) + [2]
        mods = []
        for i in range(len(dims) - 1):
            mods.append(nn.Linear(dims[i], dims[i + 1]))
            if i < len(dims) - 2:
                mods.append(nn.Tanh())
        nn.init.zeros_(mods[-1].weight)
        nn.init.zeros_(mods[-1].bias)
        self.net = nn.Sequential(*mods)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.net(x)


class GeoFNO(nn.Module):
    def __init__(self, cfg: GeoFnoConfig, coords):
        super().__init__()
        self.cfg = cfg
        coords = torch.as_tensor(np.asarray(coords), dtype=torch.get_default_dtype())
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ShapeError(f"node coordinates must be [n, 2], got {tuple(coords.shape)}")
        self.register_buffer("coords", coords)
        gx, gy = cfg.latent_grid
        g = torch.stack(
            torch.meshgrid(torch.linspace(0, 1, gx), torch.linspace(0, 1, gy), indexing="ij"), dim=-1
        ).reshape(-1, 2)
        self.register_buffer("latent_points", g.to(coords.dtype))
        h = cfg.bandwidth or 1.0 / (max(gx, gy) - 1)
        self.log_bandwidth = nn.Parameter(torch.tensor(math.log(h), dtype=coords.dtype))
        self.deform = Deformation(cfg.deform_layers)
        self.fno = FNO(cfg.base)

    def latent_coords(self, x: torch.Tensor | None = None) -> torch.Tensor:
        return self.deform(self.coords if x is None else x)

    def kernel_logits(self) -> torch.Tensor:
        """[n_nodes, n_grid] Gaussian log-weights between deformed nodes and grid points."""
        z = self.latent_coords()
        d2 = ((z[:, None, :] - self.latent_points[None, :, :]) ** 2).sum(-1)
        return -0.5 * d2 * torch.exp(-2 * self.log_bandwidth)

    def scatter(self, u: torch.Tensor, logits: torch.Tensor) -> torch.Tensor:
        """[B, C, n_nodes] -> [B, C, gx, gy]; weights normalized over nodes."""
        w = torch.softmax(logits, dim=0)
        return (u @ w).reshape(*u.shape[:2], *self.cfg.latent_grid)

    def gather(self, v: torch.Tensor, logits: torch.Tensor) -> torch.Tensor:
        """[B, C, gx, gy] -> [B, C, n_nodes]; weights normalized over grid points."""
        w = torch.softmax(logits, dim=1)
        return v.flatten(2) @ w.T

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        if u.ndim != 3 or u.shape[2] != self.coords.shape[0]:
            raise ShapeError(f"expected [batch, channels, {self.coords.shape[0]}], got {tuple(u.shape)}")
        logits = self.kernel_logits()
        return self.gather(self.fno(self.scatter(u, logits)), logits)

    def min_latent_distance(self) -> float:
        """Smallest pairwise distance between deformed nodes (collapse diagnostic)."""
        with torch.no_grad():
            z = self.latent_coords().cpu().numpy()
        d, _ = cKDTree(z).query(z, k=2)
        return float(d[:, 1].min())


def geo_deform(model: GeoFNO, physical_coords) -> torch.Tensor:
    return model.latent_coords(torch.as_tensor(physical_coords, dtype=model.coords.dtype))
