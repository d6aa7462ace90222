"""DeepONet: branch net on sensor values, trunk net on query coordinates."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
import torch.nn as nn

from ..errors import ParameterError, ShapeError

log = logging.getLogger(__name__)


@dataclass
class DeepOnetConfig:
    branch_layers: list[int]
    trunk_layers: list[int]
    latent_dim: int
    sensor_count: int
    domain: tuple[tuple[float, float], ...] = ()

    def __post_init__(self):
        self.branch_layers = [int(w) for w in self.branch_layers]
        self.trunk_layers = [int(w) for w in self.trunk_layers]
        if self.branch_layers[0] != self.sensor_count:
            raise ParameterError("first branch width must equal sensor_count")
        if self.branch_layers[-1] != self.latent_dim or self.trunk_layers[-1] != self.latent_dim:
            raise ParameterError("branch and trunk must both end at latent_dim")
        if min(self.branch_layers + self.trunk_layers) < 1:
            raise ParameterError("layer widths must be positive")
        self.domain = tuple(tuple(map(float, b)) for b in self.domain)

    def to_dict(self) -> dict:
        return {
            "branch_layers": self.branch_layers,
            "trunk_layers": self.trunk_layers,
            "latent_dim": self.latent_dim,
            "sensor_count": self.sensor_count,
            "domain": [list(b) for b in self.domain],
        }


def mlp(widths: list[int]) -> nn.Sequential:
    mods = []
    for i in range(len(widths) - 1):
        mods.append(nn.Linear(widths[i], widths[i + 1]))
        if i < len(widths) - 2:
            mods.append(nn.Tanh())
    return nn.Sequential(*mods)


class DeepONet(nn.Module):
    def __init__(self, cfg: DeepOnetConfig):
        super().__init__()
        self.cfg = cfg
        self.branch = mlp(cfg.branch_layers)
        self.trunk = mlp(cfg.trunk_layers)
        self.bias = nn.Parameter(torch.zeros(()))

    def forward(self, sensors: torch.Tensor, coords: torch.Tensor) -> torch.Tensor:
        """sensors [B, sensor_count], coords [n_q, d] -> [B, n_q]."""
        if sensors.ndim != 2 or sensors.shape[1] != self.cfg.sensor_count:
            raise ShapeError(f"expected [batch, {self.cfg.sensor_count}] sensors, got {tuple(sensors.shape)}")
        if coords.ndim != 2 or coords.shape[1] != self.cfg.trunk_layers[0]:
            raise ShapeError(f"expected [n, {self.cfg.trunk_layers[0]}] query coords, got {tuple(coords.shape)}")
        if self.cfg.domain:
            lo = torch.tensor([b[0] for b in self.cfg.domain], dtype=coords.dtype)
            hi = torch.tensor([b[1] for b in self.cfg.domain], dtype=coords.dtype)
            outside = int(((coords < lo) | (coords > hi)).any(dim=1).sum())
            if outside:
                log.info("%d query points lie outside the declared domain", outside)
        return self.branch(sensors) @ self.trunk(coords).T + self.bias
