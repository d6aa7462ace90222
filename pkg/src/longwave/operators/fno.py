"""Fourier neural operators in one, two and three dimensions."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ParameterError, ShapeError
from .spectral import SpectralLayer, SpectralLayerSpec

VARIANTS = {"fno1d": 1, "fno2d": 2, "fno3d": 3}
# How a coordinate channel is laid out along an axis:
#   periodic -> arange(n)/n, closed -> linspace(0, 1, n), time -> arange(n)/n
AXIS_KINDS = ("periodic", "closed", "time")


@dataclass
class FnoConfig:
    variant: str
    layers: list[SpectralLayerSpec]
    in_channels: int
    out_channels: int
    lift_width: int = 0  # 0 -> width of the first spectral layer
    project_width: int = 128
    coord_channels: bool = True
    axis_kinds: tuple[str, ...] = ()
    padding: tuple[int, ...] = ()

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ParameterError(f"variant must be one of {list(VARIANTS)}, got {self.variant!r}")
        dim = VARIANTS[self.variant]
        self.layers = [l if isinstance(l, SpectralLayerSpec) else SpectralLayerSpec(**l) for l in self.layers]
        if not self.layers:
            raise ParameterError("at least one spectral layer is required")
        for l in self.layers:
            if len(l.modes) != dim:
                raise ParameterError(f"{self.variant} needs {dim} mode counts per layer, got {l.modes}")
        self.axis_kinds = tuple(self.axis_kinds) or ("periodic",) * dim
        self.padding = tuple(int(p) for p in self.padding) or (0,) * dim
        if len(self.axis_kinds) != dim or len(self.padding) != dim:
            raise ParameterError("axis_kinds and padding need one entry per axis")
        if any(k not in AXIS_KINDS for k in self.axis_kinds):
            raise ParameterError(f"axis kinds must be in {AXIS_KINDS}")
        if min(self.in_channels, self.out_channels, self.project_width) < 1:
            raise ParameterError("channel counts must be positive")

    @property
    def dim(self) -> int:
        return VARIANTS[self.variant]

    @classmethod
    def uniform(cls, variant, modes, width, n_layers, in_channels, out_channels, **kw) -> "FnoConfig":
        """GELU on every layer except the last, which is linear."""
        layers = [
            SpectralLayerSpec(tuple(modes), width, "gelu" if i < n_layers - 1 else "identity")
            for i in range(n_layers)
        ]
        return cls(variant, layers, in_channels, out_channels, **kw)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "layers": [l.to_dict() for l in self.layers],
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "lift_width": self.lift_width,
            "project_width": self.project_width,
            "coord_channels": self.coord_channels,
            "axis_kinds": list(self.axis_kinds),
            "padding": list(self.padding),
        }


def axis_coords(kind: str, n: int, dtype=torch.float32) -> torch.Tensor:
    if kind == "closed":
        return torch.linspace(0.0, 1.0, n, dtype=dtype)
    return torch.arange(n, dtype=dtype) / n


def coordinate_channels(kinds, extent, dtype=torch.float32) -> torch.Tensor:
    """[d, *extent] grid of per-axis coordinates."""
    axes = [axis_coords(k, n, dtype) for k, n in zip(kinds, extent)]
    return torch.stack(torch.meshgrid(*axes, indexing="ij"))


class FNO(nn.Module):
    """lift -> spectral layers -> projection MLP, on [batch, channels, spatial...]."""

    def __init__(self, cfg: FnoConfig):
        super().__init__()
        self.cfg = cfg
        width = cfg.lift_width or cfg.layers[0].width
        n_in = cfg.in_channels + (cfg.dim if cfg.coord_channels else 0)
        self.lift = nn.Linear(n_in, width)
        blocks = []
        for spec in cfg.layers:
            blocks.append(SpectralLayer(spec, in_channels=width))
            width = spec.width
        self.blocks = nn.ModuleList(blocks)
        self.proj1 = nn.Linear(width, cfg.project_width)
        self.proj2 = nn.Linear(cfg.project_width, cfg.out_channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        d = self.cfg.dim
        if x.ndim != d + 2 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(
                f"{self.cfg.variant} expects [batch, {self.cfg.in_channels}, {d} spatial axes], got {tuple(x.shape)}"
            )
        extent = tuple(x.shape[2:])
        if self.cfg.coord_channels:
            grid = coordinate_channels(self.cfg.axis_kinds, extent, x.dtype).to(x.device)
            x = torch.cat([x, grid.expand(x.shape[0], *grid.shape)], dim=1)
        z = self.lift(x.movedim(1, -1)).movedim(-1, 1)
        pad = self.cfg.padding
        if any(pad):
            # F.pad lists axes last-first
            z = F.pad(z, [p for q in reversed(pad) for p in (0, q)])
        for block in self.blocks:
            z = block(z)
        if any(pad):
            z = z[(slice(None), slice(None)) + tuple(slice(0, n) for n in extent)]
        z = z.movedim(1, -1)
        return self.proj2(F.gelu(self.proj1(z))).movedim(-1, 1)
