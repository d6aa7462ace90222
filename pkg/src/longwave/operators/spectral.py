"""N-dimensional truncated Fourier convolution."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ParameterError, ShapeError

ACTIVATIONS = {"gelu": F.gelu, "relu": F.relu, "identity": lambda z: z}


@dataclass(frozen=True)
class SpectralLayerSpec:
    modes: tuple[int, ...]
    width: int
    activation: str = "gelu"
    residual: bool = True

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(int(m) for m in self.modes))
        if self.width < 1:
            raise ParameterError("width must be positive")
        if not self.modes or min(self.modes) < 1:
            raise ParameterError(f"modes must be positive, got {self.modes}")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modes"] = list(self.modes)
        return d


def check_modes(modes: tuple[int, ...], extent: tuple[int, ...]) -> None:
    """The last (half-spectrum) axis keeps up to n//2+1 modes, the others up to n//2 on each side."""
    if len(modes) != len(extent):
        raise ShapeError(f"{len(modes)} mode counts for {len(extent)} spatial axes")
    for axis, (m, n) in enumerate(zip(modes, extent)):
        limit = n // 2 + 1 if axis == len(modes) - 1 else n // 2
        if m > limit:
            raise ParameterError(f"{m} modes exceed the Nyquist limit {limit} on axis {axis} (extent {n})")


class SpectralConv(nn.Module):
    """FFT, per-mode complex channel mixing on the retained low modes, inverse FFT.

    Weights are stored as real tensors with a trailing axis of 2 so every
    parameter is a real scalar. One weight block per corner of the retained
    frequency box (positive and negative frequencies on all but the last axis).
    """

    def __init__(self, in_channels: int, out_channels: int, modes: tuple[int, ...]):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.modes = tuple(modes)
        self.dim = len(modes)
        scale = 1.0 / (in_channels * out_channels)
        self.weights = nn.ParameterList(
            nn.Parameter(scale * torch.rand(in_channels, out_channels, *self.modes, 2))
            for _ in range(2 ** (self.dim - 1))
        )

    def _corners(self):
        for signs in itertools.product((1, -1), repeat=self.dim - 1):
            yield tuple(slice(0, m) if s > 0 else slice(-m, None) for s, m in zip(signs, self.modes[:-1])) + (
                slice(0, self.modes[-1]),
            )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        extent = tuple(z.shape[-self.dim :])
        check_modes(self.modes, extent)
        axes = tuple(range(-self.dim, 0))
        zh = torch.fft.rfftn(z, dim=axes)
        out = torch.zeros(z.shape[0], self.out_channels, *zh.shape[2:], dtype=zh.dtype, device=z.device)
        for w, idx in zip(self.weights, self._corners()):
            sel = (slice(None), slice(None)) + idx
            out[sel] = torch.einsum("bi...,io...->bo...", zh[sel], torch.view_as_complex(w))
        return torch.fft.irfftn(out, s=extent, dim=axes)


class SpectralLayer(nn.Module):
    """Spectral convolution plus optional pointwise-linear residual, then activation."""

    def __init__(self, spec: SpectralLayerSpec, in_channels: int | None = None):
        super().__init__()
        self.spec = spec
        cin = spec.width if in_channels is None else in_channels
        self.conv = SpectralConv(cin, spec.width, spec.modes)
        self.pointwise = nn.Linear(cin, spec.width) if spec.residual else None
        self.act = ACTIVATIONS[spec.activation]

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        y = self.conv(z)
        if self.pointwise is not None:
            y = y + self.pointwise(z.movedim(1, -1)).movedim(-1, 1)
        return self.act(y)


def spectral_conv_forward(layer: SpectralLayer, z: torch.Tensor) -> torch.Tensor:
    """Apply one layer to an unbatched latent field [channels, spatial...]."""
    return layer(z.unsqueeze(0)).squeeze(0)
