"""Operator networks and the window-step wrappers around them."""

from .deeponet import DeepONet, DeepOnetConfig
from .fno import FNO, FnoConfig, coordinate_channels
from .geo_fno import GeoFNO, GeoFnoConfig, geo_deform
from .model import (
    OperatorModel,
    build_model,
    flat_parameters,
    full_prediction_window,
    load_checkpoint,
    load_flat_parameters,
    recurrent_rollout_window,
    save_checkpoint,
    validate_architecture,
)
from .spectral import SpectralConv, SpectralLayer, SpectralLayerSpec, spectral_conv_forward


def default_architecture(equation: str, kind: str, rollout_mode: str, window_l: int = 10) -> dict:
    """Full-size defaults, sized to land near the reference parameter budgets."""
    arch = {"kind": kind, "rollout_mode": rollout_mode, "window_l": window_l, "soft_clip": None}
    recurrent = rollout_mode == "recurrent"
    if kind == "fno":
        if equation == "kdv":
            arch["fno"] = (
                {"modes": [16], "width": 44, "n_layers": 4}
                if recurrent
                else {"modes": [4, 16], "width": 16, "n_layers": 4, "axis_kinds": ["time", "periodic"], "padding": [6, 0]}
            )
        else:
            arch["fno"] = (
                {"modes": [12, 12], "width": 20, "n_layers": 4, "axis_kinds": ["closed", "closed"], "padding": [8, 8]}
                if recurrent
                else {
                    "modes": [4, 8, 8],
                    "width": 12,
                    "n_layers": 4,
                    "axis_kinds": ["time", "closed", "closed"],
                    "padding": [6, 8, 8],
                }
            )
    elif kind == "deeponet":
        arch["deeponet"] = {"latent_dim": 100, "branch_hidden": [20], "trunk_hidden": [100, 100]}
    elif kind == "geo_fno":
        arch["geo_fno"] = {
            "base": {"modes": [12, 12], "width": 20, "n_layers": 4},
            "latent_grid": [40, 40],
            "deform_layers": [32, 32],
        }
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return arch


__all__ = [
    "DeepONet",
    "DeepOnetConfig",
    "FNO",
    "FnoConfig",
    "GeoFNO",
    "GeoFnoConfig",
    "OperatorModel",
    "SpectralConv",
    "SpectralLayer",
    "SpectralLayerSpec",
    "build_model",
    "coordinate_channels",
    "default_architecture",
    "flat_parameters",
    "full_prediction_window",
    "geo_deform",
    "load_checkpoint",
    "load_flat_parameters",
    "recurrent_rollout_window",
    "save_checkpoint",
    "spectral_conv_forward",
    "validate_architecture",
]
