"""Window-to-window operator models, rollout window steps, and checkpoints.

Architecture configs are plain dicts (JSON-serialisable)::

    {"kind": "fno" | "deeponet" | "geo_fno",
     "rollout_mode": "recurrent" | "full_prediction",
     "window_l": 10,
     "soft_clip": null | C,          # B * tanh(x / B) output stage, B = C * sup|u0|
     "fno": {...} | "deeponet": {...} | "geo_fno": {...}}

Windows are batched tensors [batch, l, dof...].
"""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Callable

import numpy as np
import torch
import torch.nn as nn

from ..errors import CorruptionError, ParameterError, RolloutDivergence, ShapeError
from ..solvers.grids import GridSpec1D, GridSpec2D, PointCloud
from .deeponet import DeepONet, DeepOnetConfig
from .fno import FNO, FnoConfig
from .geo_fno import GeoFNO, GeoFnoConfig

KINDS = ("fno", "deeponet", "geo_fno")
MODES = ("recurrent", "full_prediction")


def space_points(space) -> np.ndarray:
    """Node coordinates flattened to [dof, d], in the same order as the flattened field."""
    if isinstance(space, PointCloud):
        return space.coords
    if isinstance(space, (GridSpec1D, GridSpec2D)):
        c = np.asarray(space.coords())
        return c.reshape(-1, c.shape[-1])
    return np.asarray(space)


def space_extent(space) -> tuple[int, ...]:
    if isinstance(space, PointCloud):
        return (space.n,)
    return tuple(space.shape)


def validate_architecture(arch: dict) -> dict:
    arch = copy.deepcopy(arch)
    if arch.get("kind") not in KINDS:
        raise ParameterError(f"architecture.kind must be one of {KINDS}, got {arch.get('kind')!r}")
    if arch.get("rollout_mode") not in MODES:
        raise ParameterError(f"architecture.rollout_mode must be one of {MODES}, got {arch.get('rollout_mode')!r}")
    l = arch.get("window_l")
    if not isinstance(l, int) or l < 1:
        raise ParameterError("architecture.window_l must be a positive integer")
    if arch.get("soft_clip") is not None and not arch["soft_clip"] > 0:
        raise ParameterError("architecture.soft_clip must be positive or null")
    if arch["kind"] not in arch:
        raise ParameterError(f"architecture.{arch['kind']} block missing")
    return arch


def _fno_config(block: dict, arch: dict, spatial_dim: int) -> FnoConfig:
    l, recurrent = arch["window_l"], arch["rollout_mode"] == "recurrent"
    dim = spatial_dim if recurrent else spatial_dim + 1
    variant = {1: "fno1d", 2: "fno2d", 3: "fno3d"}.get(dim)
    if variant is None:
        raise ParameterError(f"no FNO variant for {dim} convolution axes")
    cfg = dict(block)
    cfg.setdefault("variant", variant)
    if cfg["variant"] != variant:
        raise ParameterError(f"{arch['rollout_mode']} on {spatial_dim}D data needs {variant}, got {cfg['variant']}")
    cfg.setdefault("in_channels", l if recurrent else 1)
    cfg.setdefault("out_channels", 1)
    if "layers" not in cfg:
        modes, width, n_layers = cfg.pop("modes"), cfg.pop("width"), cfg.pop("n_layers")
        cfg.pop("variant")
        return FnoConfig.uniform(variant, modes, width, n_layers, **cfg)
    return FnoConfig(**cfg)


class OperatorModel(nn.Module):
    """Normalisation, rollout mode and optional soft clipping around a core network.

    ``forward(window)`` maps raw windows [B, l, dof...] to raw predictions:
    [B, 1, dof...] in recurrent mode, [B, l, dof...] in full-prediction mode.
    """

    def __init__(self, arch: dict, points: np.ndarray, extent: tuple[int, ...], space_kind: str):
        super().__init__()
        self.arch = validate_architecture(arch)
        self.kind = self.arch["kind"]
        self.rollout_mode = self.arch["rollout_mode"]
        self.window_l = self.arch["window_l"]
        self.extent = tuple(int(n) for n in extent)
        self.space_kind = space_kind
        self.soft_clip = self.arch.get("soft_clip")
        self.register_buffer("norm_mean", torch.zeros(()))
        self.register_buffer("norm_std", torch.ones(()))
        self.register_buffer("data_sup", torch.ones(()))
        l, full = self.window_l, self.rollout_mode == "full_prediction"
        block = self.arch[self.kind]
        dof = int(np.prod(self.extent))

        if self.kind == "fno":
            if space_kind == "cloud":
                raise ParameterError("plain FNO needs a grid; use geo_fno on point clouds")
            self.config = _fno_config(block, self.arch, len(self.extent))
            self.core = FNO(self.config)
        elif self.kind == "deeponet":
            pts = torch.as_tensor(np.asarray(points), dtype=torch.get_default_dtype())
            if full:
                t = torch.arange(l, dtype=pts.dtype) / l
                pts = torch.cat(
                    [t.repeat_interleave(pts.shape[0])[:, None], pts.repeat(l, 1)], dim=1
                )
            self.register_buffer("query_coords", pts)
            cfg = dict(block)
            cfg.setdefault("sensor_count", l * dof)
            if "branch_layers" not in cfg:
                p = cfg.pop("latent_dim", 100)
                cfg["branch_layers"] = [l * dof] + list(cfg.pop("branch_hidden", [20])) + [p]
                cfg["trunk_layers"] = [pts.shape[1]] + list(cfg.pop("trunk_hidden", [100, 100])) + [p]
                cfg["latent_dim"] = p
            self.config = DeepOnetConfig(**cfg)
            if self.config.sensor_count != l * dof:
                raise ShapeError(f"sensor_count {self.config.sensor_count} != window dof {l * dof}")
            self.core = DeepONet(self.config)
        else:
            if space_kind != "cloud":
                raise ParameterError("geo_fno runs on point clouds")
            cfg = dict(block)
            base = dict(cfg.pop("base"))
            base.setdefault("in_channels", l)
            base.setdefault("out_channels", l if full else 1)
            base.setdefault("axis_kinds", ["closed", "closed"])
            if "layers" not in base:
                modes, width, n_layers = base.pop("modes"), base.pop("width"), base.pop("n_layers")
                base = FnoConfig.uniform("fno2d", modes, width, n_layers, **base)
            else:
                base = FnoConfig(**base)
            self.config = GeoFnoConfig(base=base, **cfg)
            self.core = GeoFNO(self.config, points)

    # -------------------------------------------------------------- plumbing
    @property
    def out_steps(self) -> int:
        return 1 if self.rollout_mode == "recurrent" else self.window_l

    def n_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def fit_normalization(self, inputs: np.ndarray) -> None:
        x = np.asarray(inputs, dtype=np.float64)
        std = float(x.std())
        self.norm_mean.fill_(float(x.mean()))
        self.norm_std.fill_(std if std > 0 else 1.0)
        self.data_sup.fill_(float(np.abs(x).max()) or 1.0)

    def _core(self, z: torch.Tensor) -> torch.Tensor:
        B, l = z.shape[:2]
        if self.kind == "fno":
            if self.rollout_mode == "recurrent":
                return self.core(z)
            return self.core(z.unsqueeze(1)).squeeze(1)
        if self.kind == "deeponet":
            out = self.core(z.reshape(B, -1), self.query_coords)
            return out.reshape(B, self.out_steps, *self.extent)
        return self.core(z)

    def forward(self, window: torch.Tensor, bound: torch.Tensor | None = None) -> torch.Tensor:
        expected = (self.window_l, *self.extent)
        if tuple(window.shape[1:]) != expected:
            raise ShapeError(f"{self.rollout_mode} model expects windows [batch, {expected}], got {tuple(window.shape)}")
        z = (window - self.norm_mean) / self.norm_std
        out = self._core(z) * self.norm_std + self.norm_mean
        if self.soft_clip is not None:
            if bound is None:
                raise ParameterError("a soft-clipped model needs the per-sample bound sup|u0|")
            B = (self.soft_clip * torch.as_tensor(bound, dtype=out.dtype)).reshape(-1, *([1] * (out.ndim - 1)))
            out = B * torch.tanh(out / B)
        return out

    def next_window(self, window: torch.Tensor, bound=None, clip_bound=None) -> torch.Tensor:
        if self.rollout_mode == "recurrent":
            return recurrent_rollout_window(lambda w: self(w, bound), window, clip_bound)
        return full_prediction_window(lambda w: self(w, bound), window, clip_bound)


def build_model(arch: dict, space) -> OperatorModel:
    kind = "cloud" if isinstance(space, PointCloud) else ("grid1d" if isinstance(space, GridSpec1D) else "grid2d")
    return OperatorModel(arch, space_points(space), space_extent(space), kind)


# ------------------------------------------------------------ window steps
def _clip(u: torch.Tensor, clip_bound) -> torch.Tensor:
    if clip_bound is None:
        return u
    b = torch.as_tensor(clip_bound, dtype=u.dtype)
    if b.ndim:
        b = b.reshape(-1, *([1] * (u.ndim - 1)))
    return torch.minimum(torch.maximum(u, -b), b)


def recurrent_rollout_window(predict: Callable, window: torch.Tensor, clip_bound=None) -> torch.Tensor:
    """l one-step predictions, each appended to the shifting window.

    ``predict`` maps [B, l, dof...] to the next snapshot, [B, dof...] or
    [B, 1, dof...]. Returns the l new snapshots [B, l, dof...].
    """
    l = window.shape[1]
    cur = window
    new = []
    for step in range(l):
        nxt = predict(cur)
        if nxt.ndim == window.ndim:
            nxt = nxt[:, 0]
        if not torch.isfinite(nxt).all():
            raise RolloutDivergence(step)
        nxt = _clip(nxt, clip_bound)
        new.append(nxt)
        cur = torch.cat([cur[:, 1:], nxt.unsqueeze(1)], dim=1)
    return torch.stack(new, dim=1)


def full_prediction_window(predict: Callable, window: torch.Tensor, clip_bound=None) -> torch.Tensor:
    out = predict(window)
    if out.shape != window.shape:
        raise ShapeError(f"full-prediction output {tuple(out.shape)} differs from window {tuple(window.shape)}")
    if not torch.isfinite(out).all():
        raise RolloutDivergence(0)
    return _clip(out, clip_bound)


# ------------------------------------------------------------ checkpoints
def flat_parameters(model: nn.Module) -> np.ndarray:
    return np.concatenate([p.detach().cpu().double().numpy().ravel() for p in model.parameters()])


def load_flat_parameters(model: nn.Module, flat: np.ndarray) -> None:
    flat = np.asarray(flat, dtype=np.float64)
    total = sum(p.numel() for p in model.parameters())
    if flat.size != total:
        raise CorruptionError(f"parameter vector holds {flat.size} values, architecture declares {total}")
    i = 0
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(torch.from_numpy(flat[i : i + p.numel()].reshape(p.shape)).to(p.dtype))
            i += p.numel()


def save_checkpoint(model: OperatorModel, path, provenance: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    flat = flat_parameters(model)
    flat.astype("<f8").tofile(path / "params.f64")
    buffers = {"points": _points_of(model)}
    np.savez(path / "buffers.npz", **buffers)
    config = {
        "architecture": model.arch,
        "extent": list(model.extent),
        "space_kind": model.space_kind,
        "n_parameters": int(flat.size),
        "normalization": {
            "mean": float(model.norm_mean),
            "std": float(model.norm_std),
            "data_sup": float(model.data_sup),
        },
        "provenance": provenance or {},
    }
    with open(path / "config.json", "w") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
    return path


def _points_of(model: OperatorModel) -> np.ndarray:
    if model.kind == "geo_fno":
        return model.core.coords.cpu().numpy()
    if model.kind == "deeponet":
        q = model.query_coords.cpu().numpy()
        return q[: q.shape[0] // model.window_l, 1:] if model.rollout_mode == "full_prediction" else q
    return np.zeros((0, len(model.extent)))


def load_checkpoint(path) -> OperatorModel:
    path = Path(path)
    try:
        config = json.loads((path / "config.json").read_text())
        points = np.load(path / "buffers.npz")["points"]
        flat = np.fromfile(path / "params.f64", dtype="<f8")
    except (FileNotFoundError, KeyError, ValueError) as exc:
        raise CorruptionError(f"unreadable checkpoint at {path}: {exc}") from exc
    model = OperatorModel(config["architecture"], points, tuple(config["extent"]), config["space_kind"])
    if config["n_parameters"] != flat.size:
        raise CorruptionError("checkpoint parameter count does not match its config")
    load_flat_parameters(model, flat)
    norm = config["normalization"]
    model.norm_mean.fill_(norm["mean"])
    model.norm_std.fill_(norm["std"])
    model.data_sup.fill_(norm["data_sup"])
    model.provenance = config.get("provenance", {})
    return model
