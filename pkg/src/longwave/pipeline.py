"""Configuration handling and the generate / train / rollout drivers behind the CLI.

Config files are JSON. Every command reads the blocks it needs and ignores
the rest, so one file can describe a whole experiment::

    {
      "seed": 0,
      "equation": {...},        # generate
      "dataset": "data/kdv",    # train, rollout
      "architecture": {...},    # train
      "policy": {...},          # train
      "loss": {...},            # train
      "train": {...},           # train
      "checkpoint": "runs/x",   # rollout ("oracle" replays the dataset)
      "rollout": {...}          # rollout
    }

All randomness comes from the top-level seed through ``derive_seed``.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import torch

from .dataset import SamplingPolicy, TrajectoryStore, read_store, write_store
from .errors import ParameterError, ShapeError
from .evaluation import RANGES, ClipSpec, clip_prediction, evaluate_on_store, write_plot_payload, write_report
from .operators import default_architecture, load_checkpoint, save_checkpoint, validate_architecture
from .random_fields import (
    GrfSpec,
    evaluate_neumann_2d,
    kl_coefficients_neumann_2d,
    kl_coefficients_periodic_1d,
    synthesize_neumann_2d,
    synthesize_periodic_1d,
)
from .solvers import (
    POTENTIALS,
    Trajectory,
    conserved_quantities_kdv,
    generate_irregular_nodes,
    rbf_fd_gradient,
    rbf_fd_laplacian,
    solve_kdv,
    solve_klein_gordon,
    solve_sine_gordon,
    wave_energy,
)
from .training import QUANTITIES, LossSpec, TrainConfig, train_model

log = logging.getLogger(__name__)

EQUATIONS = ("kdv", "sine_gordon", "klein_gordon")

# full-size equation blocks; configs only need to name the equation
EQUATION_DEFAULTS = {
    "kdv": {
        "grf": {"sigma2": 7.0**4, "tau": 7.0, "gamma": 2.5},
        "resolution": 1024,
        "T": 1.0,
        "n_snapshots": 100,
        "n_samples": 1200,
        "delta": 0.01,
    },
    "sine_gordon": {
        "grf": {"sigma2": 1e4, "tau": 8.0, "gamma": 6.0},
        "resolution": 64,
        "T": 20.0,
        "n_snapshots": 200,
        "n_samples": 600,
    },
    "klein_gordon": {
        "grf": {"sigma2": 1e4, "tau": 8.0, "gamma": 6.0},
        "grf_modes": 64,
        "target_spacing": 0.016,
        "T": 10.0,
        "n_snapshots": 200,
        "n_samples": 600,
    },
}

LAPLACIAN_CONVENTION = {
    "kdv": "(2 pi k)^2 Fourier modes on [0,1)",
    "sine_gordon": "pi^2 (k1^2 + k2^2) cosine modes on [0,1]^2",
    "klein_gordon": "pi^2 (k1^2 + k2^2) cosine modes on [0,1]^2, evaluated at the nodes",
}


class ConfigError(ParameterError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def derive_seed(seed: int, name: str) -> int:
    """Fixed derivation of a component seed from the top-level seed."""
    digest = hashlib.sha256(f"{int(seed)}/{name}".encode()).digest()
    return int.from_bytes(digest[:4], "little") & 0x7FFFFFFF


# ------------------------------------------------------------------ config io
def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError("--config", f"no such file {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("--config", f"invalid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("--config", "top level must be an object")
    return cfg


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` overrides; values are parsed as JSON when possible."""
    cfg = copy.deepcopy(cfg)
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError("--set", f"expected key=value, got {item!r}")
        parts = key.split(".")
        node = cfg
        for depth, p in enumerate(parts[:-1]):
            nxt = node.get(p)
            if nxt is None:
                nxt = node[p] = {}
            if not isinstance(nxt, dict):
                raise ConfigError(".".join(parts[: depth + 1]), "is not an object")
            node = nxt
        node[parts[-1]] = parse_value(raw)
    return cfg


def _block(cfg: dict, name: str, required: bool = True) -> dict:
    value = cfg.get(name)
    if value is None:
        if required:
            raise ConfigError(name, "missing block")
        return {}
    if not isinstance(value, dict):
        raise ConfigError(name, "must be an object")
    return value


def _wrap(path: str, fn, *args, **kwargs):
    """Run a constructor and re-raise its validation errors under ``path``."""
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except (ParameterError, TypeError, ValueError) as exc:
        raise ConfigError(path, str(exc)) from exc


def _number(block: dict, key: str, path: str, kind=float, positive=True):
    v = block.get(key)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}.{key}", f"expected a number, got {v!r}")
    if kind is int and int(v) != v:
        raise ConfigError(f"{path}.{key}", f"expected an integer, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"{path}.{key}", f"must be positive, got {v!r}")
    return kind(v)


# ------------------------------------------------------------------ generate
def equation_block(cfg: dict) -> dict:
    """Validated equation block with defaults filled in."""
    raw = _block(cfg, "equation")
    name = raw.get("name")
    if name not in EQUATIONS:
        raise ConfigError("equation.name", f"must be one of {EQUATIONS}, got {name!r}")
    eq = copy.deepcopy(EQUATION_DEFAULTS[name])
    grf = dict(eq["grf"])
    grf.update(raw.get("grf") or {})
    eq.update({k: v for k, v in raw.items() if k != "grf"})
    eq["grf"] = grf
    for key in ("T",):
        eq[key] = _number(eq, key, "equation")
    for key in ("n_snapshots", "n_samples"):
        eq[key] = _number(eq, key, "equation", int)
    if eq["n_snapshots"] < 2:
        raise ConfigError("equation.n_snapshots", "need at least 2 snapshots")
    for key in ("sigma2", "gamma"):
        eq["grf"][key] = _number(eq["grf"], key, "equation.grf")
    eq["grf"]["tau"] = _number(eq["grf"], "tau", "equation.grf", positive=False)
    if name == "klein_gordon":
        eq["target_spacing"] = _number(eq, "target_spacing", "equation")
        eq["grf_modes"] = _number(eq, "grf_modes", "equation", int)
    else:
        eq["resolution"] = _number(eq, "resolution", "equation", int)
    if name == "kdv":
        eq["delta"] = _number(eq, "delta", "equation")
    _wrap("equation.grf", grf_spec, eq, 0)
    return eq


def grf_spec(eq: dict, seed: int) -> GrfSpec:
    g = eq["grf"]
    if eq["name"] == "kdv":
        boundary, res = "periodic1d", eq["resolution"]
    else:
        boundary, res = "neumann2d", eq.get("resolution", eq.get("grf_modes"))
    return GrfSpec(g["sigma2"], g["tau"], g["gamma"], boundary, res, seed)


_CLOUD_CACHE: dict = {}


def _cloud_ops(spacing: float, node_seed: int):
    """Node cloud with its Laplacian and gradient, assembled once per process."""
    key = (spacing, node_seed)
    if key not in _CLOUD_CACHE:
        cloud = generate_irregular_nodes(spacing, node_seed)
        _CLOUD_CACHE[key] = (cloud, rbf_fd_laplacian(cloud), rbf_fd_gradient(cloud))
    return _CLOUD_CACHE[key]


def audit_trajectory(traj: Trajectory, delta: float = 0.01, gradient_ops=None) -> dict:
    """Drift of the conserved quantities over the trajectory.

    KdV reports |dE1| / (1 + |E1(0)|) and |dE2| / E2(0); the wave equations
    report the relative energy drift computed with solver-state velocities.
    """
    if traj.equation == "kdv":
        q = np.array([conserved_quantities_kdv(u, delta) for u in traj.u])
        return {
            "E1": float(np.max(np.abs(q[:, 0] - q[0, 0])) / (1 + abs(q[0, 0]))),
            "E2": float(np.max(np.abs(q[:, 1] - q[0, 1])) / q[0, 1]),
            "E3": float(np.max(np.abs(q[:, 2] - q[0, 2])) / max(abs(q[0, 2]), 1e-300)),
        }
    F = POTENTIALS[traj.equation]
    vel = traj.info["velocity"]
    E = np.array([wave_energy(v, u, traj.space, F, gradient_ops) for v, u in zip(vel, traj.u)])
    return {"energy": float(np.max(np.abs(E - E[0])) / E[0])}


def _solve_one(task):
    eq, seed, index = task
    name = eq["name"]
    spec = grf_spec(eq, derive_seed(seed, "grf"))
    if name == "kdv":
        u0 = sample_grf_at(spec, index)
        traj = solve_kdv(u0, eq["delta"], eq["T"], eq["n_snapshots"])
        audit = audit_trajectory(traj, eq["delta"])
    elif name == "sine_gordon":
        u0 = sample_grf_at(spec, index)
        traj = solve_sine_gordon(u0, eq["T"], eq["n_snapshots"])
        audit = audit_trajectory(traj)
    else:
        cloud, L, grad = _cloud_ops(eq["target_spacing"], derive_seed(seed, "nodes"))
        coeffs = kl_coefficients_neumann_2d(spec, 1, start_index=index)[0]
        u0 = evaluate_neumann_2d(coeffs, cloud.coords)
        traj = solve_klein_gordon(u0, cloud, eq["T"], eq["n_snapshots"], laplacian=L)
        audit = audit_trajectory(traj, gradient_ops=grad)
    traj.info = {k: v for k, v in traj.info.items() if k != "velocity"}
    traj.u = traj.u.astype(np.float32)
    return traj, audit


def sample_grf_at(spec: GrfSpec, index: int) -> np.ndarray:
    """The ``index``-th field of the stream, independent of how many precede it."""
    if spec.boundary == "periodic1d":
        return synthesize_periodic_1d(kl_coefficients_periodic_1d(spec, 1, index), spec.resolution)[0]
    return synthesize_neumann_2d(kl_coefficients_neumann_2d(spec, 1, index), spec.resolution)[0]


def generate_trajectories(eq: dict, seed: int, workers: int = 1) -> tuple[list[Trajectory], list[dict]]:
    """Solve all samples; output order and values do not depend on ``workers``."""
    tasks = [(eq, seed, i) for i in range(eq["n_samples"])]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_solve_one, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        results = [_solve_one(t) for t in tasks]
    return [r[0] for r in results], [r[1] for r in results]


def summarize_audit(audits: list[dict]) -> dict:
    out = {}
    for key in audits[0]:
        vals = np.array([a[key] for a in audits])
        out[key] = {"max": float(vals.max()), "median": float(np.median(vals))}
    return out


def generate_dataset(cfg: dict, out, seed: int | None = None, workers: int = 1) -> tuple[TrajectoryStore, dict]:
    eq = equation_block(cfg)
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    trajs, audits = generate_trajectories(eq, seed, workers)
    audit = summarize_audit(audits)
    meta = {
        "seed": seed,
        "config": eq,
        "grf_seed": derive_seed(seed, "grf"),
        "laplacian_convention": LAPLACIAN_CONVENTION[eq["name"]],
        "solver": {k: v for k, v in trajs[0].info.items() if isinstance(v, (int, float, str))},
        "audit": audit,
    }
    if eq["name"] == "klein_gordon":
        meta["node_seed"] = derive_seed(seed, "nodes")
    store = write_store(trajs, meta, out)
    return store, audit


# ------------------------------------------------------------------ train
def open_dataset(cfg: dict, key: str = "dataset") -> TrajectoryStore:
    path = cfg.get(key)
    if not isinstance(path, str):
        raise ConfigError(key, "expected a dataset directory")
    if not (Path(path) / "meta.json").exists():
        raise ConfigError(key, f"no dataset at {path}")
    return read_store(path)


def dataset_meta(cfg: dict) -> dict:
    path = cfg.get("dataset")
    if not isinstance(path, str) or not (Path(path) / "meta.json").exists():
        raise ConfigError("dataset", f"no dataset at {path!r}")
    return json.loads((Path(path) / "meta.json").read_text())


def train_blocks(cfg: dict, equation: str, seed: int):
    """Validated (architecture, policy, loss, train config) for ``equation``."""
    arch_raw = _block(cfg, "architecture")
    kind = arch_raw.get("kind")
    mode = arch_raw.get("rollout_mode", "recurrent")
    if kind not in ("fno", "deeponet", "geo_fno"):
        raise ConfigError("architecture.kind", f"must be fno, deeponet or geo_fno, got {kind!r}")
    if mode not in ("recurrent", "full_prediction"):
        raise ConfigError("architecture.rollout_mode", f"must be recurrent or full_prediction, got {mode!r}")
    pol_raw = _block(cfg, "policy", required=False)
    window_l = arch_raw.get("window_l", pol_raw.get("window_l", 10))
    if isinstance(window_l, bool) or not isinstance(window_l, int) or window_l < 1:
        raise ConfigError("architecture.window_l", f"must be a positive integer, got {window_l!r}")
    arch = default_architecture(equation, kind, mode, window_l)
    for k, v in arch_raw.items():
        if isinstance(v, dict) and isinstance(arch.get(k), dict):
            arch[k] = {**arch[k], **v}
        else:
            arch[k] = v
    _wrap("architecture", validate_architecture, arch)

    policy = _wrap(
        "policy",
        SamplingPolicy,
        pol_raw.get("mode", "fixed_start"),
        window_l,
        pol_raw.get("local_range"),
        int(pol_raw.get("seed", derive_seed(seed, "policy"))),
    )
    if pol_raw.get("window_l", window_l) != window_l:
        raise ConfigError("policy.window_l", f"{pol_raw['window_l']} != architecture.window_l {window_l}")

    loss_raw = _block(cfg, "loss", required=False)
    lambdas = loss_raw.get("lambdas", {})
    if not isinstance(lambdas, dict):
        raise ConfigError("loss.lambdas", "must be an object of quantity: weight")
    for q, lam in lambdas.items():
        if isinstance(lam, bool) or not isinstance(lam, (int, float)) or lam < 0:
            raise ConfigError(f"loss.lambdas.{q}", f"must be a non-negative number, got {lam!r}")
        if q not in QUANTITIES[equation]:
            raise ConfigError(f"loss.lambdas.{q}", f"not available for {equation}; use {QUANTITIES[equation]}")
    loss = _wrap("loss", LossSpec, **loss_raw)

    tr_raw = dict(_block(cfg, "train", required=False))
    tr_raw.setdefault("seed", derive_seed(seed, "train"))
    train = _wrap("train", TrainConfig, **tr_raw)
    return arch, policy, loss, train


def train_from_config(cfg: dict, out, seed: int | None = None, on_epoch=None):
    """Train, then write ``out/checkpoint`` and ``out/history.json``."""
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    meta = dataset_meta(cfg)
    arch, policy, loss, train = train_blocks(cfg, meta["equation"], seed)
    store = open_dataset(cfg)
    if "delta" in meta.get("config", {}):
        loss.delta = float(meta["config"]["delta"])
    if train.split is not None and sum(train.split) > store.n_samples:
        raise ConfigError("train.split", f"{train.split} exceeds {store.n_samples} trajectories")
    model, history = train_model(arch, store, policy, loss, train, on_epoch=on_epoch)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    provenance = dict(model.provenance, dataset=str(store.root), seed=seed, n_test=len(history.split["test"]))
    save_checkpoint(model, out / "checkpoint", provenance)
    with open(out / "history.json", "w") as fh:
        json.dump(history.to_dict(), fh, indent=2, allow_nan=True)
    return model, history


# ------------------------------------------------------------------ rollout
class OracleModel:
    """Window model that replays the stored trajectories exactly.

    Windows are located by their first snapshot (nearest stored snapshot
    when clipping has altered it); useful as a pipeline check,
    since its rollouts must reproduce the data with zero error.
    """

    kind = "oracle"

    def __init__(self, store: TrajectoryStore, window_l: int = 10):
        self.window_l = window_l
        self.extent = tuple(store.u.shape[2:])
        self.u = torch.as_tensor(store.u.astype(np.float64))
        self.data_sup = torch.tensor(float(np.abs(store.u).max()))
        self.provenance = {"kind": "oracle", "dataset_checksum": store.checksum}
        self._index = {}
        for k in range(self.u.shape[0]):
            for s in range(self.u.shape[1]):
                self._index.setdefault(self.u[k, s].numpy().tobytes(), (k, s))

    def _locate(self, snap: torch.Tensor) -> tuple[int, int]:
        hit = self._index.get(snap.numpy().tobytes())
        if hit is not None:
            return hit
        # clipped inputs no longer match exactly; take the nearest stored snapshot
        d = (self.u - snap).flatten(2).abs().amax(dim=2)
        k, s = divmod(int(torch.argmin(d)), self.u.shape[1])
        return k, s

    def next_window(self, window, bound=None, clip_bound=None):
        l, n_t = self.window_l, self.u.shape[1]
        out = []
        for row in window.double():
            k, s = self._locate(row[0])
            idx = np.minimum(np.arange(s + l, s + 2 * l), n_t - 1)
            out.append(self.u[k, idx])
        nxt = torch.stack(out).to(window.dtype)
        if clip_bound is not None:
            nxt = clip_prediction(nxt, clip_bound.reshape((-1,) + (1,) * (nxt.ndim - 1)))
        return nxt


def clip_specs(block: dict) -> list[ClipSpec]:
    raw = block.get("clips", [{"mode": "none"}])
    if not isinstance(raw, list) or not raw:
        raise ConfigError("rollout.clips", "must be a non-empty list")
    specs = [_wrap(f"rollout.clips.{i}", ClipSpec, **c) for i, c in enumerate(raw)]
    labels = [c.label for c in specs]
    if len(set(labels)) != len(labels):
        raise ConfigError("rollout.clips", f"duplicate variants {labels}")
    return specs


def rollout_indices(block: dict, store: TrajectoryStore, provenance: dict) -> np.ndarray:
    sel = block.get("indices", "test")
    n = store.n_samples
    if sel == "all":
        return np.arange(n)
    if sel == "test":
        n_test = provenance.get("n_test")
        if not n_test:
            raise ConfigError("rollout.indices", "checkpoint records no test split; give 'all' or a list")
        return np.arange(n - n_test, n)
    if isinstance(sel, list) and all(isinstance(i, int) and 0 <= i < n for i in sel):
        return np.asarray(sel, dtype=np.int64)
    raise ConfigError("rollout.indices", f"expected 'test', 'all' or a list of indices below {n}")


def covered_ranges(block: dict, store: TrajectoryStore, window_l: int) -> dict:
    """Named error ranges that contain at least one snapshot of the store.

    A store shorter than every standard range gets a single range covering
    all predicted snapshots.
    """
    ranges = block.get("ranges", RANGES.get(store.equation, {}))
    if not isinstance(ranges, dict):
        raise ConfigError("rollout.ranges", "must map names to [lo, hi]")
    t = store.t
    tol = 1e-9 * max(1.0, float(t[-1]))
    kept = {k: tuple(v) for k, v in ranges.items() if np.any((t >= v[0] - tol) & (t <= v[1] + tol))}
    if not kept and len(t) > window_l:
        kept = {"all": (float(t[window_l]), float(t[-1]))}
    return kept


def open_checkpoint(cfg: dict, store: TrajectoryStore | None):
    ref = cfg.get("checkpoint")
    if ref == "oracle":
        return OracleModel(store, int(_block(cfg, "rollout", required=False).get("window_l", 10)))
    if not isinstance(ref, str):
        raise ConfigError("checkpoint", "expected a checkpoint directory or 'oracle'")
    path = Path(ref)
    if (path / "checkpoint" / "config.json").exists():
        path = path / "checkpoint"
    if not (path / "config.json").exists():
        raise ConfigError("checkpoint", f"no checkpoint at {ref}")
    return load_checkpoint(path)


def rollout_from_config(cfg: dict, out, samples: int | None = None):
    """Evaluate a checkpoint on the dataset; writes report.json, errors.csv and samples.npz."""
    store = open_dataset(cfg)
    block = _block(cfg, "rollout", required=False)
    clips = clip_specs(block)
    model = open_checkpoint(cfg, store)
    provenance = dict(getattr(model, "provenance", {}))
    if provenance.get("dataset_checksum") not in (None, store.checksum):
        log.warning("checkpoint was trained on a different dataset")
    indices = rollout_indices(block, store, provenance)
    extent = tuple(getattr(model, "extent", ()))
    if extent != tuple(store.u.shape[2:]):
        raise ShapeError(f"model has {extent} degrees of freedom, dataset has {tuple(store.u.shape[2:])}")
    reports, rollouts = evaluate_on_store(
        model,
        store,
        indices,
        clips,
        batch_size=int(block.get("batch_size", 25)),
        ranges=covered_ranges(block, store, model.window_l),
        provenance=provenance,
    )
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(reports, out / "report.json", {"indices": indices.tolist(), "dataset": str(store.root)})
    write_plot_payload(reports, out / "errors.csv")
    n_keep = int(block.get("save_samples", 2) if samples is None else samples)
    if n_keep > 0:
        keep = slice(0, min(n_keep, len(indices)))
        arrays = {f"pred_{k}": v[keep].astype(np.float32) for k, v in rollouts.items()}
        arrays["truth"] = store.u[indices[keep]]
        arrays["t"] = store.t
        arrays["coords"] = store.coords
        arrays["indices"] = indices[keep]
        np.savez(out / "samples.npz", **arrays)
    return reports


def cpu_workers(requested: int | None) -> int:
    if requested is None or requested < 1:
        return 1
    return min(requested, os.cpu_count() or 1)
