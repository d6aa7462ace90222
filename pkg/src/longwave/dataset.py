"""On-disk trajectory stores, training window pairs, and dataset splits.

Directory layout::

    meta.json           metadata, array shapes, sha256 checksums
    u.f32               snapshots [N, n_t, dof...], little-endian float32
    t.f64               snapshot times [n_t]
    coords.f64          grid or node coordinates [dof..., d]
    boundary_mask.u8    point clouds only, [n_nodes]
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorruptionError, ParameterError, ShapeError
from .solvers.grids import GridSpec1D, GridSpec2D, PointCloud, Trajectory

FORMAT_VERSION = 1

_DTYPES = {"u": "<f4", "t": "<f8", "coords": "<f8", "boundary_mask": "u1"}
_FILES = {"u": "u.f32", "t": "t.f64", "coords": "coords.f64", "boundary_mask": "boundary_mask.u8"}


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass(eq=False)
class TrajectoryStore:
    root: Path
    meta: dict
    u: np.ndarray
    t: np.ndarray
    coords: np.ndarray
    boundary_mask: np.ndarray | None = None
    _space: object = field(default=None, repr=False)

    @property
    def n_samples(self) -> int:
        return self.u.shape[0]

    @property
    def n_snapshots(self) -> int:
        return self.u.shape[1]

    @property
    def equation(self) -> str:
        return self.meta["equation"]

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def space(self):
        if self._space is None:
            self._space = space_from_meta(self.meta["space"], self.coords, self.boundary_mask)
        return self._space

    @property
    def checksum(self) -> str:
        return self.meta["arrays"]["u"]["sha256"]

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(self.space, self.t, self.u[i].astype(np.float64), self.equation)


def space_from_meta(desc: dict, coords: np.ndarray, boundary_mask=None):
    kind = desc["kind"]
    if kind == "grid1d":
        return GridSpec1D(desc["n"])
    if kind == "grid2d":
        return GridSpec2D(desc["nx"], desc["ny"])
    if kind == "cloud":
        from .solvers.nodes import quadrature_weights

        cloud = PointCloud(coords, boundary_mask.astype(bool), desc["target_spacing"])
        cloud.weights = quadrature_weights(cloud.coords, cloud.target_spacing)
        return cloud
    raise ParameterError(f"unknown space kind {kind!r}")


def write_store(trajectories: list[Trajectory], meta: dict, root) -> TrajectoryStore:
    """Write trajectories atomically; a failed write leaves nothing behind."""
    if not trajectories:
        raise ShapeError("cannot write an empty store")
    first = trajectories[0]
    for k, tr in enumerate(trajectories):
        if tr.u.shape != first.u.shape:
            raise ShapeError(f"trajectory {k} has shape {tr.u.shape}, expected {first.u.shape}")
        if not np.array_equal(tr.times, first.times):
            raise ShapeError(f"trajectory {k} has a different time axis")
        if tr.equation != first.equation:
            raise ShapeError(f"trajectory {k} solves {tr.equation}, expected {first.equation}")

    root = Path(root)
    space = first.space
    arrays = {
        "u": np.stack([tr.u for tr in trajectories]).astype(_DTYPES["u"]),
        "t": first.times.astype(_DTYPES["t"]),
        "coords": np.asarray(space.coords(), dtype=_DTYPES["coords"])
        if not isinstance(space, PointCloud)
        else space.coords.astype(_DTYPES["coords"]),
    }
    if isinstance(space, PointCloud):
        arrays["boundary_mask"] = space.boundary_mask.astype(_DTYPES["boundary_mask"])

    root.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{root.name}.", dir=root.parent))
    try:
        entries = {}
        for name, arr in arrays.items():
            path = tmp / _FILES[name]
            np.ascontiguousarray(arr).tofile(path)
            entries[name] = {
                "file": _FILES[name],
                "dtype": _DTYPES[name],
                "shape": list(arr.shape),
                "sha256": _sha256(path),
            }
        full_meta = dict(meta)
        full_meta.update(
            {
                "format_version": FORMAT_VERSION,
                "equation": first.equation,
                "space": space.describe(),
                "n_samples": len(trajectories),
                "n_snapshots": len(first.times),
                "T": float(first.times[-1] + (first.times[1] - first.times[0])),
                "arrays": entries,
            }
        )
        with open(tmp / "meta.json", "w") as fh:
            json.dump(full_meta, fh, indent=2, sort_keys=True)
        if root.exists():
            shutil.rmtree(root)
        os.replace(tmp, root)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return read_store(root)


def read_store(root, verify: bool = True) -> TrajectoryStore:
    root = Path(root)
    try:
        with open(root / "meta.json") as fh:
            meta = json.load(fh)
    except FileNotFoundError as exc:
        raise CorruptionError(f"no meta.json in {root}") from exc
    arrays = {}
    for name, entry in meta["arrays"].items():
        path = root / entry["file"]
        dtype = np.dtype(entry["dtype"])
        expected = int(np.prod(entry["shape"])) * dtype.itemsize
        if not path.exists() or path.stat().st_size != expected:
            size = path.stat().st_size if path.exists() else 0
            raise CorruptionError(f"{path} holds {size} bytes, expected {expected}")
        if verify and _sha256(path) != entry["sha256"]:
            raise CorruptionError(f"checksum mismatch for {path}")
        arrays[name] = np.fromfile(path, dtype=dtype).reshape(entry["shape"])
    if meta["n_samples"] != arrays["u"].shape[0]:
        raise CorruptionError("n_samples does not match the snapshot array")
    return TrajectoryStore(
        root=root,
        meta=meta,
        u=arrays["u"],
        t=arrays["t"],
        coords=arrays["coords"],
        boundary_mask=arrays.get("boundary_mask"),
    )


# ---------------------------------------------------------------- window pairs

POLICY_MODES = ("fixed_start", "global_random", "local_random")


@dataclass(frozen=True)
class SamplingPolicy:
    mode: str = "fixed_start"
    window_l: int = 10
    local_range: tuple[float, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode not in POLICY_MODES:
            raise ParameterError(f"sampling mode must be one of {POLICY_MODES}, got {self.mode!r}")
        if self.window_l < 1:
            raise ParameterError("window_l must be at least 1")
        if (self.mode == "local_random") != (self.local_range is not None):
            raise ParameterError("local_range is required for, and only for, local_random")
        if self.local_range is not None:
            object.__setattr__(self, "local_range", tuple(float(v) for v in self.local_range))
            if self.local_range[0] > self.local_range[1]:
                raise ParameterError("local_range must be increasing")

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "window_l": self.window_l,
            "local_range": list(self.local_range) if self.local_range else None,
            "seed": self.seed,
        }


@dataclass(eq=False)
class WindowPair:
    input: np.ndarray
    target: np.ndarray
    start_time: float
    start_index: int
    sample: int
    u0_sup: float


def feasible_starts(times: np.ndarray, policy: SamplingPolicy) -> np.ndarray:
    n_t = len(times)
    last = n_t - 2 * policy.window_l
    if last < 0:
        raise ParameterError(f"{n_t} snapshots cannot hold two windows of {policy.window_l}")
    idx = np.arange(last + 1)
    if policy.mode == "fixed_start":
        return idx[:1]
    if policy.mode == "global_random":
        return idx
    lo, hi = policy.local_range
    tol = 1e-9 * (times[1] - times[0])
    idx = idx[(times[idx] >= lo - tol) & (times[idx] <= hi + tol)]
    if idx.size == 0:
        raise ParameterError(f"no feasible start time in {policy.local_range}")
    return idx


def draw_start_indices(times: np.ndarray, policy: SamplingPolicy, count: int) -> np.ndarray:
    candidates = feasible_starts(times, policy)
    if policy.mode == "fixed_start":
        return np.zeros(count, dtype=np.int64)
    rng = np.random.default_rng(policy.seed)
    return candidates[rng.integers(0, len(candidates), size=count)]


def make_window_pairs(store: TrajectoryStore, policy: SamplingPolicy, indices=None) -> list[WindowPair]:
    """One (input, target) window pair per trajectory in ``indices``."""
    indices = np.arange(store.n_samples) if indices is None else np.asarray(indices, dtype=np.int64)
    starts = draw_start_indices(store.t, policy, len(indices))
    l = policy.window_l
    pairs = []
    for i, s in zip(indices, starts):
        traj = store.u[i]
        pairs.append(
            WindowPair(
                input=traj[s : s + l],
                target=traj[s + l : s + 2 * l],
                start_time=float(store.t[s]),
                start_index=int(s),
                sample=int(i),
                u0_sup=float(np.abs(traj[0]).max()),
            )
        )
    return pairs


def stack_pairs(pairs: list[WindowPair]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(inputs [B, l, dof...], targets [B, l, dof...], u0 sup-norms [B])."""
    if not pairs:
        raise ParameterError("no window pairs to stack")
    X = np.stack([p.input for p in pairs])
    Y = np.stack([p.target for p in pairs])
    B = np.array([p.u0_sup for p in pairs])
    return X, Y, B


def split_dataset(n_or_store, sizes: tuple[int, int, int], seed: int = 0):
    """Disjoint (train, val, test) index arrays.

    The test set is the last ``test`` trajectories in generation order and
    does not depend on ``seed``; train and val are a seeded split of the rest.
    """
    n = n_or_store if isinstance(n_or_store, (int, np.integer)) else n_or_store.n_samples
    n_train, n_val, n_test = (int(s) for s in sizes)
    if min(sizes) < 0 or n_train + n_val + n_test > n:
        raise ParameterError(f"split sizes {sizes} exceed {n} trajectories")
    test = np.arange(n - n_test, n)
    perm = np.random.default_rng(seed).permutation(n - n_test)
    return np.sort(perm[:n_train]), np.sort(perm[n_train : n_train + n_val]), test
