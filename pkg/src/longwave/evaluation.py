"""Long-horizon rollouts, clipping, and accumulation-error reports."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ParameterError, RolloutDivergence, ShapeError

# named time ranges (inclusive) over which errors are averaged
RANGES = {
    "kdv": {"interp": (0.10, 0.19), "extrap": (0.20, 0.99)},
    "sine_gordon": {"interp": (1.0, 1.9), "extrap": (2.0, 19.9)},
    "klein_gordon": {"interp": (0.5, 0.95), "extrap_near": (1.0, 2.95), "extrap_far": (3.0, 9.95)},
}
BLOWUP_FACTOR = 1e6


@dataclass(frozen=True)
class ClipSpec:
    mode: str = "none"
    C: float = 1.0
    per_sample: bool = True
    global_sup: float | None = None  # used when per_sample is False

    def __post_init__(self):
        if self.mode not in ("none", "hard", "soft"):
            raise ParameterError(f"clip mode must be none, hard or soft, got {self.mode!r}")
        if not self.C >= 0:
            raise ParameterError("clip constant C must be non-negative")
        if self.mode == "hard" and not self.per_sample and self.global_sup is None:
            raise ParameterError("a global clip bound needs global_sup")

    @property
    def label(self) -> str:
        return "plain" if self.mode == "none" else f"{self.mode}_C{self.C:g}"

    def bounds(self, u0_sup: np.ndarray) -> np.ndarray | None:
        if self.mode != "hard":
            return None
        if self.per_sample:
            return self.C * np.asarray(u0_sup, dtype=np.float64)
        return np.full(len(u0_sup), self.C * self.global_sup)


def clip_prediction(u, B):
    """Elementwise truncation to [-B, B]; B may broadcast against u."""
    if np.any(np.asarray(B) < 0):
        raise ParameterError("clip bound must be non-negative")
    if isinstance(u, torch.Tensor):
        b = torch.as_tensor(B, dtype=u.dtype)
        return torch.minimum(torch.maximum(u, -b), b)
    return np.minimum(np.maximum(u, -np.asarray(B)), np.asarray(B))


# ------------------------------------------------------------------ Strichartz constant
def estimate_strichartz_constant(u, times, t_range=(0.0, 0.95)):
    """Per-sample max over t in t_range of sup|u(t)| / sup|u(0)|.

    ``u`` is [N, n_t, dof...] (or a TrajectoryStore). Samples with a zero
    initial condition are skipped and counted.
    """
    if hasattr(u, "u"):
        u, times = u.u, u.t
    u = np.asarray(u)
    times = np.asarray(times)
    tol = 1e-9 * (times[1] - times[0]) if len(times) > 1 else 0.0
    sel = (times >= t_range[0] - tol) & (times <= t_range[1] + tol)
    if not sel.any():
        raise ParameterError(f"t_range {t_range} selects no snapshots")
    sup = np.abs(u.reshape(u.shape[0], u.shape[1], -1)).max(axis=2).astype(np.float64)
    u0 = sup[:, 0]
    keep = u0 > 0
    ratios = sup[keep][:, sel].max(axis=1) / u0[keep]
    summary = {"n": int(keep.sum()), "skipped": int((~keep).sum())}
    if ratios.size:
        q = np.quantile(ratios, [0.05, 0.25, 0.5, 0.75, 0.95])
        counts, edges = np.histogram(ratios, bins=20)
        summary.update(
            {
                "median": float(q[2]),
                "mean": float(ratios.mean()),
                "max": float(ratios.max()),
                "quantiles": dict(zip(["q05", "q25", "q50", "q75", "q95"], map(float, q))),
                "histogram": {"counts": counts.tolist(), "edges": edges.tolist()},
            }
        )
    return ratios, summary


# ------------------------------------------------------------------ rollout
@dataclass(eq=False)
class RolloutResult:
    pred: np.ndarray  # [B, n_total, dof...]; NaN after a blow-up
    blowup: np.ndarray  # [B] bool
    blowup_step: np.ndarray  # [B] first bad snapshot index, -1 if none


def _model_dtype(model, default):
    try:
        return next(model.parameters()).dtype
    except (AttributeError, StopIteration):
        return default


def rollout(model, initial_window, n_total: int, clip: ClipSpec = ClipSpec(), u0_sup=None, data_sup=None) -> RolloutResult:
    """Roll a window model forward to ``n_total`` snapshots.

    ``initial_window`` is [B, l, dof...] and is copied verbatim into the first
    l output snapshots. Hard clipping is applied to every emitted snapshot,
    and clipped values are what the model sees next. A sample blows up when
    it produces a non-finite value or exceeds BLOWUP_FACTOR times the
    training sup-norm; its remaining snapshots are NaN.
    """
    w = initial_window if isinstance(initial_window, torch.Tensor) else torch.as_tensor(np.asarray(initial_window))
    l = model.window_l
    if w.ndim < 3 or w.shape[1] != l:
        raise ShapeError(f"initial window must be [batch, {l}, dof...], got {tuple(w.shape)}")
    if n_total < l:
        raise ParameterError(f"n_total {n_total} is shorter than the window {l}")
    w = w.to(_model_dtype(model, w.dtype))
    B = w.shape[0]
    if u0_sup is None:
        u0_sup = w[:, 0].abs().flatten(1).max(dim=1).values.double().numpy()
    u0_sup = np.asarray(u0_sup, dtype=np.float64)
    if data_sup is None:
        data_sup = float(getattr(model, "data_sup", torch.tensor(np.inf)))
    limit = BLOWUP_FACTOR * data_sup

    pred = np.full((B, n_total) + tuple(w.shape[2:]), np.nan)
    pred[:, :l] = w.double().numpy()
    blowup = np.zeros(B, dtype=bool)
    blowup_step = np.full(B, -1)
    clip_b = clip.bounds(u0_sup)
    bound_t = torch.as_tensor(u0_sup, dtype=w.dtype)
    clip_t = None if clip_b is None else torch.as_tensor(clip_b, dtype=w.dtype)

    active = np.arange(B)
    cur = w
    pos = l
    with torch.no_grad():
        while pos < n_total and active.size:
            sel = torch.as_tensor(active)
            nxt = _step(model, cur, bound_t[sel], None if clip_t is None else clip_t[sel])
            take = min(l, n_total - pos)
            vals = nxt.double().numpy()
            # per (sample, step) sup-norm; non-finite counts as infinite
            mag = np.where(np.isfinite(vals), np.abs(vals), np.inf).reshape(len(active), l, -1).max(axis=2)
            step_ok = mag <= limit
            bad = ~step_ok[:, :take].all(axis=1)
            for j in np.nonzero(bad)[0]:
                i = active[j]
                first = int(np.argmin(step_ok[j]))
                blowup[i] = True
                blowup_step[i] = pos + first
                pred[i, pos : pos + first] = vals[j, :first]
            good = ~bad
            pred[active[good], pos : pos + take] = vals[good, :take]
            active = active[good]
            cur = nxt[torch.as_tensor(good)]
            pos += l
    return RolloutResult(pred, blowup, blowup_step)


def _step(model, window, bound, clip_bound):
    """Next window; on divergence, NaN-fill only the samples that diverge."""
    try:
        return model.next_window(window, bound, clip_bound)
    except RolloutDivergence:
        if window.shape[0] == 1:
            return torch.full_like(window, float("nan"))
        parts = [
            _step(model, window[i : i + 1], bound[i : i + 1], None if clip_bound is None else clip_bound[i : i + 1])
            for i in range(window.shape[0])
        ]
        return torch.cat(parts)


# ------------------------------------------------------------------ metrics
def accumulation_error(pred, truth, time_axis: int = 0) -> np.ndarray:
    """Per-snapshot ||pred_t - truth_t||_2 / ||truth_t||_2; NaN where ||truth_t|| = 0.

    Axes after ``time_axis`` are degrees of freedom; axes before it are
    batch axes. A single trajectory [n_t, dof...] uses time_axis=0, a batch
    [N, n_t, dof...] uses time_axis=1.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"pred {pred.shape} and truth {truth.shape} differ")
    shape = pred.shape[: time_axis + 1]
    diff = np.linalg.norm((pred - truth).reshape(*shape, -1), axis=-1)
    norm = np.linalg.norm(truth.reshape(*shape, -1), axis=-1)
    safe = np.where(norm > 0, norm, 1.0)
    return np.where(norm > 0, diff / safe, np.nan)


def range_indices(times: np.ndarray, lo: float, hi: float) -> np.ndarray:
    tol = 1e-9 * (times[1] - times[0]) if len(times) > 1 else 1e-12
    idx = np.nonzero((times >= lo - tol) & (times <= hi + tol))[0]
    if idx.size == 0:
        raise ParameterError(f"range [{lo}, {hi}] contains no snapshots")
    return idx


@dataclass
class RolloutReport:
    variant: str
    times: list[float]
    mean_error: list[float]
    range_means: dict[str, float]
    blowup: bool = False
    blowup_count: int = 0
    n_samples: int = 0
    clip: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    per_sample_range_means: dict[str, list[float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def summarize_errors(errors, times, ranges: dict, variant: str = "plain", blowup=None, clip=None, provenance=None) -> RolloutReport:
    """Average errors over samples per snapshot, then over each named time range.

    NaN entries (undefined or post-blow-up) are excluded from every mean, so
    blown-up samples contribute their pre-blow-up errors.
    """
    errors = np.atleast_2d(np.asarray(errors, dtype=np.float64))
    times = np.asarray(times, dtype=np.float64)
    if errors.shape[1] != len(times):
        raise ShapeError(f"{errors.shape[1]} error columns for {len(times)} times")
    with np.errstate(invalid="ignore"), _quiet():
        mean = np.nanmean(errors, axis=0)
    range_means, per_sample = {}, {}
    for name, (lo, hi) in ranges.items():
        idx = range_indices(times, lo, hi)
        with _quiet():
            range_means[name] = float(np.nanmean(mean[idx]))
            per_sample[name] = np.nanmean(errors[:, idx], axis=1).tolist()
    blowup = np.zeros(len(errors), dtype=bool) if blowup is None else np.asarray(blowup, dtype=bool)
    return RolloutReport(
        variant=variant,
        times=times.tolist(),
        mean_error=mean.tolist(),
        range_means=range_means,
        blowup=bool(blowup.any()),
        blowup_count=int(blowup.sum()),
        n_samples=int(len(errors)),
        clip=clip or {},
        provenance=provenance or {},
        per_sample_range_means=per_sample,
    )


class _quiet:
    def __enter__(self):
        import warnings

        self._w = warnings.catch_warnings()
        self._w.__enter__()
        warnings.simplefilter("ignore", RuntimeWarning)

    def __exit__(self, *exc):
        return self._w.__exit__(*exc)


# ------------------------------------------------------------------ store-level driver
def evaluate_on_store(model, store, indices, clips=(ClipSpec(),), batch_size: int = 25, ranges=None, provenance=None):
    """Roll every indexed trajectory from its first window; one report per clip variant."""
    indices = np.asarray(indices, dtype=np.int64)
    if len(indices) == 0:
        raise ParameterError("no trajectories to evaluate")
    extent = tuple(getattr(model, "extent", store.u.shape[2:]))
    if tuple(store.u.shape[2:]) != extent:
        raise ShapeError(f"model expects dof {extent}, store holds {tuple(store.u.shape[2:])}")
    ranges = RANGES.get(store.equation, {}) if ranges is None else ranges
    l = model.window_l
    n_t = store.n_snapshots
    reports, rollouts = [], {}
    for clip in clips:
        errs, flags = [], []
        preds = []
        for s in range(0, len(indices), batch_size):
            idx = indices[s : s + batch_size]
            truth = store.u[idx].astype(np.float64)
            res = rollout(model, truth[:, :l], n_t, clip, u0_sup=np.abs(truth[:, 0]).reshape(len(idx), -1).max(axis=1))
            errs.append(accumulation_error(res.pred, truth, time_axis=1))
            flags.append(res.blowup)
            preds.append(res.pred)
        rollouts[clip.label] = np.concatenate(preds)
        reports.append(
            summarize_errors(
                np.concatenate(errs),
                store.t,
                ranges,
                clip.label,
                np.concatenate(flags),
                asdict(clip),
                provenance,
            )
        )
    return reports, rollouts


def write_report(reports: list[RolloutReport], path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"variants": [r.to_dict() for r in reports]}
    payload.update(extra or {})
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, allow_nan=True)
    return path


def read_report(path) -> list[RolloutReport]:
    with open(path) as fh:
        payload = json.load(fh)
    return [RolloutReport(**v) for v in payload["variants"]]


def write_plot_payload(reports: list[RolloutReport], path) -> Path:
    """CSV with columns time, mean_error, variant (one curve per variant)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "mean_error", "variant"])
        for r in reports:
            for t, e in zip(r.times, r.mean_error):
                w.writerow([repr(float(t)), repr(float(e)), r.variant])
    return path
