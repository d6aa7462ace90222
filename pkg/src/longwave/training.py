"""Training with a data loss plus soft conservation-law penalties."""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .dataset import SamplingPolicy, TrajectoryStore, make_window_pairs, split_dataset, stack_pairs
from .errors import ParameterError, RolloutDivergence, ShapeError
from .operators import OperatorModel, build_model
from .solvers.grids import GridSpec1D, GridSpec2D, PointCloud

log = logging.getLogger(__name__)

QUANTITIES = {
    "kdv": ("E1", "E2", "E3"),
    "sine_gordon": ("energy",),
    "klein_gordon": ("energy",),
}
DEFAULT_LAMBDA_MAX = 1e6


@dataclass
class LossSpec:
    base: str = "relative_l2"
    lambdas: dict[str, float] = field(default_factory=dict)
    penalty_growth: float = 1.0
    lambda_max: float = DEFAULT_LAMBDA_MAX
    delta: float = 0.01  # KdV dispersion, used by E3 only

    def __post_init__(self):
        if self.base not in ("relative_l2", "mse"):
            raise ParameterError(f"loss.base must be relative_l2 or mse, got {self.base!r}")
        self.lambdas = {str(k): float(v) for k, v in dict(self.lambdas).items()}
        for q, lam in self.lambdas.items():
            if not lam >= 0:
                raise ParameterError(f"loss.lambdas.{q} must be non-negative, got {lam}")
        if not self.penalty_growth >= 1:
            raise ParameterError(f"loss.penalty_growth must be >= 1, got {self.penalty_growth}")

    def check_equation(self, equation: str) -> None:
        allowed = QUANTITIES[equation]
        for q in self.lambdas:
            if q not in allowed:
                raise ParameterError(f"quantity {q!r} is not available for {equation} (allowed {allowed})")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainConfig:
    batch_size: int = 5
    epochs: int = 500
    lr0: float = 1e-3
    weight_decay: float = 1e-6
    lr_decay: float = 0.75
    decay_every: int = 50
    seed: int = 0
    split: tuple[int, int, int] | None = None
    val_fraction: float = 0.2
    dtype: str = "float32"

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.decay_every < 1:
            raise ParameterError("batch_size and decay_every must be positive, epochs non-negative")
        if not self.lr0 > 0:
            raise ParameterError("lr0 must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ParameterError("dtype must be float32 or float64")
        if self.split is not None:
            self.split = tuple(int(s) for s in self.split)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split) if self.split else None
        return d


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_error: list[float] = field(default_factory=list)
    lambdas: list[dict] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    components: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    split: dict = field(default_factory=dict)
    aborted: bool = False
    abort_reason: str = ""

    @property
    def best_val_error(self) -> float | None:
        return None if self.best_epoch is None else self.val_error[self.best_epoch]

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------ penalties
def penalty_schedule(lam0: float, a: float, step: int, lam_max: float = DEFAULT_LAMBDA_MAX) -> float:
    """lam0 * a**step, capped at lam_max (evaluated in log space so it never overflows)."""
    if lam0 < 0 or a < 1:
        raise ParameterError("need lam0 >= 0 and a >= 1")
    if lam0 == 0:
        return 0.0
    if a == 1:
        return min(lam0, lam_max)
    if step * math.log(a) >= math.log(lam_max / lam0):
        return lam_max
    return lam0 * a**step


def relative_l2(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Per-sample ||pred - target|| / ||target|| over everything but the batch axis."""
    diff = (pred - target).flatten(1)
    return torch.linalg.vector_norm(diff, dim=1) / torch.linalg.vector_norm(target.flatten(1), dim=1)


class ConservationLoss:
    """Base loss plus lambda-weighted squared differences of conserved quantities.

    Quantities are evaluated per snapshot of raw (denormalised) windows
    [B, l, dof...] and the squared differences are averaged over batch and
    snapshots.
    """

    def __init__(self, spec: LossSpec, space, equation: str, dt: float | None = None, gradient_ops=None):
        spec.check_equation(equation)
        self.spec = spec
        self.space = space
        self.equation = equation
        self.dt = dt
        if "energy" in spec.lambdas:
            if dt is None:
                raise ParameterError("the energy penalty needs the snapshot spacing dt")
            self.weights = torch.as_tensor(space.quadrature_weights(), dtype=torch.float64)
            if isinstance(space, PointCloud):
                if gradient_ops is None:
                    from .solvers.rbf import rbf_fd_gradient

                    gradient_ops = rbf_fd_gradient(space)
                self.grad_ops = [_torch_sparse(D) for D in gradient_ops]

    # quantities on [B, l, dof...] -> [B, l]
    def _E1(self, u):
        return u.mean(dim=-1)

    def _E2(self, u):
        return (u**2).mean(dim=-1)

    def _E3(self, u):
        n = u.shape[-1]
        k = torch.fft.rfftfreq(n, d=1.0 / n).to(u.dtype) * 2 * math.pi
        uh = torch.fft.rfft(u, dim=-1)
        if n % 2 == 0:
            k[-1] = 0.0
        ux = torch.fft.irfft(1j * k * uh, n=n, dim=-1)
        return (u**3 / 3 - self.spec.delta**2 * ux**2).mean(dim=-1)

    def _energy(self, u):
        if u.shape[1] < 2:
            raise ParameterError("the energy penalty needs windows of at least 2 snapshots")
        ut = torch.gradient(u, spacing=self.dt, dim=1)[0]
        if isinstance(self.space, GridSpec2D):
            B, l = u.shape[:2]
            p = torch.nn.functional.pad(u.reshape(B * l, 1, *u.shape[2:]), (1, 1, 1, 1), mode="reflect")
            p = p.reshape(B, l, *p.shape[2:])
            gx = (p[..., 2:, 1:-1] - p[..., :-2, 1:-1]) / (2 * self.space.hx)
            gy = (p[..., 1:-1, 2:] - p[..., 1:-1, :-2]) / (2 * self.space.hy)
        elif isinstance(self.space, PointCloud):
            flat = u.reshape(-1, u.shape[-1]).T
            Dx, Dy = (D.to(u.dtype) for D in self.grad_ops)
            gx = torch.sparse.mm(Dx, flat).T.reshape(u.shape)
            gy = torch.sparse.mm(Dy, flat).T.reshape(u.shape)
        else:
            raise ParameterError("energy needs a 2D grid or a point cloud")
        pot = 2 * (1 - torch.cos(u)) if self.equation == "sine_gordon" else 0.5 * u**4
        density = ut**2 + gx**2 + gy**2 + pot
        w = self.weights.to(u.dtype)
        return (density * w).flatten(2).sum(-1)

    def quantity(self, name: str, u: torch.Tensor) -> torch.Tensor:
        return getattr(self, "_" + name)(u)

    def __call__(self, pred: torch.Tensor, target: torch.Tensor, step: int = 0):
        if pred.shape != target.shape:
            raise ShapeError(f"pred {tuple(pred.shape)} and target {tuple(target.shape)} differ")
        if self.spec.base == "relative_l2":
            base = relative_l2(pred, target).mean()
        else:
            base = ((pred - target) ** 2).mean()
        total = base
        components = {"base": float(base.detach())}
        for name, lam0 in self.spec.lambdas.items():
            lam = penalty_schedule(lam0, self.spec.penalty_growth, step, self.spec.lambda_max)
            cl = ((self.quantity(name, pred) - self.quantity(name, target)) ** 2).mean()
            components[name] = float(cl.detach())
            components["lambda_" + name] = lam
            if lam:
                total = total + lam * cl
        return total, components


def _torch_sparse(D):
    coo = D.tocoo()
    idx = torch.tensor(np.vstack([coo.row, coo.col]), dtype=torch.long)
    return torch.sparse_coo_tensor(idx, torch.tensor(coo.data), coo.shape, check_invariants=True).coalesce()


def conservation_regularized_loss(pred, target, spec: LossSpec, space, equation: str = "kdv", dt=None, step: int = 0):
    return ConservationLoss(spec, space, equation, dt)(pred, target, step)


# ------------------------------------------------------------------ training
def make_optimizer(params, cfg: TrainConfig):
    opt = torch.optim.AdamW(params, lr=cfg.lr0, weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=cfg.decay_every, gamma=cfg.lr_decay)
    return opt, sched


def resolve_split(store: TrajectoryStore, cfg: TrainConfig):
    if cfg.split is not None:
        return split_dataset(store, cfg.split, cfg.seed)
    n = store.n_samples
    n_val = max(1, int(round(cfg.val_fraction * n))) if n > 1 else 0
    return split_dataset(store, (n - n_val, n_val, 0), cfg.seed)


def predict_window(model: OperatorModel, window: torch.Tensor, bound: torch.Tensor | None = None) -> torch.Tensor:
    """The next window; recurrent models are unrolled over all l steps (gradients flow through)."""
    return model.next_window(window, bound)


def window_tensors(store, policy, indices, dtype):
    pairs = make_window_pairs(store, policy, indices)
    X, Y, B = stack_pairs(pairs)
    t = lambda a: torch.as_tensor(np.ascontiguousarray(a), dtype=dtype)
    return t(X), t(Y), t(B)


def evaluate_windows(model, X, Y, B, batch: int = 64) -> float:
    errs = []
    with torch.no_grad():
        for i in range(0, len(X), batch):
            try:
                pred = predict_window(model, X[i : i + batch], B[i : i + batch])
            except RolloutDivergence:
                return float("inf")
            errs.append(relative_l2(pred, Y[i : i + batch]))
    return float(torch.cat(errs).mean())


def train_model(
    arch: dict,
    store: TrajectoryStore,
    policy: SamplingPolicy,
    loss: LossSpec,
    cfg: TrainConfig,
    on_epoch=None,
):
    """Returns the model at the best validation epoch and the history.

    ``on_epoch(epoch, history)`` is called after every completed epoch.
    """
    dtype = torch.float64 if cfg.dtype == "float64" else torch.float32
    if policy.window_l != arch["window_l"]:
        raise ParameterError(f"policy window_l {policy.window_l} != architecture window_l {arch['window_l']}")
    loss_fn = ConservationLoss(loss, store.space, store.equation, store.dt)
    train_idx, val_idx, test_idx = resolve_split(store, cfg)
    if len(train_idx) == 0:
        raise ParameterError("empty training split")

    torch.manual_seed(cfg.seed)
    model = build_model(arch, store.space).to(dtype)
    Xtr, Ytr, Btr = window_tensors(store, policy, train_idx, dtype)
    model.fit_normalization(Xtr.double().numpy())
    if len(val_idx):
        val_policy = SamplingPolicy(policy.mode, policy.window_l, policy.local_range, policy.seed + 1)
        Xva, Yva, Bva = window_tensors(store, val_policy, val_idx, dtype)
    else:
        Xva, Yva, Bva = Xtr, Ytr, Btr

    history = TrainHistory(split={"train": train_idx.tolist(), "val": val_idx.tolist(), "test": test_idx.tolist()})
    opt, sched = make_optimizer(model.parameters(), cfg)
    gen = torch.Generator().manual_seed(cfg.seed)
    best_state, best_err = copy.deepcopy(model.state_dict()), math.inf
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        model.train()
        order = torch.randperm(len(Xtr), generator=gen)
        total, count = 0.0, 0
        comp_sum: dict[str, float] = {}
        lr = opt.param_groups[0]["lr"]
        try:
            for i in range(0, len(order), cfg.batch_size):
                b = order[i : i + cfg.batch_size]
                pred = predict_window(model, Xtr[b], Btr[b])
                value, comps = loss_fn(pred, Ytr[b], step)
                if not torch.isfinite(value):
                    raise FloatingPointError(f"non-finite loss at epoch {epoch}, step {step}")
                opt.zero_grad()
                value.backward()
                opt.step()
                step += 1
                total += float(value.detach()) * len(b)
                count += len(b)
                for k, v in comps.items():
                    comp_sum[k] = comp_sum.get(k, 0.0) + v * len(b)
        except (FloatingPointError, RolloutDivergence) as exc:
            history.aborted = True
            history.abort_reason = str(exc)
            log.warning("training aborted: %s", exc)
            break
        sched.step()
        model.eval()
        val = evaluate_windows(model, Xva, Yva, Bva)
        history.train_loss.append(total / count)
        history.val_error.append(val)
        history.lr.append(lr)
        history.lambdas.append(
            {q: penalty_schedule(l0, loss.penalty_growth, step, loss.lambda_max) for q, l0 in loss.lambdas.items()}
        )
        history.components.append({k: v / count for k, v in comp_sum.items()})
        history.epoch_seconds.append(time.perf_counter() - t0)
        if val < best_err:
            best_err = val
            history.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
        if on_epoch is not None:
            on_epoch(epoch, history)
    model.load_state_dict(best_state)
    model.eval()
    model.provenance = {
        "dataset_checksum": store.checksum,
        "policy": policy.to_dict(),
        "loss": loss.to_dict(),
        "train": cfg.to_dict(),
        "best_epoch": history.best_epoch,
    }
    return model, history
