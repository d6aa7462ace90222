"""Command-line entry point: ``longwave {generate,train,rollout,report,plot}``.

Exit codes: 0 success, 1 invalid configuration, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import pipeline
from .evaluation import read_report, write_plot_payload
from .pipeline import ConfigError

log = logging.getLogger("longwave")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field by dotted path; repeatable")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="top-level seed (overrides config)")
    common.add_argument("--workers", type=int, default=1, help="worker processes for generation")
    common.add_argument("--dry-run", action="store_true", help="validate the config and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="longwave", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="solve and store a trajectory dataset")
    sub.add_parser("train", parents=[common], help="train an operator model")
    sub.add_parser("rollout", parents=[common], help="roll a checkpoint over test trajectories")
    for name, text in (("report", "print range means of rollout reports"), ("plot", "render error curves and heatmaps")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("reports", nargs="*", help="report.json files (or directories holding one)")
    return parser


def _config(args) -> dict:
    cfg = pipeline.load_config(args.config) if args.config else {}
    cfg = pipeline.apply_overrides(cfg, args.overrides)
    if args.seed is not None:
        cfg["seed"] = args.seed
    seed = cfg.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed", f"expected an integer, got {seed!r}")
    return cfg


def _out(args, cfg: dict) -> Path:
    out = args.out or cfg.get("out")
    if not out:
        raise ConfigError("--out", "an output directory is required")
    return Path(out)


def _report_paths(args, cfg: dict) -> list[Path]:
    refs = args.reports or cfg.get("reports") or []
    if not refs:
        raise ConfigError("reports", "no report files given")
    paths = []
    for r in refs:
        p = Path(r)
        p = p / "report.json" if p.is_dir() else p
        if not p.exists():
            raise ConfigError("reports", f"no report at {r}")
        paths.append(p)
    return paths


# ------------------------------------------------------------------ commands
def cmd_generate(args, cfg):
    eq = pipeline.equation_block(cfg)
    out = _out(args, cfg)
    if args.dry_run:
        return
    t0 = time.perf_counter()
    store, audit = pipeline.generate_dataset(cfg, out, workers=pipeline.cpu_workers(args.workers))
    print(f"wrote {store.n_samples} {eq['name']} trajectories, {store.n_snapshots} snapshots, "
          f"dof {tuple(store.u.shape[2:])} to {out} in {time.perf_counter() - t0:.1f}s")
    for q, stats in audit.items():
        print(f"audit {q}: max drift {stats['max']:.3e}, median {stats['median']:.3e}")


def cmd_train(args, cfg):
    meta = pipeline.dataset_meta(cfg)
    pipeline.train_blocks(cfg, meta["equation"], cfg.get("seed", 0))
    out = _out(args, cfg)
    if args.dry_run:
        return

    def progress(epoch, history):
        log.info("epoch %d  loss %.4e  val %.4e", epoch, history.train_loss[-1], history.val_error[-1])

    _, history = pipeline.train_from_config(cfg, out, on_epoch=progress)
    status = f"aborted ({history.abort_reason})" if history.aborted else "done"
    print(f"training {status}: {len(history.val_error)} epochs, best epoch {history.best_epoch}, "
          f"best val error {history.best_val_error}")
    print(f"checkpoint: {out / 'checkpoint'}")


def cmd_rollout(args, cfg):
    pipeline.open_dataset(cfg)
    pipeline.clip_specs(cfg.get("rollout") or {})
    ref = cfg.get("checkpoint")
    if ref != "oracle" and not (isinstance(ref, str) and Path(ref).exists()):
        raise ConfigError("checkpoint", f"no checkpoint at {ref!r}")
    out = _out(args, cfg)
    if args.dry_run:
        return
    reports = pipeline.rollout_from_config(cfg, out)
    for r in reports:
        _print_report(r)
    print(f"report: {out / 'report.json'}")


def _print_report(r):
    means = ", ".join(f"{k} {v:.4f}" for k, v in r.range_means.items())
    print(f"{r.variant}: {means}; blow-ups {r.blowup_count}/{r.n_samples}")


def cmd_report(args, cfg):
    paths = _report_paths(args, cfg)
    if args.dry_run:
        return
    for p in paths:
        print(p)
        for r in read_report(p):
            _print_report(r)


def cmd_plot(args, cfg):
    paths = _report_paths(args, cfg)
    out = _out(args, cfg)
    if args.dry_run:
        return
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for p in paths:
        for r in read_report(p):
            if len(paths) > 1:
                r.variant = f"{p.parent.name}/{r.variant}"
            reports.append(r)
    write_plot_payload(reports, out / "curves.csv")

    fig, ax = plt.subplots(figsize=(6, 4))
    for r in reports:
        ax.plot(r.times, r.mean_error, label=r.variant)
    ax.set_xlabel("t")
    ax.set_ylabel("mean relative L2 error")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "accumulation_error.png", dpi=120)
    plt.close(fig)

    for p in paths:
        samples = p.parent / "samples.npz"
        if samples.exists():
            _heatmaps(plt, np.load(samples), out / f"{p.parent.name}_heatmap.png")
    print(f"plots written to {out}")


def _heatmaps(plt, data, path: Path):
    """Space-time panels for 1D data; final-snapshot panels otherwise."""
    truth = data["truth"][0].astype(np.float64)
    preds = {k[5:]: data[k][0] for k in data.files if k.startswith("pred_")}
    t = data["t"]
    panels = [("truth", truth)] + [(f"prediction ({k})", v) for k, v in preds.items()]
    panels += [(f"error ({k})", np.abs(v - truth)) for k, v in preds.items()]
    fig, axes = plt.subplots(1, len(panels), figsize=(4 * len(panels), 3.5), squeeze=False)
    for ax, (title, arr) in zip(axes[0], panels):
        if arr.ndim == 2 and data["coords"].shape[-1] == 1:
            im = ax.imshow(arr.T, aspect="auto", origin="lower", extent=(t[0], t[-1], 0, 1))
            ax.set_xlabel("t")
            ax.set_ylabel("x")
        elif arr.ndim == 3:
            im = ax.imshow(arr[-1].T, origin="lower", extent=(0, 1, 0, 1))
        else:
            xy = data["coords"]
            im = ax.scatter(xy[:, 0], xy[:, 1], c=arr[-1], s=2)
            ax.set_aspect("equal")
        ax.set_title(title)
        fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "rollout": cmd_rollout,
    "report": cmd_report,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # anything past validation is a runtime failure
        log.debug("traceback", exc_info=True)
        print(f"{args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if args.dry_run:
        print("configuration valid")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
