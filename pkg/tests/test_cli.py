import csv
import json

import numpy as np
import pytest

from longwave import pipeline
from longwave.cli import main
from longwave.dataset import read_store
from longwave.evaluation import read_report
from longwave.operators import load_checkpoint


def smoke_config(tmp_path, **extra):
    cfg = {
        "seed": 3,
        "equation": {"name": "kdv", "resolution": 64, "T": 0.2, "n_snapshots": 20, "n_samples": 1},
        "dataset": str(tmp_path / "data"),
        "architecture": {
            "kind": "fno",
            "rollout_mode": "recurrent",
            "window_l": 5,
            "fno": {"modes": [8], "width": 8, "n_layers": 2, "project_width": 16},
        },
        "policy": {"mode": "fixed_start"},
        "loss": {"lambdas": {"E1": 0.1}},
        "train": {"epochs": 1, "split": [1, 0, 0]},
        "rollout": {"clips": [{"mode": "none"}], "indices": "all", "window_l": 5},
    }
    cfg.update(extra)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


def test_generate_single_trajectory_prints_audit(tmp_path, capsys):
    cfg = smoke_config(tmp_path)
    assert run("generate", "--config", cfg, "--out", tmp_path / "data") == 0
    out = capsys.readouterr().out
    assert "audit E1" in out and "audit E2" in out
    store = read_store(tmp_path / "data")
    assert store.u.shape == (1, 20, 64)
    assert store.meta["config"]["delta"] == 0.01
    assert "laplacian_convention" in store.meta


def test_generate_rerun_is_byte_identical(tmp_path):
    cfg = smoke_config(tmp_path)
    for name in ("a", "b"):
        assert run("generate", "--config", cfg, "--set", "equation.n_samples=3", "--out", tmp_path / name) == 0
    assert (tmp_path / "a" / "u.f32").read_bytes() == (tmp_path / "b" / "u.f32").read_bytes()


def test_generate_seed_flag_changes_data(tmp_path):
    cfg = smoke_config(tmp_path)
    run("generate", "--config", cfg, "--out", tmp_path / "a")
    run("generate", "--config", cfg, "--seed", 4, "--out", tmp_path / "b")
    assert (tmp_path / "a" / "u.f32").read_bytes() != (tmp_path / "b" / "u.f32").read_bytes()


def test_parallel_generation_matches_serial():
    eq = pipeline.equation_block({"equation": {"name": "kdv", "resolution": 32, "T": 0.1, "n_snapshots": 10, "n_samples": 3}})
    serial, _ = pipeline.generate_trajectories(eq, 7, workers=1)
    parallel, _ = pipeline.generate_trajectories(eq, 7, workers=2)
    for a, b in zip(serial, parallel):
        assert np.array_equal(a.u, b.u)


def test_sample_stream_independent_of_count():
    eq = pipeline.equation_block({"equation": {"name": "sine_gordon", "resolution": 16, "T": 0.5, "n_snapshots": 5, "n_samples": 1}})
    spec = pipeline.grf_spec(eq, 11)
    from longwave.random_fields import sample_grf

    fields = sample_grf(spec, 3)
    assert np.allclose(pipeline.sample_grf_at(spec, 2), fields[2].values, atol=1e-12)


def test_klein_gordon_generation_small(tmp_path):
    cfg = {
        "equation": {
            "name": "klein_gordon",
            "grf_modes": 16,
            "target_spacing": 0.05,
            "T": 0.5,
            "n_snapshots": 5,
            "n_samples": 2,
        }
    }
    store, audit = pipeline.generate_dataset(cfg, tmp_path / "kg", seed=0)
    assert store.space.n == store.u.shape[2]
    assert audit["energy"]["max"] < 5e-2
    # boundary nodes are held at their initial values
    b = store.boundary_mask.astype(bool)
    assert np.array_equal(store.u[:, :, b], np.repeat(store.u[:, :1, b], 5, axis=1))


def test_train_one_epoch_writes_loadable_checkpoint(tmp_path, capsys):
    cfg = smoke_config(tmp_path)
    run("generate", "--config", cfg, "--out", tmp_path / "data")
    assert run("train", "--config", cfg, "--out", tmp_path / "run") == 0
    model = load_checkpoint(tmp_path / "run" / "checkpoint")
    assert model.window_l == 5
    hist = json.loads((tmp_path / "run" / "history.json").read_text())
    assert len(hist["val_error"]) == 1
    assert model.provenance["dataset_checksum"] == read_store(tmp_path / "data").checksum


@pytest.mark.parametrize(
    "override, field",
    [
        ("loss.lambdas.E1=-1", "loss.lambdas.E1"),
        ("loss.lambdas.energy=1", "loss.lambdas.energy"),
        ("architecture.kind=unet", "architecture.kind"),
        ("policy.mode=sideways", "policy"),
        ("train.batch_size=0", "train"),
    ],
)
def test_invalid_train_config_exits_1_with_field_path(tmp_path, capsys, override, field):
    cfg = smoke_config(tmp_path)
    run("generate", "--config", cfg, "--out", tmp_path / "data")
    assert run("train", "--config", cfg, "--set", override, "--out", tmp_path / "run") == 1
    assert field in capsys.readouterr().err
    assert not (tmp_path / "run").exists()


def test_dry_run_validates_without_compute(tmp_path):
    cfg = smoke_config(tmp_path)
    assert run("generate", "--config", cfg, "--out", tmp_path / "data", "--dry-run") == 0
    assert not (tmp_path / "data").exists()
    assert run("generate", "--config", cfg, "--set", "equation.name=heat", "--out", tmp_path / "d", "--dry-run") == 1
    assert run("generate", "--config", cfg, "--set", "equation.grf.gamma=0.3", "--out", tmp_path / "d", "--dry-run") == 1
    # train needs an existing dataset
    assert run("train", "--config", cfg, "--out", tmp_path / "run", "--dry-run") == 1
    run("generate", "--config", cfg, "--out", tmp_path / "data")
    assert run("train", "--config", cfg, "--out", tmp_path / "run", "--dry-run") == 0
    assert not (tmp_path / "run").exists()


def test_bad_override_and_missing_config(tmp_path):
    assert run("generate", "--config", tmp_path / "missing.json", "--out", tmp_path) == 1
    assert run("generate", "--config", smoke_config(tmp_path), "--set", "nonsense", "--out", tmp_path) == 1


def test_oracle_rollout_has_zero_error(tmp_path):
    cfg = smoke_config(tmp_path, checkpoint="oracle")
    run("generate", "--config", cfg, "--set", "equation.n_samples=3", "--out", tmp_path / "data")
    assert run("rollout", "--config", cfg, "--out", tmp_path / "eval") == 0
    (rep,) = read_report(tmp_path / "eval" / "report.json")
    assert rep.n_samples == 3
    assert all(e == 0.0 for e in rep.mean_error)
    assert all(v == 0.0 for v in rep.range_means.values())


def test_rollout_dof_mismatch_is_runtime_error(tmp_path, capsys):
    cfg = smoke_config(tmp_path)
    run("generate", "--config", cfg, "--out", tmp_path / "data")
    run("train", "--config", cfg, "--out", tmp_path / "run")
    run("generate", "--config", cfg, "--set", "equation.resolution=32", "--out", tmp_path / "other")
    code = run("rollout", "--config", cfg, "--set", f"dataset={tmp_path / 'other'}",
               "--set", f"checkpoint={tmp_path / 'run'}", "--out", tmp_path / "eval")
    assert code == 2
    assert "degrees of freedom" in capsys.readouterr().err


def test_clipped_and_plain_variants_and_plot_payload(tmp_path):
    cfg = smoke_config(tmp_path)
    run("generate", "--config", cfg, "--set", "equation.n_samples=2", "--out", tmp_path / "data")
    run("train", "--config", cfg, "--out", tmp_path / "run")
    clips = '[{"mode": "none"}, {"mode": "hard", "C": 1}]'
    code = run("rollout", "--config", cfg, "--set", f"checkpoint={tmp_path / 'run'}",
               "--set", f"rollout.clips={clips}", "--out", tmp_path / "eval")
    assert code == 0
    reports = read_report(tmp_path / "eval" / "report.json")
    assert [r.variant for r in reports] == ["plain", "hard_C1"]
    assert run("plot", tmp_path / "eval", "--out", tmp_path / "plots") == 0
    with open(tmp_path / "plots" / "curves.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["variant"] for r in rows} == {"plain", "hard_C1"}
    assert len(rows) == 2 * 20
    assert (tmp_path / "plots" / "accumulation_error.png").stat().st_size > 0
    assert (tmp_path / "plots" / "eval_heatmap.png").exists()


def test_report_command_prints_range_means(tmp_path, capsys):
    cfg = smoke_config(tmp_path, checkpoint="oracle")
    run("generate", "--config", cfg, "--out", tmp_path / "data")
    run("rollout", "--config", cfg, "--out", tmp_path / "eval")
    capsys.readouterr()
    assert run("report", tmp_path / "eval" / "report.json") == 0
    assert "plain:" in capsys.readouterr().out
    assert run("report", tmp_path / "nowhere.json") == 1


def test_derive_seed_is_fixed_and_component_specific():
    assert pipeline.derive_seed(0, "grf") == pipeline.derive_seed(0, "grf")
    assert pipeline.derive_seed(0, "grf") != pipeline.derive_seed(0, "policy")
    assert pipeline.derive_seed(0, "grf") != pipeline.derive_seed(1, "grf")
    assert 0 <= pipeline.derive_seed(123, "x") < 2**31


def test_shipped_configs_validate(tmp_path):
    from pathlib import Path

    root = Path(__file__).resolve().parents[1] / "configs"
    for path in sorted(root.glob("*.json")):
        assert run("generate", "--config", path, "--out", tmp_path / "x", "--dry-run") == 0, path.name
