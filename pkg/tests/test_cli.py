"""End-to-end CLI pipeline on a miniature experiment."""

from __future__ import annotations

import numpy as np
import pytest

from sparkpde.augment import AugmentConfig, CurriculumConfig, curriculum_ratio
from sparkpde.checkpoint import load_checkpoint
from sparkpde.cli import main
from sparkpde.config import resolved_curriculum, load_config

MICRO_CONFIG = """\
seed: 42
dataset:
  generator: navier_stokes
  grid: {height: 16, width: 16}
  params: [1.0e-2, 1.0e-3]
  ood: {mode: explicit, out_values: [1.0e-3]}
  episodes_per_param: 2
  t_total: 8
  dt: 5.0e-3
  record_every: 4
  ic_modes: 3
pretrain:
  epochs: 3
  batch_size: 16
  codebook_size: 12
  d_latent: 8
  hidden: 16
  attention_hidden: 8
  gnn_layers: 1
  k_max: 3
dynamics:
  t0: 3
  horizon: 3
  epochs: 4
  batch_size: 4
  ode_layers: 1
  k_max: 3
  decoder_hidden: 12
  substeps: 1
  val_fraction: 0.25
augment:
  mode: interpolate
  k: 2
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipeline")
    config = root / "exp.yaml"
    config.write_text(MICRO_CONFIG, encoding="utf-8")
    data_dir = root / "data"
    assert main(["gen-data", "--config", str(config), "--out", str(data_dir)]) == 0
    pre_dir = root / "pre"
    assert (
        main(
            [
                "pretrain",
                "--config", str(config),
                "--dataset", str(data_dir / "dataset.spds"),
                "--out", str(pre_dir),
            ]
        )
        == 0
    )
    train_dir = root / "train"
    assert (
        main(
            [
                "train",
                "--config", str(config),
                "--dataset", str(data_dir / "dataset.spds"),
                "--checkpoint", str(pre_dir / "pretrain.ckpt"),
                "--out", str(train_dir),
            ]
        )
        == 0
    )
    return {
        "root": root,
        "config": config,
        "dataset": data_dir / "dataset.spds",
        "manifest": data_dir / "manifest.txt",
        "pretrain_ckpt": pre_dir / "pretrain.ckpt",
        "dynamics_ckpt": train_dir / "dynamics.ckpt",
        "metrics": train_dir / "metrics.csv",
    }


def test_artifacts_exist(workspace):
    for key in ("dataset", "manifest", "pretrain_ckpt", "dynamics_ckpt", "metrics"):
        assert workspace[key].exists(), key


def test_manifest_reports_split_sizes(workspace):
    text = workspace["manifest"].read_text()
    assert "in-domain parameters (1)" in text
    assert "out-domain parameters (1)" in text
    assert "episodes: 4 (in-domain 2, out-domain 2)" in text


def test_gen_data_reproducible_and_thread_invariant(workspace, tmp_path):
    out2 = tmp_path / "again"
    assert main(["gen-data", "--config", str(workspace["config"]), "--out", str(out2)]) == 0
    assert (out2 / "dataset.spds").read_bytes() == workspace["dataset"].read_bytes()
    out3 = tmp_path / "threaded"
    assert (
        main(
            ["gen-data", "--config", str(workspace["config"]), "--out", str(out3), "--threads", "2"]
        )
        == 0
    )
    assert (out3 / "dataset.spds").read_bytes() == workspace["dataset"].read_bytes()


def test_pretrain_reproducible(workspace, tmp_path):
    out2 = tmp_path / "pre2"
    assert (
        main(
            [
                "pretrain",
                "--config", str(workspace["config"]),
                "--dataset", str(workspace["dataset"]),
                "--out", str(out2),
            ]
        )
        == 0
    )
    assert (out2 / "pretrain.ckpt").read_bytes() == workspace["pretrain_ckpt"].read_bytes()


def test_train_reproducible(workspace, tmp_path):
    out2 = tmp_path / "train2"
    assert (
        main(
            [
                "train",
                "--config", str(workspace["config"]),
                "--dataset", str(workspace["dataset"]),
                "--checkpoint", str(workspace["pretrain_ckpt"]),
                "--out", str(out2),
            ]
        )
        == 0
    )
    assert (out2 / "dynamics.ckpt").read_bytes() == workspace["dynamics_ckpt"].read_bytes()


def test_metrics_follow_curriculum(workspace):
    cfg = load_config(str(workspace["config"]))
    start, ramp, pmax = resolved_curriculum(cfg.augment, cfg.dynamics.epochs)
    aug = AugmentConfig(
        curriculum=CurriculumConfig(start_epoch=start, ramp_epochs=ramp, max_ratio=pmax)
    )
    lines = workspace["metrics"].read_text().strip().splitlines()
    header = lines[0].split(",")
    idx_epoch = header.index("epoch")
    idx_ratio = header.index("aug_ratio")
    for line in lines[1:]:
        cells = line.split(",")
        epoch = int(cells[idx_epoch])
        assert float(cells[idx_ratio]) == curriculum_ratio(epoch, aug)


def test_no_augment_run(workspace, tmp_path):
    out = tmp_path / "noaug"
    assert (
        main(
            [
                "train",
                "--config", str(workspace["config"]),
                "--dataset", str(workspace["dataset"]),
                "--checkpoint", str(workspace["pretrain_ckpt"]),
                "--out", str(out),
                "--no-augment",
            ]
        )
        == 0
    )
    lines = (out / "metrics.csv").read_text().strip().splitlines()
    ratios = [float(line.split(",")[3]) for line in lines[1:]]
    assert all(r == 0.0 for r in ratios)
    ckpt = load_checkpoint(str(out / "dynamics.ckpt"))
    assert ckpt.config["meta"]["augmented"] is False


def test_eval_both_splits_and_dump(workspace, tmp_path):
    out = tmp_path / "eval"
    for split in ("in", "out"):
        assert (
            main(
                [
                    "eval",
                    "--checkpoint", str(workspace["dynamics_ckpt"]),
                    "--dataset", str(workspace["dataset"]),
                    "--split", split,
                    "--out", str(out),
                    "--dump-predictions",
                ]
            )
            == 0
        )
        assert (out / f"metrics_{split}.csv").exists()
        assert (out / f"spectrum_truth_{split}.csv").exists()
        assert (out / f"spectrum_pred_{split}.csv").exists()
        assert (out / f"predictions_{split}.npz").exists()


def test_eval_totals_match_independent_recomputation(workspace, tmp_path):
    out = tmp_path / "eval2"
    assert (
        main(
            [
                "eval",
                "--checkpoint", str(workspace["dynamics_ckpt"]),
                "--dataset", str(workspace["dataset"]),
                "--split", "in",
                "--out", str(out),
                "--dump-predictions",
            ]
        )
        == 0
    )
    dump = np.load(out / "predictions_in.npz")
    recomputed = float(np.mean((dump["predictions"] - dump["targets"]) ** 2))
    rows = {}
    for line in (out / "metrics_in.csv").read_text().strip().splitlines()[1:]:
        name, value = line.split(",")
        rows[name] = float(value)
    assert abs(rows["mse"] - recomputed) < 1e-12


def test_inspect_codebook(workspace, tmp_path, capsys):
    csv_path = tmp_path / "usage.csv"
    assert (
        main(
            [
                "inspect-codebook",
                "--checkpoint", str(workspace["pretrain_ckpt"]),
                "--csv", str(csv_path),
            ]
        )
        == 0
    )
    captured = capsys.readouterr()
    assert "codebook: M=12 D=8" in captured.out
    assert "perplexity" in captured.out
    assert csv_path.exists()
    assert len(csv_path.read_text().strip().splitlines()) == 13  # header + 12 entries


def test_missing_dataset_is_config_error(workspace):
    code = main(
        [
            "pretrain",
            "--config", str(workspace["config"]),
            "--dataset", "/nonexistent/ds.spds",
            "--out", "/tmp/ignored",
        ]
    )
    assert code == 2


def test_mismatched_latent_width_refused(workspace, tmp_path):
    bad_cfg = tmp_path / "bad.yaml"
    bad_cfg.write_text(
        MICRO_CONFIG.replace("d_latent: 8", "d_latent: 16"), encoding="utf-8"
    )
    code = main(
        [
            "train",
            "--config", str(bad_cfg),
            "--dataset", str(workspace["dataset"]),
            "--checkpoint", str(workspace["pretrain_ckpt"]),
            "--out", str(tmp_path / "bad-train"),
        ]
    )
    assert code == 4


def test_eval_missing_split_errors(workspace, tmp_path):
    # build a dataset with no OOD episodes
    cfg_text = MICRO_CONFIG.replace(
        "ood: {mode: explicit, out_values: [1.0e-3]}",
        "ood: {mode: explicit, out_values: []}",
    )
    cfg_path = tmp_path / "noood.yaml"
    cfg_path.write_text(cfg_text, encoding="utf-8")
    data_dir = tmp_path / "noood-data"
    assert main(["gen-data", "--config", str(cfg_path), "--out", str(data_dir)]) == 0
    code = main(
        [
            "eval",
            "--checkpoint", str(workspace["dynamics_ckpt"]),
            "--dataset", str(data_dir / "dataset.spds"),
            "--split", "out",
            "--out", str(tmp_path / "eval-out"),
        ]
    )
    assert code == 2


def test_unreadable_config_rejected(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("dataset: {generator: warp_drive}\n", encoding="utf-8")
    assert main(["gen-data", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2


def test_help_documents_config_keys(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for key in ("dataset.generator", "pretrain.codebook_size", "augment.k", "dynamics.substeps"):
        assert key in out


def test_sweep_k_emits_comparison_csv(workspace, tmp_path):
    out = tmp_path / "sweep"
    assert (
        main(
            [
                "sweep-k",
                "--config", str(workspace["config"]),
                "--dataset", str(workspace["dataset"]),
                "--checkpoint", str(workspace["pretrain_ckpt"]),
                "--out", str(out),
            ]
        )
        == 0
    )
    lines = (out / "sweep_k.csv").read_text().strip().splitlines()
    assert lines[0] == "k,train_mse,val_mse,in_mse,out_mse"
    ks = [int(line.split(",")[0]) for line in lines[1:]]
    assert ks == [1, 3, 5, 7, 9, 11]
