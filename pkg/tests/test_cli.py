import json
import os

import pytest

from ssrkit.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Shared synth -> train pipeline outputs for the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "config.json"
    config.write_text(json.dumps({
        "synth": {"n_samples": 3000, "cat_vocab_sizes": [15] * 5,
                  "k_relevant": 3, "positive_rate": 0.3, "seed": 2},
        "model": {"backbone": "ssr_dynamic", "depth": 2, "b": 2, "d_v": 6,
                  "embed_dim": 4, "iterations": 3, "seed": 1},
        "train": {"batch_size": 512, "max_epochs": 2, "patience": 1},
    }))
    assert main(["synth", "--config", str(config),
                 "--out", str(root)]) == 0
    data = str(root / "dataset.csv")
    assert main(["train", "--config", str(config), "--data", data,
                 "--out", str(root / "run")]) == 0
    return {"root": root, "config": str(config), "data": data,
            "run": root / "run"}


def test_synth_writes_csv(workdir):
    with open(workdir["data"], encoding="utf-8") as f:
        header = f.readline().strip()
        n_rows = sum(1 for _ in f)
    assert header == "label,user_id,c0,c1,c2,c3,c4"
    assert n_rows == 3000


def test_train_outputs(workdir):
    run = workdir["run"]
    for name in ("checkpoint.json", "metrics.csv", "metrics.png",
                 "train.log", "summary.json"):
        assert (run / name).exists(), name
    summary = json.loads((run / "summary.json").read_text())
    assert 0.0 < summary["test_auc"] < 1.0
    assert summary["params"] > 0
    metrics = (run / "metrics.csv").read_text().splitlines()
    assert metrics[0] == "epoch,train_loss,val_auc,val_logloss"
    assert len(metrics) == 3  # header + 2 epochs
    for line in (run / "train.log").read_text().splitlines():
        rec = json.loads(line)
        assert "seconds" in rec and "val_auc" in rec


def test_train_is_byte_deterministic(workdir, tmp_path):
    for d in ("a", "b"):
        assert main(["train", "--config", workdir["config"],
                     "--data", workdir["data"],
                     "--out", str(tmp_path / d)]) == 0
    for name in ("metrics.csv", "checkpoint.json"):
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes()
        assert a == b, name
    # and identical to the module-level run with the same config
    assert (workdir["run"] / "metrics.csv").read_bytes() == \
        (tmp_path / "a" / "metrics.csv").read_bytes()


def test_eval_subcommand(workdir, tmp_path):
    assert main(["eval", "--checkpoint", str(workdir["run"] / "checkpoint.json"),
                 "--data", workdir["data"], "--split", "test",
                 "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "eval.csv").read_text().splitlines()
    assert lines[0] == "split,auc,gauc,logloss"
    split, auc, _, logloss = lines[1].split(",")
    assert split == "test"
    assert 0.0 < float(auc) < 1.0 and float(logloss) > 0.0


def test_analyze_sparsity_and_views(workdir, tmp_path):
    ckpt = str(workdir["run"] / "checkpoint.json")
    assert main(["analyze", "sparsity", "--checkpoint", ckpt,
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "sparsity.csv").exists()
    assert (tmp_path / "sparsity.png").stat().st_size > 0
    assert main(["analyze", "views", "--checkpoint", ckpt,
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "view_similarity.csv").exists()
    assert (tmp_path / "view_similarity.png").stat().st_size > 0


def test_analyze_ics(workdir, tmp_path):
    assert main(["analyze", "ics", "--config", workdir["config"],
                 "--data", workdir["data"], "--steps", "4",
                 "--sample-every", "2", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "ics_trace.csv").read_text().splitlines()
    assert lines[0] == "step,layer,view,sparsity,mean_abs"
    steps = {int(l.split(",")[0]) for l in lines[1:]}
    assert steps == {0, 2, 4}
    assert (tmp_path / "ics_trace.png").stat().st_size > 0


def test_sweep_subcommand(workdir, tmp_path):
    assert main(["sweep", "--config", workdir["config"],
                 "--data", workdir["data"], "--axis", "views",
                 "--grid", "1", "2", "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "sweep_views.csv").read_text().splitlines()
    assert lines[0] == "value,params,flops,val_auc,val_logloss,sparsity"
    assert len(lines) == 3
    assert (tmp_path / "sweep_views.png").stat().st_size > 0


def test_ablate_subcommand(workdir, tmp_path):
    assert main(["ablate", "--config", workdir["config"],
                 "--data", workdir["data"], "--seeds", "0",
                 "--out", str(tmp_path)]) == 0
    lines = (tmp_path / "ablation.csv").read_text().splitlines()
    assert lines[0] == "variant,params,budget_ratio,mean_auc,delta_auc"
    assert len(lines) == 7  # six variants
    assert (tmp_path / "ablation.png").stat().st_size > 0


def test_errors_exit_nonzero_with_json(workdir, tmp_path, capsys):
    rc = main(["train", "--config", workdir["config"],
               "--data", str(tmp_path / "missing.csv"),
               "--out", str(tmp_path)])
    assert rc == 1
    err = capsys.readouterr().err.strip()
    assert "error" in json.loads(err)

    bad = tmp_path / "bad.csv"
    bad.write_text("label,user_id,c0\n1,0,notanint\n")
    rc = main(["train", "--config", workdir["config"], "--data", str(bad),
               "--out", str(tmp_path)])
    assert rc == 1
    err = capsys.readouterr().err.strip()
    assert "line 2" in json.loads(err)["error"]


def test_raw_csv_preprocessing(workdir, tmp_path):
    # raw mode collapses rare train-split categories; frequent ones survive
    rows = ["label,user_id,c0"]
    for i in range(400):
        rows.append(f"{i % 2},{i % 7},{i % 3}")
    path = tmp_path / "raw.csv"
    path.write_text("\n".join(rows) + "\n")
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({
        "model": {"backbone": "ssr_static", "depth": 1, "b": 2, "d_v": 3,
                  "embed_dim": 4, "seed": 0},
        "train": {"batch_size": 128, "max_epochs": 1, "patience": 1},
    }))
    assert main(["train", "--config", str(config), "--data", str(path),
                 "--raw-csv", "--out", str(tmp_path / "run")]) == 0
    assert (tmp_path / "run" / "summary.json").exists()
