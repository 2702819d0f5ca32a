"""End-to-end CLI runs, in process, including exit-code contract."""

import json

import numpy as np
import pytest

from pseudorank.checkpoint import save_checkpoint
from pseudorank.cli import main
from pseudorank.data import read_prepared
from pseudorank.synth import synthetic_interactions, write_interactions_tsv


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Raw file, prepared directory, and one finished training run."""
    root = tmp_path_factory.mktemp("cli")
    raw = root / "interactions.tsv"
    records = synthetic_interactions(
        seed=5, n_users=25, n_items=50, min_degree=6, max_degree=12, latent_dim=6
    )
    write_interactions_tsv(records, raw)

    prepared = root / "prepared"
    assert main(["prepare", "--input", str(raw), "--output", str(prepared), "--seed", "3"]) == 0

    config = root / "config.json"
    config.write_text(
        json.dumps(
            {
                "embedding_dim": 8,
                "batch_size": 16,
                "k": 3,
                "beta": 0.5,
                "epochs": 2,
                "lr": 0.05,
                "seed": 7,
            }
        )
    )
    run = root / "run"
    assert main(["train", "--config", str(config), "--data", str(prepared), "--out", str(run)]) == 0
    return {"root": root, "raw": raw, "prepared": prepared, "config": config, "run": run}


# -- prepare -------------------------------------------------------------------


def test_prepare_outputs_and_stdout(workdir, capsys, tmp_path):
    out = tmp_path / "prep"
    code = main(["prepare", "--input", str(workdir["raw"]), "--output", str(out), "--seed", "3"])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "loaded" in stdout and "split (seed 3)" in stdout
    for name in ("split_manifest.tsv", "id_maps.json", "stats.json"):
        assert (out / name).exists()
    # same input and seed reproduce the manifest byte for byte
    manifest = (out / "split_manifest.tsv").read_bytes()
    assert manifest == (workdir["prepared"] / "split_manifest.tsv").read_bytes()


def test_prepare_seed_changes_split(workdir, tmp_path):
    out = tmp_path / "prep"
    assert main(["prepare", "--input", str(workdir["raw"]), "--output", str(out), "--seed", "4"]) == 0
    assert (
        (out / "split_manifest.tsv").read_bytes()
        != (workdir["prepared"] / "split_manifest.tsv").read_bytes()
    )


def test_prepare_min_core_filters(workdir, tmp_path, capsys):
    out = tmp_path / "prep"
    code = main(
        [
            "prepare",
            "--input",
            str(workdir["raw"]),
            "--output",
            str(out),
            "--min-core",
            "3",
        ]
    )
    assert code == 0
    assert "after 3-core filter" in capsys.readouterr().out


def test_prepare_missing_input_is_data_error(tmp_path, capsys):
    code = main(["prepare", "--input", str(tmp_path / "nope.tsv"), "--output", str(tmp_path / "o")])
    assert code == 3
    assert "data error" in capsys.readouterr().err


def test_prepare_bad_ratios_is_usage_error(workdir, tmp_path, capsys):
    code = main(
        [
            "prepare",
            "--input",
            str(workdir["raw"]),
            "--output",
            str(tmp_path / "o"),
            "--ratios",
            "0.8,0.2",
        ]
    )
    assert code == 2
    assert "config error" in capsys.readouterr().err


# -- train ---------------------------------------------------------------------


def test_train_artifacts_and_summary(workdir, capsys):
    # the module fixture already trained; check its outputs and retrain to read stdout
    for name in ("config.json", "telemetry.csv", "history.json", "best.ckpt", "run_info.json"):
        assert (workdir["run"] / name).exists()
    rerun = workdir["root"] / "rerun"
    code = main(
        ["train", "--config", str(workdir["config"]), "--data", str(workdir["prepared"]), "--out", str(rerun)]
    )
    assert code == 0
    stdout = capsys.readouterr().out
    assert "valid ndcg@10" in stdout and "test ndcg@10" in stdout
    # same config and data: byte-identical deterministic artifacts
    for name in ("telemetry.csv", "history.json", "best.ckpt"):
        assert (rerun / name).read_bytes() == (workdir["run"] / name).read_bytes()


def test_train_unknown_config_key_is_usage_error(workdir, tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"learnig_rate": 0.1}))
    code = main(["train", "--config", str(bad), "--data", str(workdir["prepared"]), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "learnig_rate" in capsys.readouterr().err


def test_train_missing_data_dir_is_data_error(workdir, tmp_path, capsys):
    code = main(
        ["train", "--config", str(workdir["config"]), "--data", str(tmp_path / "void"), "--out", str(tmp_path / "o")]
    )
    assert code == 3
    assert "not a prepared data directory" in capsys.readouterr().err


# -- evaluate ------------------------------------------------------------------


def test_evaluate_stdout_and_file_agree(workdir, tmp_path, capsys):
    out = tmp_path / "metrics.json"
    code = main(
        [
            "evaluate",
            "--checkpoint",
            str(workdir["run"] / "best.ckpt"),
            "--data",
            str(workdir["prepared"]),
            "--split",
            "test",
            "--ks",
            "5,10",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    stdout = capsys.readouterr().out
    rows = json.loads(stdout)
    assert [r["k"] for r in rows] == [5, 10]
    for row in rows:
        assert set(row) >= {"k", "hr", "recall", "ndcg", "split", "n_users"}
        assert 0.0 <= row["ndcg"] <= 1.0
    assert out.read_text() == stdout


def test_evaluate_planted_checkpoint_is_perfect(workdir, tmp_path, capsys):
    """A checkpoint that scores every held-out item on top must hit 1.0 everywhere."""
    store = read_prepared(workdir["prepared"])
    n_u, n_i = store.n_users, store.n_items
    user_emb = np.eye(n_u, dtype=np.float64)
    item_emb = np.zeros((n_i, n_u), dtype=np.float64)
    for u in range(n_u):
        for i in store.test[u]:
            item_emb[i, u] = 50.0
        for i in store.valid[u]:
            item_emb[i, u] = 40.0
    ckpt = tmp_path / "planted.ckpt"
    save_checkpoint(ckpt, {"user_emb": user_emb, "item_emb": item_emb}, {})
    code = main(
        ["evaluate", "--checkpoint", str(ckpt), "--data", str(workdir["prepared"]), "--split", "test", "--ks", "10"]
    )
    assert code == 0
    rows = json.loads(capsys.readouterr().out)
    assert rows[0]["hr"] == 1.0 and rows[0]["ndcg"] == 1.0


def test_evaluate_corrupt_checkpoint_is_data_error(workdir, tmp_path, capsys):
    bad = tmp_path / "bad.ckpt"
    raw = bytearray((workdir["run"] / "best.ckpt").read_bytes())
    raw[0] ^= 0xFF
    bad.write_bytes(bytes(raw))
    code = main(["evaluate", "--checkpoint", str(bad), "--data", str(workdir["prepared"])])
    assert code == 3
    assert "magic" in capsys.readouterr().err


def test_evaluate_shape_mismatch_is_data_error(workdir, tmp_path, capsys):
    other_raw = tmp_path / "other.tsv"
    write_interactions_tsv(
        synthetic_interactions(seed=9, n_users=12, n_items=30, min_degree=5, max_degree=8),
        other_raw,
    )
    other = tmp_path / "otherprep"
    assert main(["prepare", "--input", str(other_raw), "--output", str(other)]) == 0
    code = main(["evaluate", "--checkpoint", str(workdir["run"] / "best.ckpt"), "--data", str(other)])
    assert code == 3
    assert "does not match" in capsys.readouterr().err


# -- verify --------------------------------------------------------------------


def test_verify_passes_and_writes_reports(tmp_path, capsys):
    out = tmp_path / "reports.json"
    code = main(["verify", "--skip-timing", "--out", str(out)])
    stdout = capsys.readouterr().out
    assert code == 0
    lines = [ln for ln in stdout.splitlines() if ln]
    assert lines and all(ln.startswith("PASS") for ln in lines)
    reports = json.loads(out.read_text())
    assert all(r["passed"] for r in reports)


def test_verify_failure_exit_code(capsys):
    code = main(["verify", "--skip-timing", "--inject-failure", "pairwise_equivalence"])
    captured = capsys.readouterr()
    assert code == 4
    assert any(ln.startswith("FAIL pairwise_equivalence") for ln in captured.out.splitlines())
    assert "failed" in captured.err


# -- report --------------------------------------------------------------------


def test_report_human_readable(workdir, capsys):
    code = main(["report", "--run", str(workdir["run"])])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "config hash" in stdout
    assert "test k=10" in stdout
    assert "loss mode: prp" in stdout


def test_report_json(workdir, capsys):
    code = main(["report", "--run", str(workdir["run"]), "--json"])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["epochs_run"] == 2
    assert summary["ablations"] == {"no_ranker": False, "no_lp": False, "no_confidence": False}


def test_report_missing_run_is_data_error(tmp_path, capsys):
    code = main(["report", "--run", str(tmp_path / "void")])
    assert code == 3
    assert "history.json" in capsys.readouterr().err


# -- parser --------------------------------------------------------------------


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_missing_required_flag_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--config", "c.json"])
    assert exc.value.code == 2
