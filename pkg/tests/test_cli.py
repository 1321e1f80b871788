import csv
import json

import numpy as np
import pytest

from dissent import cli, data


@pytest.fixture
def mnist_dir(tmp_path):
    rng = np.random.default_rng(0)
    d = tmp_path / "mnist"
    d.mkdir()
    for stem, n in (("train", 120), ("t10k", 30)):
        labels = np.arange(n) % 3
        images = rng.integers(0, 40, size=(n, 4, 4), dtype=np.uint8)
        images[np.arange(n), labels, labels] = 250  # one bright pixel per class
        data.write_idx(images, labels, d / f"{stem}-images-idx3-ubyte", d / f"{stem}-labels-idx1-ubyte")
    return d


@pytest.fixture
def config_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"n_members": 3, "hidden": 8, "epochs": 3, "batch_size": 16,
                             "learning_rate": 0.5, "lam": 0.5}, indent=1))
    return p


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.mark.parametrize("values, expected", [("0,0,1,3", "3"), ("0 0 0", "0")])
def test_tune_tau_from_values(capsys, values, expected):
    code, out, _ = run(capsys, "tune-tau", "--disagreements", values)
    assert code == 0 and out.strip() == expected


def test_tune_tau_requires_input(capsys):
    code, _, err = run(capsys, "tune-tau")
    assert code == 2 and "disagreements" in err


def test_config_errors_are_line_precise(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "lam": 1.0,\n  "eta": oops\n}\n')
    code, _, err = run(capsys, "train", "--config", bad, "--out", tmp_path / "o")
    assert code == 2 and f"{bad}:3:" in err
    unknown = tmp_path / "unknown.json"
    unknown.write_text('{\n  "lam": 1.0,\n  "lamda": 2\n}\n')
    code, _, err = run(capsys, "train", "--config", unknown, "--out", tmp_path / "o")
    assert code == 2 and f"{unknown}:3" in err and "lamda" in err
    neg = tmp_path / "neg.json"
    neg.write_text('{"eta": -1}')
    code, _, err = run(capsys, "train", "--config", neg, "--out", tmp_path / "o")
    assert code == 2 and "eta" in err


def test_train_attack_evaluate_round_trip(tmp_path, capsys, mnist_dir, config_file):
    run_dir = tmp_path / "run"
    code, out, err = run(capsys, "train", "--data", mnist_dir, "--config", config_file, "--seed", 4,
                         "--out", run_dir, "--lambda", 0.25)
    assert code == 0, err
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert manifest["config"]["seed"] == 4 and manifest["config"]["lam"] == 0.25
    assert manifest["version"]
    rows = list(csv.DictReader((run_dir / "train_log.csv").open()))
    assert list(rows[0]) == ["epoch", "J", "Je", "Ja", "clean_acc"] and len(rows) == 3

    # write-once: a second run into the same directory is refused
    code, _, err = run(capsys, "train", "--data", mnist_dir, "--config", config_file, "--out", run_dir)
    assert code == 2 and "write-once" in err

    adv_dir = tmp_path / "adv"
    code, out, err = run(capsys, "attack", "--data", mnist_dir, "--model", run_dir / "model.ckpt",
                         "--attack", "bim", "--epsilon", 0.2, "--lambda-attack", 0.5, "--out", adv_dir)
    assert code == 0, err
    assert json.loads((adv_dir / "manifest.json").read_text())["attack"]["lambda_attack"] == 0.5

    code, out, err = run(capsys, "evaluate", "--data", mnist_dir, "--model", run_dir / "model.ckpt",
                         "--adv", adv_dir / "batch", "--tau", 1, "--out", tmp_path / "ev")
    assert code == 0, err
    assert "bim" in out
    row = next(csv.DictReader((tmp_path / "ev" / "report.csv").open()))
    assert 0 <= float(row["det"]) <= 1

    code, out, _ = run(capsys, "evaluate", "--data", mnist_dir, "--model", run_dir / "model.ckpt", "--noise", 0.1)
    assert code == 0 and "noise" in out

    code, out, _ = run(capsys, "tune-tau", "--data", mnist_dir, "--model", run_dir / "model.ckpt")
    assert code == 0 and int(out) >= 0

    code, _, err = run(capsys, "attack", "--data", mnist_dir, "--model", run_dir / "model.ckpt",
                       "--mode", "black", "--out", tmp_path / "adv2")
    assert code == 2 and "--source" in err


def test_reproduce_writes_reports(tmp_path, capsys, mnist_dir, config_file):
    out_dir = tmp_path / "repro"
    code, out, err = run(capsys, "reproduce", "mnist", "--data", mnist_dir, "--config", config_file,
                         "--out", out_dir, "--skip-cw", "--limit", 12)
    assert code == 0, err
    for name in ("report.csv", "report.txt", "manifest.json", "target.ckpt", "black_source.ckpt",
                 "oblivious_source.ckpt", "train_log.csv"):
        assert (out_dir / name).exists()
    rows = list(csv.DictReader((out_dir / "report.csv").open()))
    assert {r["condition"] for r in rows} == {"clean", "noise", "fgs", "bim", "deepfool"}
    assert not any(r["error"] for r in rows)
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["train_config"]["n_members"] == 3
    assert "MNIST" in out


def test_unknown_mode_rejected(capsys):
    with pytest.raises(SystemExit):
        cli.main(["attack", "--model", "x", "--mode", "grey"])
