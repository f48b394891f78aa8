import json
import subprocess
import sys

import pytest

from bonegraph import cli
from bonegraph.cli import main
from bonegraph.metrics import read_report_csv


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "data"
    assert main(["phantom", "gen", "--n", "4", "--size", "48", "--seed", "2", "--out", str(root)]) == 0
    return root


def test_phantom_gen_writes_manifest_and_provenance(dataset):
    assert (dataset / "manifest.csv").exists()
    prov = json.loads((dataset / "provenance.json").read_text())
    assert prov["seed"] == 2 and len(prov["config_sha256"]) == 64
    assert "numpy" in prov["versions"]


def test_train_delineate_evaluate(dataset, tmp_path):
    fast = ["--set", "boost.t_size=5", "--set", "sampling.per_image=200", "--preset", "cbg-paper"]
    assert main(["train", "--data", str(dataset), "--range", "0:3", "--out", str(tmp_path / "m"), *fast]) == 0
    assert (tmp_path / "m" / "shadow.json").exists() and (tmp_path / "m" / "training.csv").exists()
    assert main(["delineate", "--model", str(tmp_path / "m"), "--data", str(dataset), "--range", "3:4",
                 "--out", str(tmp_path / "d"), *fast]) == 0
    assert list((tmp_path / "d").glob("*_overlay.png"))
    assert main(["evaluate", "--pred", str(tmp_path / "d"), "--data", str(dataset), "--range", "3:4",
                 "--out", str(tmp_path / "e")]) == 0
    report = read_report_csv(tmp_path / "e" / "metrics.csv")
    assert "mean" in report and len(report) == 2


def test_baseline_and_features(dataset, tmp_path):
    assert main(["baseline", "ps-up", "--data", str(dataset), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b" / "metrics.csv").exists()
    img = next(dataset.glob("img_*.pgm"))
    assert main(["features", "extract", "--image", str(img), "--out", str(tmp_path / "f")]) == 0
    assert (tmp_path / "f" / "features.csv").exists()


@pytest.mark.parametrize("argv", [
    ["train", "--data", "/nonexistent/path"],
    ["phantom", "gen", "--n", "0"],
    ["phantom", "gen", "--size", "8"],
    ["train", "--data", ".", "--set", "graph.bogus=1"],
    ["gridsearch", "--data", ".", "--grid", "k3=1e6"],
    ["baseline", "ps-up"],
])
def test_validation_errors_exit_2(argv, tmp_path):
    assert main([*argv, "--out", str(tmp_path)]) == 2


def test_usage_error_exit_2(capsys):
    assert main(["no-such-command"]) == 2


def test_runtime_failure_exit_3(monkeypatch, tmp_path, capsys):
    def boom(args, cfg, out):
        raise RuntimeError("disk on fire")

    monkeypatch.setitem(cli.COMMANDS, "phantom", boom)
    assert main(["phantom", "gen", "--out", str(tmp_path)]) == 3
    assert "disk on fire" in capsys.readouterr().err


def test_entry_point_runs(tmp_path):
    r = subprocess.run([sys.executable, "-m", "bonegraph.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip()
