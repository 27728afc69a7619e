import csv
import json
import math

import pytest

from cli import build_parser, dispatch
from dadkit.diagnostics import EmpiricalDistribution


@pytest.fixture(autouse=True)
def isolated_home(tmp_path, monkeypatch):
    home = tmp_path / "home"
    monkeypatch.setenv("DAD_HOME", str(home))
    monkeypatch.setenv("DAD_DEVICE", "cpu")
    monkeypatch.setenv("DAD_LOG_LEVEL", "WARNING")
    return home


def test_no_arguments_prints_usage(capsys):
    assert dispatch([]) == 2
    assert "usage" in capsys.readouterr().out


def test_help_exits_cleanly():
    assert dispatch(["--help"]) == 0


def test_bad_flags_are_usage_errors():
    assert dispatch(["frobnicate"]) == 2
    assert dispatch(["diagnose", "lemma31", "--trials", "many"]) == 2
    assert dispatch(["train", "--data", "x"]) == 2


def test_config_errors_exit_2(capsys):
    assert dispatch(["diagnose", "lemma31", "--trials", "3", "--set", "bogus=1"]) == 2
    assert "bogus" in capsys.readouterr().err
    assert dispatch(["diagnose", "lemma31", "--set", "novalue"]) == 2


def test_runtime_failures_exit_1(tmp_path, capsys):
    code = dispatch(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "m.pt")])
    assert code == 1
    assert "Operation failed" in capsys.readouterr().out


def test_diagnose_is_reproducible(capsys, isolated_home):
    argv = ["diagnose", "lemma31", "--trials", "50", "--seed", "7"]
    assert dispatch(argv) == 0
    first = capsys.readouterr().out
    assert dispatch(argv) == 0
    assert capsys.readouterr().out == first
    assert "50/50" in first

    manifest = json.loads((isolated_home / "diagnose-lemma31.manifest.json").read_text())
    assert manifest["seed"] == 7
    assert manifest["argv"] == argv


def test_diagnose_wasserstein(tmp_path, capsys):
    p = EmpiricalDistribution.point_mass([0.0, 0.0], 0).save(tmp_path / "p.txt")
    q = EmpiricalDistribution.point_mass([3.0, 4.0], 0).save(tmp_path / "q.txt")
    argv = ["diagnose", "wasserstein", "--p", str(p), "--q", str(q), "--out", str(tmp_path / "runs")]
    assert dispatch(argv) == 0
    out = capsys.readouterr().out
    assert "tv: 2.0" in out
    assert "w1: 5.0" in out
    assert (tmp_path / "runs" / "diagnose-wasserstein.manifest.json").exists()

    assert dispatch(["diagnose", "wasserstein"]) == 2


def test_parser_defaults():
    args = build_parser().parse_args(["experiment", "--out", "x"])
    assert args.seeds == "0,1,2"
    assert args.heldout_kinds == "fog,pixelate"
    assert args.margin == 2.0


SMALL = [
    "--set", "batch_size=8",
    "--set", "lr=0.02",
    "--set", "width=4",
    "--set", "epsilon=0.05",
    "--set", "step_size=0.05",
]
SMALL_VQ = [
    "--set", "vq_codebook_size=16",
    "--set", "vq_latent_dim=4",
    "--set", "vq_downsample=2",
    "--set", "vq_hidden=8",
    "--set", "vq_batch_size=16",
]


@pytest.mark.slow
def test_pipeline_end_to_end(tmp_path, capsys):
    data = tmp_path / "data"
    art = tmp_path / "art"
    run = lambda *argv: dispatch([str(a) for a in argv])  # noqa: E731

    assert run("prepare-data", "--out", data, "--classes", 3, "--per-class", 8, "--test-per-class", 4, "--size", 8) == 0
    assert run("train-vq", "--data", data / "train", "--out", art / "vq.pt", "--epochs", 2, *SMALL_VQ) == 0
    assert run(
        "train", "--data", data / "train", "--out", art / "teacher.pt", "--epochs", 2,
        "--objective", "ce", "--corrupt", "gaussian_noise,blur", *SMALL,
    ) == 0
    assert run(
        "build-cache", "--data", data / "train", "--teacher", art / "teacher.pt", "--vq", art / "vq.pt",
        "--out", art / "cache.bin", "--verify", *SMALL,
    ) == 0

    common = ["--data", data / "train", "--epochs", 2, *SMALL]
    assert run("train", "--out", art / "ce.pt", "--objective", "ce", *common) == 0
    assert run(
        "train", "--out", art / "dad.pt", "--objective", "dad",
        "--teacher", art / "teacher.pt", "--cache", art / "cache.bin", *common,
    ) == 0

    (tmp_path / "suites.env").write_text("BASE=data/test\nMCE_GRID=fog:1-2\nclean=data/test\nfog=corrupt:fog:1-5\n")
    report = art / "report.csv"
    assert run(
        "eval", "--model", f"ce={art / 'ce.pt'}", "--model", f"dad={art / 'dad.pt'}",
        "--suites", tmp_path / "suites.env", "--baseline", art / "ce.pt", "--report", report,
    ) == 0
    with report.open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["model"] for r in rows] == ["ce", "dad"]
    # Undefined (nan) only when the baseline makes no mistakes on the grid.
    mce = float(rows[0]["mce"])
    assert math.isnan(mce) or mce == pytest.approx(100.0)

    budget = art / "budget.csv"
    assert run(
        "budget", "--log", f"ce={art / 'ce.log.csv'}", "--log", f"dad={art / 'dad.log.csv'}", "--out", budget
    ) == 0
    with budget.open() as fh:
        relative = {r["run"]: float(r["relative"]) for r in csv.DictReader(fh)}
    assert relative["ce"] == 1.0
    assert relative["dad"] > 1.0
    capsys.readouterr()
