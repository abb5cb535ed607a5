import json

import pytest

from trait_probe.cli import main


def run(argv):
    return main([*argv, "--quiet"])


def test_no_args_usage_exit_2(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main([])
    assert excinfo.value.code == 2
    assert "usage" in capsys.readouterr().err.lower()


def test_unknown_flag_exit_2():
    with pytest.raises(SystemExit) as excinfo:
        main(["validate", "--manifest", "x", "--bogus"])
    assert excinfo.value.code == 2


def test_validate_synth_corpus(tiny_corpus):
    root = tiny_corpus["root"]
    assert run(["validate", "--manifest", str(root / "manifest.txt")]) == 0
    assert run([
        "validate", "--manifest", str(root / "manifest.txt"),
        "--features", str(root / "features"),
        "--models", "none", "--layers", "0-3",
    ]) == 0


def test_validate_missing_manifest(tmp_path):
    assert run(["validate", "--manifest", str(tmp_path / "nope.txt")]) == 1


def test_validate_bad_manifest(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("trait-probe-manifest v1\ndataset=d age_min=9 age_max=4 speaker_disjoint=0\n")
    assert run(["validate", "--manifest", str(bad)]) == 1


def test_end_to_end_smoke(tmp_path):
    out = tmp_path / "corpus"
    assert run([
        "synth", "--out", str(out), "--speakers", "9", "--utts", "4",
        "--ages", "6-8", "--duration", "0.35:0.5", "--seed", "7",
        "--ssl-layers", "4", "--ssl-dim", "12", "--ssl-decay", "0.7",
        "--ssl-signal", "3.0",
    ]) == 0
    assert (out / "manifest.txt").is_file()
    assert (out / "run.json").is_file()

    assert run(["mfcc", "--manifest", str(out / "manifest.txt"),
                "--out", str(out / "features")]) == 0

    report_dir = tmp_path / "report"
    assert run([
        "sweep-layers", "--manifest", str(out / "manifest.txt"),
        "--features", str(out / "features"), "--models", "none",
        "--layers", "0-3", "--task", "age", "--out", str(report_dir),
        "--epochs", "6", "--patience", "2", "--seed", "7",
    ]) == 0
    csv_path = report_dir / "sweep_layers_synthetic_age.csv"
    lines = csv_path.read_text().splitlines()
    best = [line for line in lines[1:] if line.split(",")[9] == "1"]
    ssl_best = [line for line in best if line.split(",")[2] == "none"]
    assert len(ssl_best) == 1
    assert int(ssl_best[0].split(",")[3]) <= 2  # early layer wins by construction

    rerender = tmp_path / "rerender"
    assert run(["report", "--in", str(csv_path), "--out", str(rerender)]) == 0
    assert (rerender / "sweep_layers_synthetic_age.csv").read_bytes() == csv_path.read_bytes()


def test_run_json_provenance(tmp_path, monkeypatch):
    out = tmp_path / "c"
    monkeypatch.setenv("TRAIT_PROBE_SEED", "99")
    assert run(["synth", "--out", str(out), "--speakers", "2", "--utts", "1",
                "--ages", "6", "--duration", "0.3:0.35"]) == 0
    record = json.loads((out / "run.json").read_text())
    assert record["seed"] == 99  # env var honored
    assert record["command"] == "synth"
    assert record["version"]
    monkeypatch.setenv("TRAIT_PROBE_SEED", "98")
    assert run(["synth", "--out", str(out), "--speakers", "2", "--utts", "1",
                "--ages", "6", "--duration", "0.3:0.35", "--seed", "4"]) == 0
    record = json.loads((out / "run.json").read_text())
    assert record["seed"] == 4  # explicit flag beats the env var


def test_quiet_keeps_stdout_clean(tmp_path, capsys):
    out = tmp_path / "c"
    assert run(["synth", "--out", str(out), "--speakers", "2", "--utts", "1",
                "--ages", "6", "--duration", "0.3:0.35"]) == 0
    captured = capsys.readouterr()
    assert captured.out == ""


def test_plan_file(tmp_path, tiny_corpus):
    root = tiny_corpus["root"]
    plan = tmp_path / "plan.txt"
    plan.write_text(
        f"manifest={root / 'manifest.txt'}\n"
        f"features={root / 'features'}\n"
        "models=none\n"
        "layers=0-1\n"
        "task=age\n"
        "epochs=5\n"
        "patience=2\n"
        f"out={tmp_path / 'planned'}\n"
    )
    assert run(["sweep-layers", "--plan", str(plan), "--seed", "11",
                "--no-baseline"]) == 0
    assert (tmp_path / "planned" / "sweep_layers_synthetic_age.csv").is_file()


def test_sweep_missing_required_option(tmp_path):
    assert run(["sweep-layers", "--manifest", "m", "--features", "f"]) == 2
