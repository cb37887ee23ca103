import json

import pytest

from catcast.cli import main
from catcast.ingest import GeneratorSpec, synth_raw


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def machine(capsys, *argv):
    code, out, err = run(capsys, *argv, "--format", "machine")
    assert code == 0, err
    return json.loads(out)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth -> ingest -> train (stages 1-3), shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    GeneratorSpec.uniform(5, 0.0, seed=12).save(root / "spec.json")
    steps = [
        ["synth", "--spec", root / "spec.json", "--rows", 1500, "--out", root / "raw.csv"],
        ["ingest", "--input", root / "raw.csv", "--out", root / "data", "--seed", 3],
    ]
    for s in (1, 2, 3):
        steps.append(["train", "--data", root / "data", "--stage", s, "--model", "mlp", "--hidden", "32,32",
                      "--epochs", 20, "--lr", 0.01, "--batch-size", 64, "--seed", 1,
                      "--out", root / f"s{s}.bin", "--report", root / f"train{s}.json"])
    for argv in steps:
        assert main([str(a) for a in argv] + ["--format", "machine"]) == 0
    return root


def models(root):
    return [root / f"s{s}.bin" for s in (1, 2, 3)]


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for name in ("ingest", "synth", "train", "gridsearch", "evaluate", "predict", "gradcheck", "reproduce"):
        assert name in out


def test_no_command_is_usage_error(capsys):
    assert main([]) == 2


def test_synth_reports_bayes_accuracy(workspace, capsys):
    doc = machine(capsys, "synth", "--spec", workspace / "spec.json", "--rows", 10, "--out", workspace / "x.csv")
    assert doc["metrics"]["bayes_accuracy"] == {"1": 1.0, "2": 1.0, "3": 1.0}
    assert doc["run_config"]["rows"] == 10


def test_train_report(workspace):
    doc = json.loads((workspace / "train1.json").read_text())
    assert doc["run_config"]["model"] == "mlp"
    assert len(doc["metrics"]["history"]) == 20
    assert doc["metrics"]["validation"]["top1"] > 0.9


def test_evaluate_chained(workspace, capsys):
    doc = machine(capsys, "evaluate", "--data", workspace / "data", "--mode", "chained", "--model", *models(workspace))
    stages = doc["metrics"]["stages"]
    assert [r["stage"] for r in stages] == [1, 2, 3]
    assert all(r["mode"] == "chained" and r["top1"] > 0.9 for r in stages)
    assert all(r["provenance"]["checksum"].startswith("sha256:") for r in stages)


def test_evaluate_text_output(workspace, capsys):
    code, out, _ = run(capsys, "evaluate", "--data", workspace / "data", "--stage", "1",
                       "--model", workspace / "s1.bin")
    assert code == 0 and "Top1" in out


def test_predict_known_record(workspace, capsys):
    spec = GeneratorSpec.load(workspace / "spec.json")
    raw = synth_raw(spec, 1)
    row = dict(zip(raw.header, raw.cells[0]))
    argv = ["predict", "--model", *models(workspace)]
    for name in ("DATE_CASE", "NOTIFICATION_COUNTRY", "DISTRIBUTION_STATUS", "COUNTRY_ORIGIN"):
        argv += ["--var", f"{name}={row[name]}"]
    doc = machine(capsys, *argv)
    preds = doc["metrics"]["predictions"]
    assert [p["target"] for p in preds] == ["PRODUCT_CATEGORY", "HAZARD_CATEGORY", "ACTION_TAKEN"]
    assert [p["candidates"][0]["category"] for p in preds] == [
        row["PRODUCT_CATEGORY"], row["HAZARD_CATEGORY"], row["ACTION_TAKEN"]]
    assert doc["metrics"]["unknown"] == []


def test_predict_from_record_file(workspace, capsys):
    path = workspace / "one.csv"
    path.write_text("MONTH,NOTIFICATION_COUNTRY,DISTRIBUTION_STATUS,COUNTRY_ORIGIN\n"
                    "3,notification_country_000,distribution_status_001,atlantis\n")
    code, out, err = run(capsys, "predict", "--model", workspace / "s1.bin", "--record", path)
    assert code == 0
    assert "warning" in err.lower() and "COUNTRY_ORIGIN" in err
    assert "PRODUCT_CATEGORY" in out


def test_predict_missing_variable(workspace, capsys):
    code, _, err = run(capsys, "predict", "--model", workspace / "s1.bin", "--var", "MONTH=3")
    assert code == 2
    assert "NOTIFICATION_COUNTRY" in err


def test_missing_option_is_usage_error(capsys):
    code, _, err = run(capsys, "train", "--stage", "1")
    assert code == 2 and "data" in err


def test_corrupt_artifact_exits_1(workspace, capsys, tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes((workspace / "s1.bin").read_bytes()[:-10])
    code, _, err = run(capsys, "evaluate", "--data", workspace / "data", "--model", bad)
    assert code == 1 and "error" in err


def test_reproduce_evaluate_and_train(workspace, capsys):
    machine(capsys, "evaluate", "--data", workspace / "data", "--model", *models(workspace),
            "--report", workspace / "eval.json")
    for name in ("eval.json", "train2.json"):
        doc = machine(capsys, "reproduce", workspace / name)
        assert doc["metrics"]["reproduced"] is True


def test_reproduce_detects_tampering(workspace, capsys, tmp_path):
    doc = json.loads((workspace / "train1.json").read_text())
    doc["run_config"]["seed"] = 99
    (tmp_path / "t.json").write_text(json.dumps(doc))
    code, _, err = run(capsys, "reproduce", tmp_path / "t.json")
    assert code == 1 and "differ" in err


def test_reproduce_needs_provenance(capsys, tmp_path):
    (tmp_path / "r.json").write_text(json.dumps({"metrics": {}}))
    code, _, err = run(capsys, "reproduce", tmp_path / "r.json")
    assert code == 1 and "provenance" in err


def test_gridsearch_trace_reproduces(workspace, capsys):
    trace = workspace / "trace.jsonl"
    doc = machine(capsys, "gridsearch", "--data", workspace / "data", "--k", 2, "--budget", 1,
                  "--width-scale", 0.0625, "--max-rows", 200, "--trace", trace)
    assert [w["iteration"] for w in doc["metrics"]["winners"]] == [1, 2, 3, 4]
    assert machine(capsys, "reproduce", trace)["metrics"]["reproduced"] is True


def test_config_file_and_flag_precedence(workspace, capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"spec": str(workspace / "spec.json"), "rows": 7, "seed": 5}))
    doc = machine(capsys, "synth", "--config", cfg, "--out", tmp_path / "a.csv")
    assert doc["run_config"]["rows"] == 7 and doc["run_config"]["seed"] == 5
    doc = machine(capsys, "synth", "--config", cfg, "--rows", 9, "--out", tmp_path / "a.csv")
    assert doc["run_config"]["rows"] == 9


def test_seed_environment_fallback(workspace, capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("CATCAST_SEED", "41")
    args = ["synth", "--spec", workspace / "spec.json", "--rows", 3, "--out", tmp_path / "a.csv"]
    assert machine(capsys, *args)["run_config"]["seed"] == 41
    assert machine(capsys, *args, "--seed", 2)["run_config"]["seed"] == 2
    monkeypatch.setenv("CATCAST_SEED", "forty")
    assert run(capsys, *args)[0] == 2


def test_identical_runs_identical_reports(workspace, capsys, tmp_path):
    outputs = []
    for _ in range(2):
        machine(capsys, "train", "--data", workspace / "data", "--stage", 2, "--model", "forest", "--encoding",
                "binary", "--n-trees", 5, "--seed", 4, "--out", tmp_path / "m.json",
                "--report", tmp_path / "report.json")
        outputs.append(((tmp_path / "report.json").read_bytes(), (tmp_path / "m.json").read_bytes()))
    assert outputs[0] == outputs[1]


def test_baseline_rejects_embedding(workspace, capsys, tmp_path):
    code, _, err = run(capsys, "train", "--data", workspace / "data", "--model", "logreg",
                       "--encoding", "embedding", "--out", tmp_path / "m.json")
    assert code == 2


def test_gradcheck_command(capsys):
    doc = machine(capsys, "gradcheck", "--width", 6)
    assert "failed" not in doc
