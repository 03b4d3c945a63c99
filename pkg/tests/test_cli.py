import json

import pytest
import yaml

from atsearch import datasets
from atsearch.cli import ConfigError, EXIT_BACKEND, EXIT_CONFIG, EXIT_DATA, EXIT_IO, EXIT_OK, main, parse_config
from atsearch.datasets import DatasetSplit, Entry
from atsearch.puzzles import ArithmeticInstance, PuzzleKind


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["gen-datasets", "--out", str(out)]) == EXIT_OK
    return out


def test_gen_datasets_files_and_rerun(data_dir, tmp_path, capsys):
    assert main(["gen-datasets", "--out", str(tmp_path)]) == EXIT_OK
    for kind in PuzzleKind:
        name = datasets.SPLIT_FILENAMES[kind]
        assert (tmp_path / name).read_bytes() == (data_dir / name).read_bytes()
    sizes = {k: sum(1 for _ in open(data_dir / datasets.SPLIT_FILENAMES[k])) for k in PuzzleKind}
    assert sizes == {
        PuzzleKind.DROP_WATER: 660,
        PuzzleKind.NUMBER_PATH: 264,
        PuzzleKind.ARITHMETIC: 755,
        PuzzleKind.MINIMAL_GRASS: 400,
    }
    rec = json.loads((data_dir / "reconciliation.json").read_text())
    assert {r["kind"] for r in rec if not r["matched"]} == {"number_path", "arithmetic"}
    assert "warning" in capsys.readouterr().err


def test_gen_datasets_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["gen-datasets", "--out", str(blocker / "sub")]) == EXIT_IO


def test_solve(data_dir, tmp_path):
    out = tmp_path / "sol.jsonl"
    assert main(["solve", "--dataset", str(data_dir / "drop_water.jsonl"), "--out", str(out)]) == EXIT_OK
    assert all(json.loads(l)["solvable"] for l in out.read_text().splitlines())
    assert main(["solve", "--dataset", str(data_dir / "minimal_grass.jsonl"), "--out", str(out)]) == EXIT_OK
    assert all("dims" in json.loads(l) for l in out.read_text().splitlines())
    bad = tmp_path / "bad.jsonl"
    ds = DatasetSplit(PuzzleKind.ARITHMETIC, [], [Entry(0, ArithmeticInstance((1, 1, 1), 24))], 0, "hand")
    datasets.write_split(ds, bad)
    assert main(["solve", "--dataset", str(bad), "--out", str(out)]) == EXIT_DATA


def _config(tmp_path, data_dir, **over):
    cfg = {
        "dataset_dir": str(data_dir),
        "methods": ["CoT", "ATS_BFS", "ToT"],
        "settings": [{"shot": "zero_shot", "cost": "low"}, {"shot": "few_shot", "cost": "high"}],
        "backend": "mock",
        "mock": {"error_rate": 0.3, "master_seed": 1},
        "concurrency_limit": 4,
        "output_dir": str(tmp_path / "run"),
        "kinds": ["arithmetic", "drop_water"],
        "limit": 4,
    }
    cfg.update(over)
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def test_run_then_rescore_and_report(data_dir, tmp_path):
    cfg = _config(tmp_path, data_dir)
    assert main(["run", "--config", str(cfg)]) == EXIT_OK
    run = tmp_path / "run"
    report = (run / "report.csv").read_text()
    records = (run / "records.jsonl").read_bytes()
    assert len(report.splitlines()) == 1 + 2 * 3 * 2
    assert main(["run", "--config", str(cfg), "--rescore"]) == EXIT_OK
    assert (run / "report.csv").read_text() == report and (run / "records.jsonl").read_bytes() == records
    assert main(["report", "--records", str(run / "records.jsonl"), "--out-dir", str(tmp_path / "rep")]) == EXIT_OK
    assert (tmp_path / "rep" / "report.csv").read_text() == report
    assert main(["rescore", "--records", str(run / "records.jsonl"), "--out", str(tmp_path / "r.jsonl")]) == EXIT_OK
    assert (tmp_path / "r.jsonl").read_bytes() == records
    assert (run / "points.csv").read_text().startswith("task,method,setting,mean_fee")


def test_perfect_mock_run_is_all_correct(data_dir, tmp_path):
    cfg = _config(tmp_path, data_dir, mock={"error_rate": 0.0}, limit=3)
    assert main(["run", "--config", str(cfg), "--out-dir", str(tmp_path / "p")]) == EXIT_OK
    rows = (tmp_path / "p" / "report.csv").read_text().splitlines()[1:]
    assert rows and all(r.split(",")[4] == "100.0" for r in rows)


def test_export_finetune(data_dir, tmp_path, capsys):
    cfg = _config(tmp_path, data_dir)
    assert main(["run", "--config", str(cfg)]) == EXIT_OK
    recs = tmp_path / "run" / "records.jsonl"
    out = tmp_path / "ft.jsonl"
    assert main(["export-finetune", "--records", str(recs), "--tuned-type", "ToT_tuned", "--out", str(out)]) == EXIT_OK
    assert "rejected" in capsys.readouterr().out
    # the high setting has width 5 and is refused; the low setting has width 1 and is kept
    kept = [json.loads(l) for l in out.read_text().splitlines()]
    assert kept and all(r["tuned_type"] == "ToT_tuned" for r in kept)
    assert main(["export-finetune", "--records", str(recs), "--tuned-type", "CoT_tuned", "--out", str(out)]) == EXIT_OK
    assert all("scenario" not in json.loads(l)["target"] for l in out.read_text().splitlines())
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["export-finetune", "--records", str(empty), "--tuned-type", "ATS_tuned", "--out", str(out)]) == EXIT_OK
    assert out.read_text() == ""


def test_config_errors_are_listed_together(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"dataset_dir": "d", "methods": ["CoT", "Nope"], "settings": [{"cost": "low", "k": 3}], "bogus": 1}))
    assert main(["run", "--config", str(cfg)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "bogus" in err and "Nope" in err and "k" in err
    with pytest.raises(ConfigError) as info:
        parse_config({"mock": {"error_rate": "lots"}, "prices": {"input_per_1k": "x"}})
    assert len(info.value.problems) >= 3


def test_live_without_key(data_dir, tmp_path, monkeypatch):
    monkeypatch.delenv("ATSEARCH_TEST_MISSING_KEY", raising=False)
    cfg = _config(
        tmp_path,
        data_dir,
        backend="live",
        live={"base_url": "http://localhost:9", "model": "m", "api_key_env": "ATSEARCH_TEST_MISSING_KEY"},
    )
    assert main(["run", "--config", str(cfg)]) == EXIT_BACKEND


def test_missing_files(tmp_path):
    assert main(["run", "--config", str(tmp_path / "none.yaml")]) == EXIT_IO
    assert main(["report", "--records", str(tmp_path / "none"), "--out-dir", str(tmp_path)]) == EXIT_IO
