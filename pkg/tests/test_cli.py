import csv
import json
import shutil

import pytest

from scenephys.cli import EXIT_INVALID, EXIT_OK, main
from scenephys.evaluator import CSV_COLUMNS, PhysicsReport

SMALL_CORPUS = ["--set", "corpus.count=4", "--set", "corpus.seed=2"]
DIRTY_CORPUS = SMALL_CORPUS + ["--set", "corpus.violation_mix={collision = 0.3, floating = 0.3}"]
TINY_GRPO = ["--set", "grpo.pretrain_steps=300", "--set", "grpo.dataset_size=256", "--set", "grpo.steps=6",
             "--set", "grpo.K=4", "--set", "grpo.checkpoint_every=3", "--set", "grpo.validation_groups=2",
             "--set", "grpo.validation_reference_samples=32", "--set", "grpo.sample_steps=8"]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def clean_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("clean")
    assert main(["gen-corpus", "-o", str(out)] + SMALL_CORPUS) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def dirty_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("dirty")
    assert main(["gen-corpus", "-o", str(out)] + DIRTY_CORPUS) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def dirty_eval(dirty_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("dirty_eval")
    assert main(["evaluate", str(dirty_corpus), "-o", str(out)]) == EXIT_OK
    return out


def test_gen_corpus_writes_scenes_labels_and_manifest(clean_corpus):
    assert len(list(clean_corpus.glob("scene_*.labels.json"))) == 4
    manifest = json.loads((clean_corpus / "manifest.json").read_text())
    assert manifest["count"] == 4 and manifest["injected"] == {}


def test_clean_corpus_scores_100(clean_corpus, tmp_path):
    assert main(["evaluate", str(clean_corpus), "-o", str(tmp_path)]) == EXIT_OK
    rows = read_csv(tmp_path / "aggregate.csv")
    assert [r["scene"] for r in rows] == ["scene_0000", "scene_0001", "scene_0002", "scene_0003", "mean"]
    assert all(float(r["overall"]) == 100.0 for r in rows)


def test_aggregate_mean_matches_per_scene_reports(dirty_eval):
    rows = read_csv(dirty_eval / "aggregate.csv")
    reports = [PhysicsReport.from_dict(json.loads(p.read_text())) for p in sorted(dirty_eval.glob("*.report.json"))]
    assert len(reports) == 4
    mean = rows[-1]
    for k, col in enumerate(CSV_COLUMNS):
        expected = sum(r.csv_row()[k] for r in reports) / len(reports)
        assert float(mean[col]) == pytest.approx(expected, abs=1e-9)
    assert float(mean["overall"]) < 100.0


def test_evaluation_does_not_depend_on_input_order(dirty_corpus, dirty_eval, tmp_path):
    files = sorted(str(p) for p in dirty_corpus.glob("scene_????.json"))
    assert main(["evaluate", *reversed(files), "-o", str(tmp_path)]) == EXIT_OK
    a, b = tree(dirty_eval), tree(tmp_path)
    a.pop("run_config.json"), b.pop("run_config.json")
    assert a == b


def test_report_command_reproduces_the_aggregate(dirty_eval, tmp_path):
    out = tmp_path / "again.csv"
    assert main(["report", str(dirty_eval), "-o", str(out)]) == EXIT_OK
    assert out.read_bytes() == (dirty_eval / "aggregate.csv").read_bytes()


def test_corrupted_scene_is_reported_and_the_rest_processed(clean_corpus, tmp_path, capsys):
    src = tmp_path / "in"
    shutil.copytree(clean_corpus, src)
    bad = src / "scene_0001.json"
    bad.write_text("{ not json")
    out = tmp_path / "out"
    assert main(["evaluate", str(src), "-o", str(out)]) == EXIT_INVALID
    assert str(bad) in capsys.readouterr().err
    assert sorted(p.name for p in out.glob("*.report.json")) == [
        "scene_0000.report.json", "scene_0002.report.json", "scene_0003.report.json"]


def test_invalid_config_exits_2(clean_corpus, tmp_path, capsys):
    assert main(["evaluate", str(clean_corpus), "-o", str(tmp_path), "--set", "evaluator.bogus=1"]) == EXIT_INVALID
    assert "bogus" in capsys.readouterr().err


def test_optimize_outputs(dirty_corpus, tmp_path):
    one = dirty_corpus / "scene_0000.json"
    opts = ["--set", "tto.steps=20"]
    assert main(["optimize", str(one), "-o", str(tmp_path / "a"), *opts]) == EXIT_OK
    out = tmp_path / "a"
    for name in ("scene_0000.refined.json", "scene_0000.before.json", "scene_0000.after.json",
                 "scene_0000.trace.csv", "delta.csv", "before.csv", "after.csv", "run_config.json"):
        assert (out / name).is_file(), name
    trace = (out / "scene_0000.trace.csv").read_text().splitlines()
    assert trace[0] == "step,energy" and len(trace) >= 2
    delta = read_csv(out / "delta.csv")
    assert [r["metric"] for r in delta] == list(CSV_COLUMNS)
    for r in delta:
        assert float(r["delta"]) == pytest.approx(float(r["after"]) - float(r["before"]), abs=1e-9)
    assert main(["optimize", str(one), "-o", str(tmp_path / "b"), *opts]) == EXIT_OK
    assert tree(out) == tree(tmp_path / "b")


def test_plot_is_deterministic(dirty_corpus, dirty_eval, tmp_path):
    args = ["plot", str(dirty_corpus / "scene_0000.json"), "--report", str(dirty_eval / "scene_0000.report.json"),
            "--reach"]
    assert main([*args, "-o", str(tmp_path / "a.svg")]) == EXIT_OK
    assert main([*args, "-o", str(tmp_path / "b.svg")]) == EXIT_OK
    data = (tmp_path / "a.svg").read_bytes()
    assert data.startswith(b"<svg") and data == (tmp_path / "b.svg").read_bytes()


def test_plot_missing_scene_exits_2(tmp_path):
    assert main(["plot", str(tmp_path / "nope.json"), "-o", str(tmp_path / "x.svg")]) == EXIT_INVALID


def test_grpo_train_is_byte_identical_across_runs(tmp_path):
    assert main(["grpo-train", "-o", str(tmp_path / "a"), *TINY_GRPO]) == EXIT_OK
    assert main(["grpo-train", "-o", str(tmp_path / "b"), *TINY_GRPO]) == EXIT_OK
    a = tree(tmp_path / "a")
    assert {"generator.json", "ema.json", "history.csv", "proxy.json", "pretrained.json",
            "checkpoints/step_000003.json", "checkpoints/step_000006.json"} <= set(a)
    assert a == tree(tmp_path / "b")
    proxy = json.loads(a["proxy.json"])
    assert proxy["steps_run"] == 6 and not proxy["halted"]
