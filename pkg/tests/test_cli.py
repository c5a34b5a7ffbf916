import csv
import io
import json

import numpy as np
import pytest
from click.testing import CliRunner

from cder.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    runner = CliRunner()
    res = runner.invoke(main, ["generate", "--experiment", "blobs", "--seed", "7", "--out", str(d / "blobs.csv")])
    assert res.exit_code == 0, res.output
    res = runner.invoke(main, ["train", str(d / "blobs.csv"), "-o", str(d / "model.json")])
    assert res.exit_code == 0, res.output
    return d


def run(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


class TestGenerate:
    def test_csv_layout(self, workdir):
        with open(workdir / "blobs.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["cloud_id", "label", "x0", "x1"]
        assert len(rows) == 1 + 50 * 108

    def test_deepfield_ground_truth(self, tmp_path):
        res = run("generate", "--experiment", "deepfield", "--seed", 2, "--out", tmp_path / "d.json",
                  "--ground-truth", tmp_path / "gt.json")
        assert res.exit_code == 0, res.output
        gt = json.loads((tmp_path / "gt.json").read_text())
        assert len(gt["components"]) == 50

    def test_ground_truth_only_for_deepfield(self, tmp_path):
        res = run("generate", "--experiment", "blobs", "--out", tmp_path / "x.csv", "--ground-truth", tmp_path / "g")
        assert res.exit_code == 2

    def test_global_seed(self, tmp_path):
        run("--seed", 5, "generate", "--experiment", "blocks", "--out", tmp_path / "a.csv")
        run("generate", "--experiment", "blocks", "--seed", 5, "--out", tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


class TestTrain:
    def test_summary(self, workdir, tmp_path):
        res = run("--json", "train", workdir / "blobs.csv", "-o", tmp_path / "m.json")
        assert res.exit_code == 0
        summary = json.loads(res.output)
        assert summary["coordinates"] > 0
        assert "stop_level" in summary and summary["coefficient_max"] >= summary["coefficient_min"]
        text = run("train", workdir / "blobs.csv", "-o", tmp_path / "m2.json").output
        assert "stop level" in text and "coefficient range" in text

    def test_deterministic(self, workdir, tmp_path):
        run("train", workdir / "blobs.csv", "-o", tmp_path / "again.json")
        assert (tmp_path / "again.json").read_bytes() == (workdir / "model.json").read_bytes()

    def test_wrong_dimension_row(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("cloud_id,label,x0,x1\na,0,1,2\nb,1,3,4,5\n")
        res = run("train", bad, "-o", tmp_path / "m.json")
        assert res.exit_code == 2
        assert ":3:" in res.output

    def test_unlabeled_training_rejected(self, tmp_path):
        f = tmp_path / "u.csv"
        f.write_text("cloud_id,label,x0\na,,1\n")
        assert run("train", f, "-o", tmp_path / "m.json").exit_code == 2

    def test_single_label(self, tmp_path):
        f = tmp_path / "one.csv"
        rng = np.random.default_rng(0)
        lines = ["cloud_id,label,x0,x1"] + [f"c{k},only,{x},{y}" for k in range(3) for x, y in rng.normal(size=(15, 2))]
        f.write_text("\n".join(lines) + "\n")
        assert run("train", f, "-o", tmp_path / "m.json").exit_code == 0
        res = run("--json", "predict", tmp_path / "m.json", f)
        assert {p["label"] for p in json.loads(res.output)["predictions"]} == {"only"}

    def test_theta_option(self, workdir, tmp_path):
        run("--theta", "0.6", "train", workdir / "blobs.csv", "-o", tmp_path / "t.json")
        assert json.loads((tmp_path / "t.json").read_text())["theta"] == 0.6
        assert run("--theta", "1.0", "train", workdir / "blobs.csv", "-o", tmp_path / "x.json").exit_code == 2


class TestPredict:
    def test_csv_and_json_agree(self, workdir):
        text = run("predict", workdir / "model.json", workdir / "blobs.csv").output
        rows = list(csv.reader(io.StringIO(text)))
        data = json.loads(run("--json", "predict", workdir / "model.json", workdir / "blobs.csv").output)
        assert rows[0] == ["cloud_id", "predicted", "norm_0", "norm_1"]
        for row, pred in zip(rows[1:], data["predictions"]):
            assert row[0] == pred["id"] and row[1] == pred["label"]
            assert [float(v) for v in row[2:]] == pred["norms"]

    def test_training_accuracy(self, tmp_path):
        data_path, model_path = tmp_path / "b0.csv", tmp_path / "m0.json"
        run("generate", "--experiment", "blobs", "--out", data_path)
        run("train", data_path, "-o", model_path)
        data = json.loads(run("--json", "predict", model_path, data_path).output)
        with open(data_path) as fh:
            truth = {r["cloud_id"]: r["label"] for r in csv.DictReader(fh)}
        acc = np.mean([truth[p["id"]] == p["label"] for p in data["predictions"]])
        assert acc >= 0.95

    def test_dimension_mismatch(self, workdir, tmp_path):
        f = tmp_path / "d3.csv"
        f.write_text("cloud_id,label,x0,x1,x2\na,,1,2,3\n")
        res = run("predict", workdir / "model.json", f)
        assert res.exit_code == 2 and "dimension" in res.output

    def test_empty_file(self, workdir, tmp_path):
        f = tmp_path / "empty.csv"
        f.write_text("")
        assert run("predict", workdir / "model.json", f).exit_code == 2

    def test_not_a_model(self, workdir, tmp_path):
        f = tmp_path / "junk.json"
        f.write_text("{}")
        assert run("predict", f, workdir / "blobs.csv").exit_code == 2


class TestCrossval:
    def test_table_and_json(self, tmp_path):
        run("generate", "--experiment", "threelabels", "--seed", 0, "--out", tmp_path / "t.csv")
        res = run("crossval", tmp_path / "t.csv", "--folds", 2)
        assert res.exit_code == 0, res.output
        assert "confusion" in res.output and "mean" in res.output
        data = json.loads(run("--json", "crossval", tmp_path / "t.csv", "--folds", 2).output)
        assert len(data["per_fold_accuracy"]) == 2
        assert np.array(data["confusion"]).shape == (3, 3)

    def test_disjoint(self, workdir):
        data = json.loads(run("--json", "crossval", workdir / "blobs.csv", "--disjoint-folds").output)
        assert np.array(data["confusion"]).sum() == 50

    def test_cannot_stratify(self, tmp_path):
        f = tmp_path / "s.csv"
        f.write_text("cloud_id,label,x0\na,p,1\nb,q,2\nc,q,3\n")
        res = run("crossval", f)
        assert res.exit_code == 2 and "cannot stratify" in res.output


class TestInspectAndExport:
    def test_inspect(self, workdir, tmp_path):
        res = run("--json", "inspect", workdir / "blobs.csv", "--dump", tmp_path / "dump.json")
        assert res.exit_code == 0
        data = json.loads(res.output)
        levels = data["levels"]
        assert levels[0]["adults"] == 1 and levels[0]["candidates"] == 1
        assert [lv["level"] for lv in levels] == list(range(len(levels)))
        dump = json.loads((tmp_path / "dump.json").read_text())
        assert len(dump) == len(levels)
        assert "level" in run("inspect", workdir / "blobs.csv").output

    def test_export_regions(self, workdir):
        res = run("export-regions", workdir / "model.json")
        assert res.exit_code == 0
        records = json.loads(res.output)
        model = json.loads((workdir / "model.json").read_text())
        assert len(records) == len(model["coordinates"])
        assert [r["level"] for r in records] == sorted(r["level"] for r in records)
        for r in records:
            assert 0.0 <= r["certainty"] <= 1.0
            U = np.array(r["axes"]).T
            cov = np.array(model["coordinates"][r["index"]]["covariance"]).reshape(2, 2)
            assert np.allclose(U @ U.T, cov, rtol=0, atol=1e-9)

    def test_export_to_file(self, workdir, tmp_path):
        res = run("export-regions", workdir / "model.json", "-o", tmp_path / "r.json")
        assert res.exit_code == 0 and (tmp_path / "r.json").exists()


def test_help_lists_commands():
    out = run("--help").output
    for cmd in ("generate", "train", "predict", "crossval", "inspect", "export-regions"):
        assert cmd in out
