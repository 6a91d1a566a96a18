"""Tests for the command line interface"""

import json
import os

import pandas as pd
import pytest

from vicount.cli import build_parser, run_cli

SMALL_SCENE = ["--duration", "20", "--initial-count", "3", "--appearance-dim", "8"]


def _documents(text):
    """JSON documents printed one after another on stdout"""
    decoder = json.JSONDecoder()
    documents, pos = [], 0
    text = text.strip()
    while pos < len(text):
        document, pos = decoder.raw_decode(text, pos)
        documents.append(document)
        while pos < len(text) and text[pos].isspace():
            pos += 1
    return documents


def _simulate(tmp_path, videos=1):
    out = str(tmp_path / "sim")
    assert run_cli(["simulate", "--out", out, "--videos", str(videos), "--seed", "3", *SMALL_SCENE]) == 0
    return out


class TestSimulate:
    """Tests for the simulate command"""

    def test_writes_annotations_features_and_manifest(self, tmp_path):
        out = _simulate(tmp_path, videos=2)
        assert sorted(os.listdir(out)) == [
            "manifest.json", "video_000.csv", "video_000.feat", "video_001.csv", "video_001.feat"]
        with open(os.path.join(out, "manifest.json")) as f:
            manifest = json.load(f)
        assert manifest["command"] == "simulate"
        assert manifest["config"]["seed"] == 3
        assert "video_001.feat" in manifest["outputs"]

    def test_same_seed_same_files(self, tmp_path):
        a = _simulate(tmp_path / "a")
        b = _simulate(tmp_path / "b")
        for name in ("video_000.csv", "video_000.feat", "manifest.json"):
            with open(os.path.join(a, name), "rb") as fa, open(os.path.join(b, name), "rb") as fb:
                assert fa.read() == fb.read()

    def test_out_is_required(self):
        assert run_cli(["simulate"]) == 2


class TestCount:
    """Tests for the count command"""

    def test_annotations_to_stdout(self, tmp_path, capsys):
        sim = _simulate(tmp_path)
        capsys.readouterr()
        code = run_cli(["count", "--annotations", os.path.join(sim, "video_000.csv"),
                        "--features", os.path.join(sim, "video_000.feat"), "--tau", "5"])
        assert code == 0
        document, manifest = _documents(capsys.readouterr().out)
        assert manifest["command"] == "count"
        assert manifest["outputs"] == ["result.json"]
        assert document["video_id"] == "video_000"
        assert document["n0"] == 3
        assert [p["t0"] for p in document["pairs"]] == [0, 5, 10, 15]
        assert document["total"] == pytest.approx(document["n0"] + sum(p["inflow"] for p in document["pairs"]))

    def test_directory_outputs(self, tmp_path):
        out = str(tmp_path / "count")
        code = run_cli(["count", "--videos", "2", *SMALL_SCENE, "--tau", "5", "--compare", "--out", out])
        assert code == 0
        assert sorted(os.listdir(out)) == [
            "association.csv", "flows.json", "manifest.json", "report.json", "result.json"]
        with open(os.path.join(out, "result.json")) as f:
            assert len(json.load(f)) == 2
        association = pd.read_csv(os.path.join(out, "association.csv"))
        assert association["method"].tolist() == ["transport", "hungarian"]

    def test_oracle_flow_source(self, tmp_path, capsys):
        code = run_cli(["count", *SMALL_SCENE, "--entry-rate", "0.5", "--tau", "4", "--flow-source", "oracle"])
        assert code == 0
        document = _documents(capsys.readouterr().out)[0]
        assert all(float(p["inflow"]).is_integer() for p in document["pairs"])

    def test_tau_in_seconds(self, capsys):
        assert run_cli(["count", *SMALL_SCENE, "--tau", "0.5", "--tau-unit", "seconds", "--fps", "10"]) == 0
        document = _documents(capsys.readouterr().out)[0]
        assert [p["t0"] for p in document["pairs"]] == [0, 5, 10, 15]

    def test_trained_encoder_needs_file(self, capsys):
        assert run_cli(["count", *SMALL_SCENE, "--mode", "trained-encoder"]) == 1
        assert "--encoder" in capsys.readouterr().err

    def test_missing_annotation_file(self, tmp_path, capsys):
        assert run_cli(["count", "--annotations", str(tmp_path / "absent.csv")]) == 1
        assert "not found" in capsys.readouterr().err

    def test_invalid_choice_is_a_usage_error(self):
        assert run_cli(["count", "--flow-source", "magic"]) == 2

    def test_config_file_and_flag_precedence(self, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text("sigma=0.1\nsinkhorn_iters=50\n")
        out = str(tmp_path / "count")
        code = run_cli(["--config", str(config), "count", *SMALL_SCENE, "--tau", "5",
                        "--iters", "80", "--out", out])
        assert code == 0
        with open(os.path.join(out, "manifest.json")) as f:
            manifest = json.load(f)
        assert manifest["config"]["sigma"] == 0.1
        assert manifest["config"]["sinkhorn_iters"] == 80

    def test_bad_config_value(self, tmp_path, capsys):
        config = tmp_path / "run.cfg"
        config.write_text("sigma=-1\n")
        assert run_cli(["--config", str(config), "count", *SMALL_SCENE]) == 1
        assert "sigma" in capsys.readouterr().err


class TestEval:
    """Tests for the eval command"""

    def test_table(self, tmp_path, capsys):
        table = tmp_path / "counts.csv"
        table.write_text("video_id,pred,gt,length\na,110,100,1\nb,80,100,3\n")
        assert run_cli(["eval", "--table", str(table)]) == 0
        report = _documents(capsys.readouterr().out)[0]
        assert report["mae"] == pytest.approx(15.0)
        assert report["wrae"] == pytest.approx(17.5)
        assert report["mrae"] == report["wrae"]
        assert [row["video_id"] for row in report["per_video"]] == ["a", "b"]

    def test_pred_and_gt_files(self, tmp_path, capsys):
        pred = tmp_path / "pred.csv"
        gt = tmp_path / "gt.csv"
        pred.write_text("count\n10\n12\n")
        gt.write_text("count\n10\n10\n")
        assert run_cli(["eval", "--pred", str(pred), "--gt", str(gt)]) == 0
        assert _documents(capsys.readouterr().out)[0]["mae"] == pytest.approx(1.0)

    def test_stdout_run_ends_with_manifest(self, tmp_path, capsys):
        table = tmp_path / "counts.csv"
        table.write_text("pred,gt\n3,3\n")
        assert run_cli(["eval", "--table", str(table)]) == 0
        report, manifest = _documents(capsys.readouterr().out)
        assert report["mae"] == 0.0
        assert manifest["command"] == "eval"
        assert manifest["outputs"] == ["report.json"]

    def test_pred_file_without_count_column(self, tmp_path, capsys):
        pred = tmp_path / "pred.csv"
        gt = tmp_path / "gt.csv"
        pred.write_text("pred,gt\n10,10\n")
        gt.write_text("count\n10\n")
        assert run_cli(["eval", "--pred", str(pred), "--gt", str(gt)]) == 1
        err = capsys.readouterr().err
        assert "expected the header 'count'" in err
        assert "pred.csv" in err

    def test_table_without_pred_and_gt(self, tmp_path, capsys):
        table = tmp_path / "counts.csv"
        table.write_text("count\n10\n")
        assert run_cli(["eval", "--table", str(table)]) == 1
        assert "expected the header 'pred,gt'" in capsys.readouterr().err

    def test_needs_inputs(self, capsys):
        assert run_cli(["eval"]) == 1
        assert "--table" in capsys.readouterr().err


class TestTrainAndSweep:
    """Tests for the train, sweep-interval and grad-check commands"""

    def test_train_then_count_with_encoder(self, tmp_path, capsys):
        out = str(tmp_path / "train")
        code = run_cli(["train", "--duration", "60", "--initial-count", "4", "--appearance-dim", "8",
                        "--pairs-per-video", "2", "--iters", "20", "--sigma", "0.1", "--epochs", "1",
                        "--proposal-source", "gt", "--descriptor-dim", "8", "--out", out])
        assert code == 0
        assert sorted(os.listdir(out)) == ["encoder.json", "loss_trace.csv", "manifest.json"]
        trace = pd.read_csv(os.path.join(out, "loss_trace.csv"))
        assert list(trace.columns) == ["step", "loss", "l_p", "l_h", "c"]
        assert len(trace) == 2

        capsys.readouterr()
        code = run_cli(["count", "--duration", "60", "--initial-count", "4", "--appearance-dim", "8",
                        "--tau", "20", "--mode", "trained-encoder",
                        "--encoder", os.path.join(out, "encoder.json")])
        assert code == 0
        assert _documents(capsys.readouterr().out)[0]["n0"] == 4

    def test_sweep_to_stdout_with_manifest_file(self, tmp_path, capsys):
        manifest_path = tmp_path / "runs" / "sweep-manifest.json"
        code = run_cli(["--manifest", str(manifest_path), "sweep-interval", *SMALL_SCENE, "--taus", "5,10",
                        "--flow-source", "oracle"])
        assert code == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "tau,mae,mse,wrae"
        assert [line.split(",")[0] for line in lines[1:]] == ["5", "10"]
        manifest = json.loads(manifest_path.read_text())
        assert manifest["command"] == "sweep-interval"
        assert manifest["outputs"] == ["sweep.csv"]

    def test_sweep_bad_taus(self, capsys):
        assert run_cli(["sweep-interval", *SMALL_SCENE, "--taus", "5,x"]) == 1
        assert "--taus" in capsys.readouterr().err

    def test_grad_check(self, capsys):
        assert run_cli(["grad-check", "--instances", "2", "--seed", "1"]) == 0
        report, manifest = _documents(capsys.readouterr().out)
        assert report["passed"] is True
        assert report["max_relative_error"] < 1e-4
        assert manifest["command"] == "grad-check"
        assert manifest["seeds"] == {"seed": 1}
        assert manifest["config"]["seed"] == 1
        assert "torch" in manifest["versions"]


def test_version_flag(capsys):
    assert run_cli(["--version"]) == 0
    assert capsys.readouterr().out.startswith("vicount ")


def test_parser_lists_every_command():
    parser = build_parser()
    actions = [a for a in parser._subparsers._group_actions if a.dest == "command"]
    assert set(actions[0].choices) == {"simulate", "count", "eval", "train", "sweep-interval", "grad-check"}
