"""End-to-end tests that drive the command line the way a user would."""

import json
from pathlib import Path

import pytest

from gtnm import cli, runtime
from gtnm.cli import CliError, _merge, render_name
from gtnm.tokens import SPECIAL_TOKENS, UNK_TOKEN, Vocab

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def run(argv, capsys):
    code = cli.main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, demo_project):
    """Extract, vocab, and a short training run shared by the read-only tests."""
    ws = tmp_path_factory.mktemp("cli_ws")
    records = ws / "records.jsonl"
    code_vocab = ws / "code_vocab.json"
    doc_vocab = ws / "doc_vocab.json"
    ckpt = ws / "model.ckpt"
    log = ws / "train.jsonl"

    assert cli.main(["extract", "--project", str(demo_project),
                     "--out", str(records)]) == 0
    assert cli.main(["build-vocab", "--records", str(records),
                     "--code-out", str(code_vocab),
                     "--doc-out", str(doc_vocab)]) == 0
    assert cli.main(["train", "--records", str(records),
                     "--code-vocab", str(code_vocab),
                     "--doc-vocab", str(doc_vocab),
                     "--out", str(ckpt), "--log", str(log),
                     "--desk", "--epochs", "2", "--batch-size", "8",
                     "--warmup", "10", "--seed", "0"]) == 0
    return {"dir": ws, "records": records, "code_vocab": code_vocab,
            "doc_vocab": doc_vocab, "ckpt": ckpt, "log": log}


class TestExtract:
    def test_counts_and_output(self, demo_project, tmp_path, capsys):
        out = tmp_path / "records.jsonl"
        code, stdout, _ = run(["extract", "--project", str(demo_project),
                               "--out", str(out)], capsys)
        assert code == 0
        assert f"6 files, 16 records, 2 documented -> {out}" in stdout
        assert len(out.read_text().splitlines()) == 16

    def test_rerun_is_byte_identical(self, demo_project, tmp_path, capsys):
        a = tmp_path / "a.jsonl"
        b = tmp_path / "b.jsonl"
        run(["extract", "--project", str(demo_project), "--out", str(a)], capsys)
        run(["extract", "--project", str(demo_project), "--out", str(b)], capsys)
        assert a.read_bytes() == b.read_bytes()

    def test_require_doc(self, demo_project, tmp_path, capsys):
        out = tmp_path / "docd.jsonl"
        code, stdout, _ = run(["extract", "--project", str(demo_project),
                               "--out", str(out), "--require-doc"], capsys)
        assert code == 0
        assert stdout.startswith("6 files, 2 records, 2 documented")

    def test_repeated_project_flag(self, demo_project, tmp_path, capsys):
        out = tmp_path / "twice.jsonl"
        code, stdout, _ = run(["extract", "--project", str(demo_project),
                               "--project", str(demo_project),
                               "--out", str(out)], capsys)
        assert code == 0
        assert stdout.startswith("12 files, 32 records")

    def test_missing_project_dir(self, tmp_path, capsys):
        code, _, stderr = run(["extract", "--project", str(tmp_path / "nope"),
                               "--out", str(tmp_path / "r.jsonl")], capsys)
        assert code == 2
        assert stderr.startswith("error: project directory not found")


class TestStats:
    def test_report_and_figure(self, workspace, tmp_path, capsys):
        out = tmp_path / "overlap.json"
        code, stdout, _ = run(["stats", "--records", str(workspace["records"]),
                               "--out", str(out)], capsys)
        assert code == 0
        report = json.loads(out.read_text())
        for level in ("identifiers", "return_params", "infile", "crossfile", "doc"):
            assert "pct_any" in report[level]
        assert "identifiers" in stdout
        fig = tmp_path / "overlap.png"
        assert fig.read_bytes()[:8] == PNG_MAGIC

    def test_no_figures(self, workspace, tmp_path, capsys):
        out = tmp_path / "overlap.json"
        code, _, _ = run(["stats", "--records", str(workspace["records"]),
                          "--out", str(out), "--no-figures"], capsys)
        assert code == 0
        assert not (tmp_path / "overlap.png").exists()

    def test_missing_records(self, tmp_path, capsys):
        code, _, stderr = run(["stats", "--records", str(tmp_path / "no.jsonl"),
                               "--out", str(tmp_path / "o.json")], capsys)
        assert code == 2
        assert "not found" in stderr

    def test_empty_records(self, tmp_path, capsys):
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        code, _, stderr = run(["stats", "--records", str(empty),
                               "--out", str(tmp_path / "o.json")], capsys)
        assert code == 2
        assert "holds no records" in stderr


class TestBuildVocab:
    def test_specials_and_cap(self, workspace, tmp_path, capsys):
        code_out = tmp_path / "cv.json"
        doc_out = tmp_path / "dv.json"
        code, stdout, _ = run(["build-vocab", "--records", str(workspace["records"]),
                               "--code-out", str(code_out),
                               "--doc-out", str(doc_out),
                               "--code-size", "30"], capsys)
        assert code == 0
        assert "code vocabulary:" in stdout and "doc vocabulary:" in stdout
        vocab = Vocab.load(code_out)
        assert len(vocab) <= 30
        assert [vocab.id_to_token[i] for i in range(4)] == list(SPECIAL_TOKENS)


class TestTrain:
    def test_checkpoint_contents(self, workspace):
        params, cfg, extras, opt = runtime.load_checkpoint(workspace["ckpt"])
        assert (cfg.layers, cfg.d_model, cfg.heads, cfg.d_ff) == (2, 64, 4, 256)
        assert extras["code_vocab_hash"]
        assert extras["doc_vocab_hash"]
        assert "epoch" in extras
        assert opt is not None

    def test_log_and_figure(self, workspace):
        rows = [json.loads(line) for line in workspace["log"].read_text().splitlines()]
        assert [r["epoch"] for r in rows] == [0, 1]
        assert all(r["train_loss"] > 0 for r in rows)
        fig = workspace["log"].with_suffix(".png")
        assert fig.read_bytes()[:8] == PNG_MAGIC

    def test_test_out_split(self, workspace, tmp_path, capsys):
        held = tmp_path / "test.jsonl"
        code, stdout, _ = run(["train", "--records", str(workspace["records"]),
                               "--code-vocab", str(workspace["code_vocab"]),
                               "--doc-vocab", str(workspace["doc_vocab"]),
                               "--out", str(tmp_path / "m.ckpt"),
                               "--desk", "--epochs", "1", "--no-figures",
                               "--test-out", str(held)], capsys)
        assert code == 0
        assert "held-out records ->" in stdout
        assert held.exists()

    def test_flag_overrides_config_file(self, workspace, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"train": {"epochs": 1},
                                   "model": {"layers": 1, "d_model": 16,
                                             "heads": 2, "d_ff": 32,
                                             "dropout": 0.0}}))
        log = tmp_path / "t.jsonl"
        code, _, _ = run(["train", "--records", str(workspace["records"]),
                          "--code-vocab", str(workspace["code_vocab"]),
                          "--doc-vocab", str(workspace["doc_vocab"]),
                          "--out", str(tmp_path / "m.ckpt"), "--log", str(log),
                          "--config", str(cfg), "--epochs", "2",
                          "--no-figures"], capsys)
        assert code == 0
        rows = [json.loads(line) for line in log.read_text().splitlines()]
        assert len(rows) == 2
        _, model_cfg, _, _ = runtime.load_checkpoint(tmp_path / "m.ckpt")
        assert (model_cfg.layers, model_cfg.d_model) == (1, 16)

    def test_unknown_config_key(self, workspace, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"train": {"nonsense": 5}}))
        code, _, stderr = run(["train", "--records", str(workspace["records"]),
                               "--code-vocab", str(workspace["code_vocab"]),
                               "--doc-vocab", str(workspace["doc_vocab"]),
                               "--out", str(tmp_path / "m.ckpt"),
                               "--config", str(cfg)], capsys)
        assert code == 2
        assert "unknown config key 'nonsense'" in stderr

    def test_explicit_valid_records(self, workspace, tmp_path, capsys):
        code, stdout, _ = run(["train", "--records", str(workspace["records"]),
                               "--valid-records", str(workspace["records"]),
                               "--code-vocab", str(workspace["code_vocab"]),
                               "--doc-vocab", str(workspace["doc_vocab"]),
                               "--out", str(tmp_path / "m.ckpt"),
                               "--desk", "--epochs", "1",
                               "--no-figures"], capsys)
        assert code == 0
        assert "training on 16 examples (valid 16" in stdout

    def test_bad_model_settings(self, workspace, tmp_path, capsys):
        # 5 heads cannot split d_model 64
        code, _, stderr = run(["train", "--records", str(workspace["records"]),
                               "--code-vocab", str(workspace["code_vocab"]),
                               "--doc-vocab", str(workspace["doc_vocab"]),
                               "--out", str(tmp_path / "m.ckpt"),
                               "--desk", "--heads", "5"], capsys)
        assert code == 2
        assert "bad model settings" in stderr


class TestEval:
    def test_metrics_and_rows(self, workspace, tmp_path, capsys):
        out = tmp_path / "metrics.json"
        per = tmp_path / "per.jsonl"
        code, stdout, _ = run(["eval", "--records", str(workspace["records"]),
                               "--model", str(workspace["ckpt"]),
                               "--code-vocab", str(workspace["code_vocab"]),
                               "--doc-vocab", str(workspace["doc_vocab"]),
                               "--out", str(out), "--per-example", str(per)], capsys)
        assert code == 0
        assert "n=16" in stdout
        report = json.loads(out.read_text())
        assert report["n"] == 16
        for key in ("precision", "recall", "f1", "f1_aggregate", "em"):
            assert 0.0 <= report[key] <= 1.0
        rows = [json.loads(line) for line in per.read_text().splitlines()]
        assert len(rows) == 16
        for row in rows:
            assert set(row) == {"id", "target", "pred", "precision", "recall",
                                "f1", "em", "pcs"}
            assert 0.0 <= row["pcs"] <= 1.0
        fig = tmp_path / "metrics.png"
        assert fig.read_bytes()[:8] == PNG_MAGIC

    def test_beam_flag(self, workspace, tmp_path, capsys):
        code, _, _ = run(["eval", "--records", str(workspace["records"]),
                          "--model", str(workspace["ckpt"]),
                          "--code-vocab", str(workspace["code_vocab"]),
                          "--doc-vocab", str(workspace["doc_vocab"]),
                          "--out", str(tmp_path / "m.json"), "--beam", "2",
                          "--no-figures"], capsys)
        assert code == 0

    def test_vocab_mismatch(self, workspace, tmp_path, capsys):
        other = tmp_path / "other_vocab.json"
        cli.main(["build-vocab", "--records", str(workspace["records"]),
                  "--code-out", str(other),
                  "--doc-out", str(tmp_path / "dv.json"),
                  "--code-size", "10"])
        capsys.readouterr()
        code, _, stderr = run(["eval", "--records", str(workspace["records"]),
                               "--model", str(workspace["ckpt"]),
                               "--code-vocab", str(other),
                               "--doc-vocab", str(workspace["doc_vocab"]),
                               "--out", str(tmp_path / "m.json")], capsys)
        assert code == 2
        assert "does not match the one the model was trained with" in stderr

    def test_missing_checkpoint(self, workspace, tmp_path, capsys):
        code, _, stderr = run(["eval", "--records", str(workspace["records"]),
                               "--model", str(tmp_path / "no.ckpt"),
                               "--code-vocab", str(workspace["code_vocab"]),
                               "--doc-vocab", str(workspace["doc_vocab"]),
                               "--out", str(tmp_path / "m.json")], capsys)
        assert code == 2
        assert "checkpoint not found" in stderr


class TestSuggest:
    def suggest_args(self, workspace, demo_project, **extra):
        argv = ["suggest", "--project", str(demo_project),
                "--model", str(workspace["ckpt"]),
                "--code-vocab", str(workspace["code_vocab"]),
                "--doc-vocab", str(workspace["doc_vocab"])]
        for flag, value in extra.items():
            argv.extend([f"--{flag.replace('_', '-')}", str(value)])
        return argv

    def test_ranked_output(self, workspace, demo_project, capsys):
        argv = self.suggest_args(workspace, demo_project,
                                 file="AccountActivity.java",
                                 method="getLayoutRes", top=3)
        code, stdout, _ = run(argv, capsys)
        assert code == 0
        lines = stdout.splitlines()
        assert lines[0].endswith("AccountActivity.java:10 getLayoutRes")
        assert lines[1].startswith("confidence ")
        ranked = [l for l in lines if l[:2] in ("1.", "2.", "3.")]
        assert len(ranked) == 3
        assert all("score" in l for l in ranked)
        # untrained desk model will not have recovered the name
        assert "(current name)" in stdout or "is not in the top" in stdout

    def test_unknown_method(self, workspace, demo_project, capsys):
        argv = self.suggest_args(workspace, demo_project,
                                 file="AccountActivity.java", method="noSuchThing")
        code, _, stderr = run(argv, capsys)
        assert code == 2
        assert "not found" in stderr

    def test_unknown_file(self, workspace, demo_project, capsys):
        argv = self.suggest_args(workspace, demo_project,
                                 file="Missing.java", method="getLayoutRes")
        code, _, stderr = run(argv, capsys)
        assert code == 2
        assert "no parsed file matches" in stderr

    def test_overload_needs_line(self, workspace, tmp_path, capsys):
        src = tmp_path / "proj" / "Over.java"
        src.parent.mkdir()
        src.write_text(
            "public class Over {\n"
            "  void doWork(int a) { helperCall(); }\n"
            "  void doWork(int a, int b) { helperCall(); }\n"
            "  void helperCall() {}\n"
            "}\n")
        argv = ["suggest", "--project", str(src.parent),
                "--model", str(workspace["ckpt"]),
                "--code-vocab", str(workspace["code_vocab"]),
                "--doc-vocab", str(workspace["doc_vocab"]),
                "--file", "Over.java", "--method", "doWork"]
        code, _, stderr = run(argv, capsys)
        assert code == 2
        assert "--line" in stderr

        code, stdout, _ = run(argv + ["--line", "2"], capsys)
        assert code == 0
        assert stdout.splitlines()[0].endswith("Over.java:2 doWork")

    def test_method_by_line_number(self, workspace, demo_project, capsys):
        argv = self.suggest_args(workspace, demo_project,
                                 file="AccountActivity.java", method="10")
        code, stdout, _ = run(argv, capsys)
        assert code == 0
        assert stdout.splitlines()[0].endswith("AccountActivity.java:10 getLayoutRes")


class TestHelpers:
    def test_merge_precedence(self):
        merged = _merge({"a": 1, "b": 2, "c": 3}, {"a": 10}, {"a": 100, "b": None})
        assert merged == {"a": 100, "b": 2, "c": 3}

    def test_merge_rejects_unknown(self):
        with pytest.raises(CliError, match="unknown config key"):
            _merge({"a": 1}, {"z": 2}, {})

    def test_render_name(self):
        assert render_name(["get", "layout", "res"]) == "getLayoutRes"
        assert render_name(["run"]) == "run"
        assert render_name([]) == ""
        # unknown marker is kept verbatim, not capitalized
        assert render_name(["set", UNK_TOKEN, "value"]) == f"set{UNK_TOKEN}Value"

    def test_bad_config_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("[1, 2]")
        with pytest.raises(CliError, match="must hold a JSON object"):
            cli._load_config(str(path))
        with pytest.raises(CliError, match="not found"):
            cli._load_config(str(tmp_path / "none.json"))


class TestParser:
    def test_unknown_command(self):
        with pytest.raises(SystemExit):
            cli.build_parser().parse_args(["frobnicate"])

    def test_main_returns_int(self, demo_project, tmp_path, capsys):
        code = cli.main(["extract", "--project", str(demo_project),
                         "--out", str(tmp_path / "r.jsonl")])
        capsys.readouterr()
        assert code == 0
