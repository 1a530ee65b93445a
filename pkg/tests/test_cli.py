import json
import re

import pytest

from codesearch.cli import EXIT_RUNTIME, EXIT_USAGE, dispatch, parse_grid
from tests.conftest import REPO_ROOT

DEMO_JSONL = str(REPO_ROOT / "demo" / "demo_corpus.jsonl")


def run_cli(capsys, *argv):
    code = dispatch(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestExitCodes:
    def test_unknown_subcommand_is_usage_error(self, capsys):
        code, _, err = run_cli(capsys, "frobnicate")
        assert code == EXIT_USAGE

    def test_unknown_flag_is_usage_error(self, capsys):
        code, _, err = run_cli(capsys, "ingest", "--does-not-exist", "x")
        assert code == EXIT_USAGE
        assert "usage" in err.lower()

    def test_no_subcommand_prints_help(self, capsys):
        code, _, err = run_cli(capsys)
        assert code == EXIT_USAGE

    def test_runtime_error_is_exit_2(self, capsys, tmp_path):
        code, _, err = run_cli(
            capsys, "ingest", "--train", str(tmp_path / "missing.jsonl"),
            "--out", str(tmp_path / "out"),
        )
        assert code == EXIT_RUNTIME

    def test_help_exits_zero(self, capsys):
        code, out, _ = run_cli(capsys, "--help")
        assert code == 0


class TestIngest:
    def test_ingest_writes_corpus_vocab_and_manifest(self, capsys, tmp_path):
        out_dir = tmp_path / "corpus"
        code, out, _ = run_cli(
            capsys, "ingest", "--train", DEMO_JSONL, "--test", DEMO_JSONL,
            "--language", "python", "--vocab-size", "1024", "--out", str(out_dir),
        )
        assert code == 0
        summary = json.loads(out)
        assert summary["pairs"] == 100
        assert summary["splits"]["train"] == 50
        assert summary["candidate_pool"] == 50
        assert (out_dir / "pairs.jsonl").is_file()
        assert (out_dir / "vocab.json").is_file()
        manifest = json.loads((out_dir / "run_manifest.json").read_text())
        assert manifest["command"] == "ingest"
        assert manifest["build_fingerprint"].startswith("codesearch-")
        assert manifest["started_at"]


@pytest.fixture(scope="module")
def flow(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("flow")
    corpus_dir = tmp / "corpus"
    run_dir = tmp / "run"
    assert dispatch([
        "ingest", "--train", DEMO_JSONL, "--valid", DEMO_JSONL, "--test", DEMO_JSONL,
        "--vocab-size", "1024", "--out", str(corpus_dir),
    ]) == 0
    assert dispatch([
        "train", "--corpus", str(corpus_dir), "--steps", "2", "--batch-size", "8",
        "--queue-size", "32", "--out", str(run_dir),
    ]) == 0
    return {"corpus": corpus_dir, "run": run_dir, "tmp": tmp}


class TestTrainEvalFlow:

    def test_train_wrote_checkpoint_metrics_manifest(self, flow, capsys):
        assert (flow["run"] / "checkpoint.pt").is_file()
        assert (flow["run"] / "metrics.csv").is_file()
        assert (flow["run"] / "metrics.jsonl").is_file()
        manifest = json.loads((flow["run"] / "run_manifest.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["config"]["training"]["steps"] == 2

    def test_eval_emits_report_json_on_stdout(self, flow, capsys):
        code, out, _ = run_cli(
            capsys, "eval", "--checkpoint", str(flow["run"] / "checkpoint.pt"),
            "--corpus", str(flow["corpus"]), "--split", "test",
        )
        assert code == 0
        report = json.loads(out)
        for key in ("mrr", "r_at_1", "r_at_5", "r_at_10", "l_align",
                    "l_uniform_code", "l_uniform_query", "pool_size", "query_count"):
            assert key in report
        assert report["query_count"] == 50

    def test_zero_shot_matches_eval(self, flow, capsys):
        code_a, out_a, _ = run_cli(
            capsys, "eval", "--checkpoint", str(flow["run"] / "checkpoint.pt"),
            "--corpus", str(flow["corpus"]),
        )
        code_b, out_b, _ = run_cli(
            capsys, "zero-shot", "--checkpoint", str(flow["run"] / "checkpoint.pt"),
            "--corpus", str(flow["corpus"]),
        )
        assert code_a == code_b == 0
        assert json.loads(out_a) == json.loads(out_b)

    def test_finetune_reports_history(self, flow, capsys):
        code, out, _ = run_cli(
            capsys, "finetune", "--checkpoint", str(flow["run"] / "checkpoint.pt"),
            "--corpus", str(flow["corpus"]), "--epochs", "1",
            "--out", str(flow["tmp"] / "ft"),
        )
        assert code == 0
        summary = json.loads(out)
        assert len(summary["history"]) == 1
        assert summary["best_epoch"] == 0

    def test_export_embeddings_stdout(self, flow, capsys):
        code, out, _ = run_cli(
            capsys, "export-embeddings", "--checkpoint", str(flow["run"] / "checkpoint.pt"),
            "--corpus", str(flow["corpus"]), "--split", "test",
        )
        assert code == 0
        lines = out.strip().splitlines()
        assert len(lines) == 1 + 3 * 50
        assert lines[0].startswith("id,modality,distance,v0")


class TestSearchCli:
    def test_json_output_matches_direct_search(self, demo_env, capsys):
        code, out, _ = run_cli(
            capsys, "search", "--index", str(demo_env["index"]),
            "--checkpoint", str(demo_env["checkpoint"]),
            "--q", "read csv rows", "--k", "3", "--json",
        )
        assert code == 0
        payload = json.loads(out)
        assert payload["k"] == 3
        assert len(payload["hits"]) == 3

        from codesearch.checkpoint import load_checkpoint
        from codesearch.index import load_index, search

        loaded = load_checkpoint(demo_env["checkpoint"])
        index = load_index(demo_env["index"])
        direct = search(index, loaded.bundle, "read csv rows", 3)
        assert [h["id"] for h in payload["hits"]] == [h.id for h in direct]

    def test_table_output_has_k_rows(self, demo_env, capsys):
        code, out, _ = run_cli(
            capsys, "search", "--index", str(demo_env["index"]),
            "--checkpoint", str(demo_env["checkpoint"]),
            "--q", "read csv rows", "--k", "3",
        )
        assert code == 0
        lines = out.strip().splitlines()
        assert len(lines) == 4  # header + 3 hits
        assert re.match(r"\s*1\s", lines[1])

    def test_interactive_repl(self, demo_env, capsys, monkeypatch):
        queries = iter(["parse json", "quit"])
        monkeypatch.setattr("builtins.input", lambda prompt="": next(queries))
        code, out, _ = run_cli(
            capsys, "search", "--index", str(demo_env["index"]),
            "--checkpoint", str(demo_env["checkpoint"]), "--interactive", "--k", "2",
        )
        assert code == 0
        assert "rank" in out

    def test_missing_query_is_usage_error(self, demo_env, capsys):
        code, _, _ = run_cli(
            capsys, "search", "--index", str(demo_env["index"]),
            "--checkpoint", str(demo_env["checkpoint"]),
        )
        assert code == EXIT_USAGE

    def test_stale_index_is_runtime_error(self, demo_env, capsys, tmp_path):
        import subprocess
        import sys

        other = tmp_path / "other"
        subprocess.run(
            [sys.executable, str(REPO_ROOT / "scripts" / "build_demo.py"),
             "--out", str(other), "--seed", "5"],
            capture_output=True, cwd=REPO_ROOT, check=True,
        )
        code, _, _ = run_cli(
            capsys, "search", "--index", str(demo_env["index"]),
            "--checkpoint", str(other / "run" / "checkpoint.pt"), "--q", "x",
        )
        assert code == EXIT_RUNTIME


class TestSweepCli:
    def test_grid_parsing(self):
        assert parse_grid(["m=0.91,0.999"]) == {"m": [0.91, 0.999]}
        assert parse_grid(["lr=0.001", "r=0.1,0.2"]) == {"lr": [0.001], "r": [0.1, 0.2]}
        with pytest.raises(Exception):
            parse_grid(["bogus"])

    def test_sweep_emits_csv_rows(self, capsys, tmp_path):
        corpus_dir = tmp_path / "corpus"
        assert dispatch([
            "ingest", "--train", DEMO_JSONL, "--test", DEMO_JSONL,
            "--vocab-size", "1024", "--out", str(corpus_dir),
        ]) == 0
        capsys.readouterr()
        code, out, _ = run_cli(
            capsys, "sweep", "--corpus", str(corpus_dir), "--grid", "m=0.91,0.999",
            "--steps", "1", "--batch-size", "8", "--queue-size", "16",
            "--split", "test", "--out", str(tmp_path / "sweep"),
        )
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == "hyperparameter,value,mrr"
        assert len(lines) == 3
        assert (tmp_path / "sweep" / "sweep.csv").is_file()


class TestConfigPrecedence:
    def test_config_file_supplies_defaults_flags_override(self, capsys, tmp_path):
        corpus_dir = tmp_path / "corpus"
        assert dispatch([
            "ingest", "--train", DEMO_JSONL, "--test", DEMO_JSONL,
            "--vocab-size", "1024", "--out", str(corpus_dir),
        ]) == 0
        capsys.readouterr()
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"steps": 1, "batch_size": 8, "queue_size": 16, "lr": 0.5}))
        run_dir = tmp_path / "run"
        code, out, _ = run_cli(
            capsys, "train", "--corpus", str(corpus_dir), "--config", str(config),
            "--lr", "0.001", "--out", str(run_dir),
        )
        assert code == 0
        manifest = json.loads((run_dir / "run_manifest.json").read_text())
        assert manifest["config"]["training"]["steps"] == 1  # from config file
        assert manifest["config"]["training"]["lr"] == 0.001  # flag wins
