"""End-to-end CLI runs: file outputs, determinism, exit codes."""

import json

import numpy as np
import pytest

from mvstm import dataio, graph2vec, model
from mvstm.cli import main


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    monkeypatch.delenv("MVSTM_SEED", raising=False)


def run(*argv):
    return main(list(argv))


def generate_small(out, seed="7", mode="deterministic", trajectories="30"):
    return run(
        "generate", "--out", str(out), "--nodes", "10",
        "--trajectories", trajectories, "--mode", mode, "--seed", seed,
    )


def tree_bytes(root):
    return {p.name: p.read_bytes() for p in sorted(root.iterdir()) if p.is_file()}


class TestGenerate:
    def test_writes_three_files(self, tmp_path):
        assert generate_small(tmp_path) == 0
        names = {p.name for p in tmp_path.iterdir()}
        assert {"network.csv", "trajectories.jsonl", "manifest.json"} <= names
        assert "factors.json" not in names

    def test_nonlinear_also_writes_factor_record(self, tmp_path):
        assert generate_small(tmp_path, mode="nonlinear") == 0
        assert (tmp_path / "factors.json").exists()

    def test_identical_flags_identical_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        generate_small(a, mode="nonlinear")
        generate_small(b, mode="nonlinear")
        assert tree_bytes(a) == tree_bytes(b)

    def test_missing_seed_is_usage_error(self, tmp_path, capsys):
        code = run("generate", "--out", str(tmp_path), "--nodes", "5",
                   "--trajectories", "5")
        assert code == 1
        assert "--seed" in capsys.readouterr().err

    def test_seed_env_var_fallback(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MVSTM_SEED", "7")
        out_env = tmp_path / "env"
        out_flag = tmp_path / "flag"
        assert run("generate", "--out", str(out_env), "--nodes", "10",
                   "--trajectories", "30") == 0
        generate_small(out_flag, seed="7")
        assert tree_bytes(out_env) == tree_bytes(out_flag)

    def test_print_config_echoes_and_stops(self, tmp_path, capsys):
        code = run("generate", "--out", str(tmp_path / "x"), "--nodes", "5",
                   "--trajectories", "5", "--seed", "1", "--print-config")
        assert code == 0
        resolved = json.loads(capsys.readouterr().out)
        assert resolved["nodes"] == 5
        assert resolved["seed"] == 1
        assert not (tmp_path / "x").exists()

    def test_config_file_overridden_by_flags(self, tmp_path, capsys):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"nodes": 50, "trajectories": 9, "seed": 3}))
        code = run("generate", "--config", str(cfg), "--nodes", "20",
                   "--print-config")
        assert code == 0
        resolved = json.loads(capsys.readouterr().out)
        assert resolved["nodes"] == 20  # flag wins
        assert resolved["trajectories"] == 9  # file beats default
        assert resolved["seed"] == 3


@pytest.fixture()
def world(tmp_path):
    data = tmp_path / "data"
    generate_small(data, trajectories="24")
    return data


def embed_small(data, out, extra=()):
    return run(
        "embed", "--network", str(data / "network.csv"),
        "--trajectories", str(data / "trajectories.jsonl"),
        "--manifest", str(data / "manifest.json"),
        "--out", str(out), "--delta", "4", "--epochs", "3",
        "--walks-per-graph", "2", "--walk-length", "4", "--hops", "1",
        "--seed", "7", *extra,
    )


class TestEmbed:
    def test_trace_has_exactly_epochs_entries(self, tmp_path, world):
        out = tmp_path / "emb"
        assert embed_small(world, out) == 0
        trace = json.loads((out / "embedding_trace.json").read_text())
        assert len(trace) == 3
        assert (out / "embedding_trace.png").exists()

    def test_embedding_shapes_match_corpus(self, tmp_path, world):
        out = tmp_path / "emb"
        embed_small(world, out)
        state = graph2vec.load_embeddings(out / "embeddings.json")
        cards = dataio.load_manifest(world / "manifest.json")
        assert state.graph_vectors.shape == (24, 4)
        assert state.node_vectors.shape == (cards["link_id"], 4)

    def test_rerun_identical(self, tmp_path, world):
        a, b = tmp_path / "a", tmp_path / "b"
        embed_small(world, a)
        embed_small(world, b)
        assert tree_bytes(a) == tree_bytes(b)

    def test_save_corpus_flag(self, tmp_path, world):
        out = tmp_path / "emb"
        embed_small(world, out, extra=("--save-corpus",))
        lines = (out / "corpus.jsonl").read_text().splitlines()
        assert len(lines) == 24 * 2


@pytest.fixture()
def embedded(tmp_path, world):
    out = tmp_path / "emb"
    embed_small(world, out)
    return world, out


def train_small(data, emb, out, lr="0.005"):
    return run(
        "train", "--trajectories", str(data / "trajectories.jsonl"),
        "--manifest", str(data / "manifest.json"),
        "--embeddings", str(emb / "embeddings.json"),
        "--out", str(out), "--d", "4", "--hidden", "5", "--delta", "4",
        "--epochs", "2", "--batch-size", "8", "--lr", lr, "--seed", "7",
    )


class TestTrain:
    def test_produces_checkpoint_and_trace(self, tmp_path, embedded):
        world, emb = embedded
        out = tmp_path / "run"
        assert train_small(world, emb, out) == 0
        assert (out / "checkpoint.json").exists()
        assert len(json.loads((out / "train_trace.json").read_text())) == 2
        assert (out / "train_trace.png").exists()

    def test_zero_lr_keeps_initial_parameters(self, tmp_path, embedded):
        world, emb = embedded
        out = tmp_path / "run"
        train_small(world, emb, out, lr="0")
        params = model.load_checkpoint(out / "checkpoint.json")
        cards = dataio.load_manifest(world / "manifest.json")
        fresh = model.MvstmParams.init(
            cards,
            model.TrainConfig(d=4, hidden=5, delta=4, epochs=2, batch_size=8,
                              learning_rate=0.0, seed=7),
        )
        for key in fresh.arrays:
            np.testing.assert_array_equal(params.arrays[key], fresh.arrays[key])

    def test_missing_embedding_file_names_path(self, tmp_path, world, capsys):
        code = run(
            "train", "--trajectories", str(world / "trajectories.jsonl"),
            "--manifest", str(world / "manifest.json"),
            "--embeddings", str(tmp_path / "absent.json"),
            "--out", str(tmp_path / "run"), "--seed", "7",
        )
        assert code == 2
        assert "absent.json" in capsys.readouterr().err

    def test_rerun_identical(self, tmp_path, embedded):
        world, emb = embedded
        a, b = tmp_path / "a", tmp_path / "b"
        train_small(world, emb, a)
        train_small(world, emb, b)
        assert tree_bytes(a) == tree_bytes(b)


class TestEvaluate:
    def evaluate_small(self, out, methods="simple_eta", mode="deterministic"):
        return run(
            "evaluate", "--out", str(out), "--methods", methods,
            "--mode", mode, "--nodes", "12", "--synthetic-trajectories", "60",
            "--d", "4", "--hidden", "4", "--delta", "4", "--epochs", "1",
            "--batch-size", "8", "--embed-epochs", "1", "--walks-per-graph", "2",
            "--walk-length", "3", "--hops", "1", "--seed", "7",
        )

    def test_deterministic_simple_eta_mape_zero(self, tmp_path):
        assert self.evaluate_small(tmp_path) == 0
        report = json.loads((tmp_path / "report.json").read_text())
        row = report["methods"][0]
        assert row["name"] == "simple_eta"
        assert row["mape"] <= 1e-12

    def test_report_lists_every_requested_method(self, tmp_path):
        assert self.evaluate_small(tmp_path, methods="simple_eta,mvstm",
                                   mode="nonlinear") == 0
        report = json.loads((tmp_path / "report.json").read_text())
        assert [m["name"] for m in report["methods"]] == ["simple_eta", "mvstm"]
        assert (tmp_path / "report_mape.png").exists()
        assert (tmp_path / "report.csv").exists()
        assert (tmp_path / "report.txt").exists()

    def test_unknown_method_is_usage_error(self, tmp_path, capsys):
        code = run("evaluate", "--out", str(tmp_path), "--methods", "magic",
                   "--seed", "7")
        assert code == 1
        assert "magic" in capsys.readouterr().err

    def test_rerun_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        self.evaluate_small(a)
        self.evaluate_small(b)
        assert tree_bytes(a) == tree_bytes(b)


class TestPredict:
    def test_predictions_csv(self, tmp_path, embedded):
        world, emb = embedded
        run_dir = tmp_path / "run"
        train_small(world, emb, run_dir)
        out_csv = tmp_path / "pred.csv"
        code = run(
            "predict", "--checkpoint", str(run_dir / "checkpoint.json"),
            "--embeddings", str(emb / "embeddings.json"),
            "--trajectories", str(world / "trajectories.jsonl"),
            "--manifest", str(world / "manifest.json"),
            "--out", str(out_csv), "--seed", "7",
        )
        assert code == 0
        lines = out_csv.read_text().splitlines()
        assert lines[0] == "trajectory_index,eta"
        assert len(lines) == 1 + 24
        for line in lines[1:]:
            idx, eta = line.split(",")
            assert float(eta) > 0

    def test_corrupt_checkpoint_fails_loudly(self, tmp_path, embedded, capsys):
        world, emb = embedded
        bad = tmp_path / "bad.json"
        bad.write_text("{oops")
        code = run(
            "predict", "--checkpoint", str(bad),
            "--embeddings", str(emb / "embeddings.json"),
            "--trajectories", str(world / "trajectories.jsonl"),
            "--manifest", str(world / "manifest.json"),
            "--out", str(tmp_path / "pred.csv"), "--seed", "7",
        )
        assert code == 2
        assert "checkpoint" in capsys.readouterr().err.lower()


class TestTopLevel:
    def test_no_subcommand_is_usage_error(self, capsys):
        assert main([]) == 1
        assert "subcommand" in capsys.readouterr().err
