import json

import numpy as np
import pytest

from notematch.cli import main
from notematch.corpus import generate_synthetic, write_synthetic_vocab
from notematch.embed import HashEmbedder
from notematch.errors import DataFormatError
from notematch.pooling import PoolingSpec
from notematch.runner import PipelineConfig, compute_note_vectors, run_experiment
from notematch.textproc import Vocabulary


def small_config(tmp_path, **overrides):
    cfg = {
        "corpus": {"synthetic": {"n_patients": 30, "notes_min": 2, "notes_max": 4,
                                  "vocab_size": 200, "topic_tokens": 10,
                                  "p_signal": 0.5, "seed": 5}},
        "seeds": [1, 2, 3],
        "embedder": {"kind": "hash", "dim": 16, "seed": 0, "granularity": "token"},
        "pooling_strategies": ["avg", "mean_max"],
        "feature_mode": "concat_absdiff_prod",
        "classifiers": {"lr": {"epochs": 50}, "tree": {"max_depth": 4}},
        "output_dir": str(tmp_path / "out"),
    }
    cfg.update(overrides)
    return cfg


class TestConfig:
    def test_missing_corpus_rejected(self):
        with pytest.raises(DataFormatError, match="corpus"):
            PipelineConfig({}).validated()

    def test_unknown_classifier_rejected(self, tmp_path):
        with pytest.raises(DataFormatError, match="classifier"):
            PipelineConfig(small_config(tmp_path, classifiers={"mlp": {}})).validated()

    def test_unknown_feature_mode_rejected(self, tmp_path):
        with pytest.raises(DataFormatError, match="feature_mode"):
            PipelineConfig(small_config(tmp_path, feature_mode="cosine")).validated()

    def test_digest_stable(self, tmp_path):
        a = PipelineConfig(small_config(tmp_path)).validated()
        b = PipelineConfig(small_config(tmp_path)).validated()
        assert a.digest() == b.digest()


class TestRunExperiment:
    def test_row_counts(self, tmp_path):
        config = PipelineConfig(small_config(tmp_path)).validated()
        report = run_experiment(config, tmp_path / "out")
        # 3 seeds x 2 strategies x 2 classifiers per-run rows, 2x2 aggregated
        assert len(report.per_run) == 12
        assert len(report.aggregated) == 4
        assert not report.errors
        # t-test matrix: per classifier, one strategy pair
        assert len(report.ttests) == 2
        assert set(report.best_by_strategy) == {"avg", "mean_max"}

    def test_crash_isolation(self, tmp_path):
        cfg = small_config(tmp_path, classifiers={"lr": {"epochs": 5}, "boost": {"rounds": "ten"}})
        report = run_experiment(PipelineConfig(cfg).validated(), tmp_path / "out")
        lr_rows = [r for r in report.per_run if r["classifier"] == "lr"]
        assert len(lr_rows) == 6  # boost failing leaves lr rows intact
        assert report.errors and all(e["classifier"] == "boost" for e in report.errors)

    def test_cache_warm_equals_cold(self, tmp_path):
        cfg = small_config(tmp_path, pooling_strategies=["mean_max"], classifiers={"lr": {"epochs": 5}})
        out = tmp_path / "out"
        run_experiment(PipelineConfig(json.loads(json.dumps(cfg))).validated(), out)
        cold = json.loads((out / "report.json").read_text())
        cache_bytes = (out / "cache_mean_max.nem").read_bytes()
        run_experiment(PipelineConfig(json.loads(json.dumps(cfg))).validated(), out)
        warm = json.loads((out / "report.json").read_text())
        cold.pop("timestamp"), warm.pop("timestamp")
        assert cold == warm
        assert (out / "cache_mean_max.nem").read_bytes() == cache_bytes


class TestNoteVectors:
    def test_document_granularity_keys(self, tmp_path):
        corpus = generate_synthetic(4, (2, 3), 60, 5, seed=1)
        vocab_path = tmp_path / "vocab.txt"
        write_synthetic_vocab(60, vocab_path)
        vocab = Vocabulary.from_file(vocab_path)
        emb = HashEmbedder(dim=8, seed=0, granularity="document")
        cache_path = tmp_path / "c.nem"
        vecs = compute_note_vectors(
            corpus, vocab, emb, PoolingSpec.uniform("avg"), 512, 256, cache_path=cache_path
        )
        assert set(vecs) == {n.note_id for n in corpus.iter_notes()}
        assert all(v.shape == (8,) for v in vecs.values())

    def test_cache_hit_skips_backend(self, tmp_path):
        corpus = generate_synthetic(3, (2, 3), 60, 5, seed=2)
        vocab_path = tmp_path / "vocab.txt"
        write_synthetic_vocab(60, vocab_path)
        vocab = Vocabulary.from_file(vocab_path)
        cache_path = tmp_path / "c.nem"
        spec = PoolingSpec.uniform("mean_max")
        first = compute_note_vectors(
            corpus, vocab, HashEmbedder(dim=8), spec, 512, 256, cache_path=cache_path
        )

        class Exploding:
            granularity = "token"

            def embed_tokens(self, ids):
                raise AssertionError("backend must not be called on a warm cache")

        second = compute_note_vectors(
            corpus, vocab, Exploding(), spec, 512, 256, cache_path=cache_path
        )
        for key in first:
            np.testing.assert_array_equal(first[key], second[key])


class TestCli:
    def test_generate_deterministic(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        args = ["generate", "--patients", "10", "--seed", "7"]
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_run_missing_config_exit_1(self, capsys):
        assert main(["run", "--config", "missing.json"]) == 1
        assert "usage error" in capsys.readouterr().err

    def test_bad_corpus_exit_2(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("{not json}\n", encoding="utf-8")
        assert main(["pairs", "--corpus", str(bad), "--seed", "1",
                     "--out", str(tmp_path / "p.jsonl")]) == 2

    def test_unknown_subcommand_exit_1(self):
        assert main(["frobnicate"]) == 1

    def test_full_cli_flow(self, tmp_path, capsys):
        corpus_path = tmp_path / "c.jsonl"
        vocab_path = tmp_path / "vocab.txt"
        assert main(["generate", "--patients", "12", "--seed", "3", "--vocab-size", "100",
                     "--out", str(corpus_path), "--vocab-out", str(vocab_path)]) == 0
        assert main(["cohort", "--in", str(corpus_path),
                     "--out", str(tmp_path / "clean.jsonl"),
                     "--report", str(tmp_path / "cohort.json")]) == 0
        assert main(["pairs", "--corpus", str(tmp_path / "clean.jsonl"), "--seed", "1",
                     "--out", str(tmp_path / "pairs.jsonl")]) == 0
        assert main(["tokenize", "--vocab", str(vocab_path), "--in", str(corpus_path),
                     "--stats"]) == 0
        assert main(["embed", "--vocab", str(vocab_path), "--in", str(corpus_path),
                     "--dim", "8", "--out", str(tmp_path / "cache.nem")]) == 0
        cfg = {
            "corpus": {"path": str(tmp_path / "clean.jsonl")},
            "vocab": str(vocab_path),
            "seeds": [1],
            "embedder": {"kind": "hash", "dim": 8, "seed": 0, "granularity": "token"},
            "pooling_strategies": ["mean_max"],
            "classifiers": {"lr": {"epochs": 10}},
            "output_dir": str(tmp_path / "out"),
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg), encoding="utf-8")
        assert main(["run", "--config", str(cfg_path)]) == 0
        assert main(["report", "--in", str(tmp_path / "out" / "report.json"),
                     "--format", "table"]) == 0
        out = capsys.readouterr().out
        assert "Aggreg." in out and "mean_max" in out
