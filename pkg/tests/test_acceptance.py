"""Acceptance gate: one test per shipping criterion, oracle-checked.

Each test prints a single pass line (written past pytest's capture) so the
run log shows criterion-level status. Tolerances are part of the contract;
do not loosen them.
"""

import json
import math
import shutil
import socket
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import quad

from notematch.classify import Dataset, lr_loss_grad
from notematch.cohort import iqr_filter
from notematch.corpus import Corpus, Note, Patient, generate_synthetic
from notematch.embed import hash_vector
from notematch.evaluate import paired_ttest, rank_auc
from notematch.pairing import SplitSpec, build_pairs, split_patients
from notematch.pooling import pool
from notematch.runner import PipelineConfig, run_experiment
from notematch.textproc import sliding_chunks
from notematch.trees import logistic_grad_hess


def passline(code: str, detail: str) -> None:
    sys.__stdout__.write(f"\n[{code}] PASS: {detail}\n")
    sys.__stdout__.flush()


BENCH_CORPUS = {
    "n_patients": 500,
    "notes_min": 2,
    "notes_max": 10,
    "vocab_size": 2000,
    "topic_tokens": 30,
    "p_signal": 0.35,
    "seed": 99,
}


def bench_config(out_dir, **overrides):
    cfg = {
        "corpus": {"synthetic": dict(BENCH_CORPUS)},
        "seeds": [1, 2, 3],
        "embedder": {"kind": "hash", "dim": 64, "seed": 0, "granularity": "token"},
        "pooling_strategies": ["mean_max"],
        "feature_mode": "concat_absdiff_prod",
        "classifiers": {"boost": {"rounds": 60}},
        "output_dir": str(out_dir),
    }
    for key, value in overrides.items():
        cfg[key] = value
    return PipelineConfig(json.loads(json.dumps(cfg))).validated()


def test_p1_pair_balance_and_count():
    corpora = [generate_synthetic(n, (2, 5), 100, 8, seed=s) for n, s in ((20, 0), (35, 1))]
    for seed in range(50):
        corpus = corpora[seed % 2]
        draws = 1 + seed % 3
        spec = SplitSpec(seed=seed, draws_per_patient=draws)
        train_ids, test_ids = split_patients(corpus, spec)
        instances = build_pairs(corpus, train_ids, test_ids, spec)
        for split_name, pids in (("train", train_ids), ("test", test_ids)):
            rows = [i for i in instances if i.split == split_name]
            assert len(rows) == 2 * len(pids) * draws
            assert sum(i.label for i in rows) * 2 == len(rows)
        assert len(instances) == 2 * len(corpus.patients) * draws
    passline("P1", "50 seeds, every split has exactly 2*n*draws instances, 50% positive")


def test_p2_no_leakage():
    corpus = generate_synthetic(30, (2, 6), 100, 8, seed=7)
    owner = {n.note_id: pid for pid in corpus.patient_ids() for n in corpus.patients[pid].notes}
    for seed in range(100):
        spec = SplitSpec(seed=seed)
        train_ids, test_ids = split_patients(corpus, spec)
        assert not (train_ids & test_ids)
        assert train_ids | test_ids == set(corpus.patients)
        split_of = {pid: "train" for pid in train_ids}
        split_of.update({pid: "test" for pid in test_ids})
        for inst in build_pairs(corpus, train_ids, test_ids, spec):
            for nid in inst.source_note_ids + (inst.target_note_id,):
                assert split_of[owner[nid]] == inst.split
    passline("P2", "100 seeds, splits disjoint and every instance's note ids stay in-split")


def test_p3_chunker_law():
    window, stride = 512, 256
    assert sliding_chunks([], window, stride) == []
    for n in range(1, 2001):
        chunks = sliding_chunks(list(range(n)), window, stride)
        expected = max(1, math.ceil((n - window) / stride) + 1)
        assert len(chunks) == expected
        covered = set()
        for c in chunks:
            assert c.end - c.start <= window
            assert c.token_ids == tuple(range(c.start, c.end))
            covered.update(range(c.start, c.end))
        assert covered == set(range(n))
    passline("P3", "lengths 0..2000: coverage, size <= 512, count = max(1, ceil((n-512)/256)+1)")


def test_p4_pooling_oracle():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        rows = int(rng.integers(1, 30))
        dim = int(rng.integers(1, 20))
        m = rng.normal(size=(rows, dim))
        avg = pool(m, "avg")
        mx = pool(m, "max")
        mm = pool(m, "mean_max")
        naive_avg = np.array([sum(m[i, j] for i in range(rows)) / rows for j in range(dim)])
        naive_max = np.array([max(m[i, j] for i in range(rows)) for j in range(dim)])
        np.testing.assert_allclose(avg, naive_avg, atol=1e-9, rtol=0)
        np.testing.assert_array_equal(mx, naive_max)
        assert mm.shape == (2 * dim,)
        np.testing.assert_allclose(mm[:dim], naive_avg, atol=1e-9, rtol=0)
        np.testing.assert_array_equal(mm[dim:], naive_max)
    passline("P4", "1000 matrices: avg within 1e-9 of naive, max exact, mean_max doubles dim")


def test_p5_auc_equals_mann_whitney():
    rng = np.random.default_rng(43)
    for _ in range(500):
        n = int(rng.integers(4, 201))
        scores = rng.integers(0, 12, size=n) / 11.0  # coarse grid forces ties
        labels = rng.integers(0, 2, size=n)
        if labels.min() == labels.max():
            labels[: n // 2] = 1 - labels[0]
        pos = scores[labels == 1]
        neg = scores[labels == 0]
        wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
        oracle = wins / (len(pos) * len(neg))
        assert abs(rank_auc(scores, labels) - oracle) < 1e-9
    passline("P5", "500 tied score sets match the O(n^2) pair-counting oracle within 1e-9")


def test_p6_gradient_checks():
    rng = np.random.default_rng(44)
    for _ in range(50):
        n = int(rng.integers(8, 25))
        d = int(rng.integers(2, 6))
        X = rng.normal(size=(n, d))
        y = rng.integers(0, 2, size=n).astype(float)
        if y.min() == y.max():
            y[0] = 1 - y[0]
        w = rng.normal(size=d) * 0.7
        b = float(rng.normal())
        lam = 10.0 ** rng.uniform(-5, -2)
        _, grad_w, grad_b = lr_loss_grad(w, b, X, y, lam)
        eps = 1e-6
        for j in range(d):
            wp, wm = w.copy(), w.copy()
            wp[j] += eps
            wm[j] -= eps
            num = (lr_loss_grad(wp, b, X, y, lam)[0] - lr_loss_grad(wm, b, X, y, lam)[0]) / (2 * eps)
            assert grad_w[j] == pytest.approx(num, rel=1e-5, abs=1e-8)
        num_b = (lr_loss_grad(w, b + eps, X, y, lam)[0] - lr_loss_grad(w, b - eps, X, y, lam)[0]) / (2 * eps)
        assert grad_b == pytest.approx(num_b, rel=1e-5, abs=1e-8)

        scores = rng.normal(size=n)
        g, h = logistic_grad_hess(scores, y)

        def loss(s):
            p = 1.0 / (1.0 + np.exp(-s))
            return -(y * np.log(p) + (1 - y) * np.log(1 - p))

        num_g = (loss(scores + eps) - loss(scores - eps)) / (2 * eps)
        np.testing.assert_allclose(g, num_g, rtol=1e-5, atol=1e-8)
        eps2 = 1e-4
        num_h = (loss(scores + eps2) - 2 * loss(scores) + loss(scores - eps2)) / eps2**2
        np.testing.assert_allclose(h, num_h, rtol=1e-5, atol=1e-6)
    passline("P6", "50 problems: LR gradient and boosting grad/hess match finite differences (1e-5 rel)")


def test_p7_ttest_oracle():
    r = paired_ttest([0.8, 0.85, 0.9], [0.8, 0.85, 0.9])
    assert r.t == 0.0 and r.p == 1.0

    def t_density(x, df):
        c = math.exp(math.lgamma((df + 1) / 2) - math.lgamma(df / 2)) / math.sqrt(df * math.pi)
        return c * (1 + x * x / df) ** (-(df + 1) / 2)

    rng = np.random.default_rng(45)
    for _ in range(100):
        n = int(rng.integers(3, 15))
        a = rng.normal(size=n)
        b = a + rng.normal(size=n) * rng.uniform(0.01, 2.0)
        r = paired_ttest(a, b)
        if r.degenerate_variance:
            continue
        tail, _ = quad(t_density, abs(r.t), np.inf, args=(r.df,))
        assert r.p == pytest.approx(2 * tail, abs=1e-6)
    passline("P7", "identical vectors give (t=0, p=1.0); 100 pairs match quadrature within 1e-6")


def test_hash_embedding_distinctness():
    vocab_size, dim = 30000, 64
    M = np.stack([hash_vector(i, seed=0, dim=dim) for i in range(vocab_size)]).astype(np.float32)
    worst = 0.0
    for start in range(0, vocab_size, 3000):
        block = M[start : start + 3000]
        sims = block @ M.T
        for i in range(block.shape[0]):
            sims[i, start + i] = 0.0
        worst = max(worst, float(np.abs(sims).max()))
    assert worst < 0.9
    passline("EMB", f"30000-token hash vocabulary, max off-diagonal |cosine| = {worst:.3f} < 0.9")


def test_p8_end_to_end_planted_signal(tmp_path):
    config = bench_config(tmp_path / "p8")
    report = run_experiment(config, tmp_path / "p8")
    assert not report.errors
    aucs = {row["seed"]: row["metrics"]["auc"] for row in report.per_run}
    assert sorted(aucs) == [1, 2, 3]
    for seed, auc in sorted(aucs.items()):
        assert auc >= 0.85, f"seed {seed} test AUC {auc:.4f} below 0.85"
    agg = report.aggregated[0]
    passline(
        "P8",
        "planted-signal benchmark AUC {:.4f} +/- {:.4f} over seeds {} (min {:.4f} >= 0.85)".format(
            agg["mean"]["auc"], agg["std"]["auc"], sorted(aucs), min(aucs.values())
        ),
    )


def test_p9_null_signal(tmp_path):
    corpus = dict(BENCH_CORPUS)
    corpus["p_signal"] = 0.0
    config = bench_config(
        tmp_path / "p9", corpus={"synthetic": corpus}, seeds=[1, 2, 3, 4, 5]
    )
    report = run_experiment(config, tmp_path / "p9")
    assert not report.errors
    mean_auc = report.aggregated[0]["mean"]["auc"]
    assert abs(mean_auc - 0.5) <= 0.05, f"null-signal mean AUC {mean_auc:.4f} outside 0.5 +/- 0.05"
    passline("P9", f"null-signal mean AUC over 5 seeds = {mean_auc:.4f}, within 0.5 +/- 0.05")


def _canonical_report(path: Path) -> str:
    data = json.loads(path.read_text(encoding="utf-8"))
    data.pop("timestamp", None)
    return json.dumps(data, sort_keys=True)


def test_p10_determinism(tmp_path):
    cfg = {
        "corpus": {"synthetic": {"n_patients": 60, "notes_min": 2, "notes_max": 5,
                                  "vocab_size": 300, "topic_tokens": 12,
                                  "p_signal": 0.5, "seed": 21}},
        "seeds": [1, 2],
        "embedder": {"kind": "hash", "dim": 32, "seed": 0, "granularity": "token"},
        "pooling_strategies": ["avg", "mean_max"],
        "feature_mode": "concat_absdiff_prod",
        "classifiers": {"lr": {"epochs": 50}, "boost": {"rounds": 10}},
    }
    dir_a, dir_b = tmp_path / "a", tmp_path / "b"
    run_experiment(PipelineConfig(json.loads(json.dumps(cfg))).validated(), dir_a)
    run_experiment(PipelineConfig(json.loads(json.dumps(cfg))).validated(), dir_b)
    cold = _canonical_report(dir_a / "report.json")
    assert cold == _canonical_report(dir_b / "report.json")
    caches = {p.name: p.read_bytes() for p in dir_a.glob("cache_*.nem")}
    assert caches and caches == {p.name: p.read_bytes() for p in dir_b.glob("cache_*.nem")}
    # third run reuses dir_a's caches: warm must equal cold byte for byte
    run_experiment(PipelineConfig(json.loads(json.dumps(cfg))).validated(), dir_a)
    assert _canonical_report(dir_a / "report.json") == cold
    assert caches == {p.name: p.read_bytes() for p in dir_a.glob("cache_*.nem")}
    passline("P10", "two cold runs and a warm-cache run produce identical reports (timestamp excluded)")


def test_p11_iqr_worked_example():
    counts = [2, 2, 3, 3, 4, 4, 5, 40]
    notes = []
    for p, count in enumerate(counts):
        for k in range(count):
            notes.append(
                Note(f"n{p}_{k}", f"p{p}", "progress", f"2020-01-{k + 1:02d}T00:00:00Z", "text")
            )
    corpus = Corpus()
    for note in notes:
        corpus.patients.setdefault(note.patient_id, Patient(note.patient_id)).notes.append(note)
    filtered, report = iqr_filter(corpus, multiplier=1.5)
    assert report.note_count_threshold == pytest.approx(6.5)
    assert report.patients_removed["iqr"] == 1
    assert "p7" not in filtered.patients and len(filtered.patients) == 7
    passline("P11", "counts [2,2,3,3,4,4,5,40] give threshold 6.5 and remove exactly one patient")


# ---------------------------------------------------------------------------
# Secondary component: embedding sidecar protocol over newline-delimited JSON.

SIDECAR_DIST = Path(__file__).resolve().parents[1] / "sidecar" / "dist" / "cli.js"
VOCAB_30K = None  # populated by the fixture


def _sidecar_available():
    return shutil.which("node") is not None and SIDECAR_DIST.exists()


@pytest.fixture(scope="module")
def sidecar(tmp_path_factory):
    if not _sidecar_available():
        pytest.skip("sidecar build not present; run npm install && npm run build in sidecar/")
    from notematch.corpus import write_synthetic_vocab
    from notematch.embed import SidecarEmbedder
    from notematch.textproc import Vocabulary

    vocab_path = tmp_path_factory.mktemp("sidecar") / "vocab.txt"
    write_synthetic_vocab(200, vocab_path)
    vocab = Vocabulary.from_file(vocab_path)
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    proc = subprocess.Popen(
        ["node", str(SIDECAR_DIST), "--model", "base-uncased", "--port", str(port),
         "--vocab", str(vocab_path)],
        stdout=subprocess.DEVNULL,
        stderr=subprocess.DEVNULL,
    )
    try:
        embedder = None
        for _ in range(50):
            try:
                embedder = SidecarEmbedder(
                    f"127.0.0.1:{port}", expected_vocab_digest=vocab.digest
                )
                break
            except Exception:
                time.sleep(0.1)
        if embedder is None:
            raise RuntimeError("sidecar did not come up")
        yield embedder, vocab
    finally:
        proc.terminate()
        proc.wait(timeout=5)


def test_s1_tokenizer_parity(sidecar):
    from notematch.textproc import wordpiece_tokenize

    embedder, vocab = sidecar
    assert embedder.handshake["vocab_sha256"] == vocab.digest
    rng = np.random.default_rng(46)
    words = [t for t in vocab.tokens if not t.startswith("[") and not t.startswith("##")]
    sentences = [
        " ".join(rng.choice(words, size=int(rng.integers(3, 12)))) + "."
        for _ in range(100)
    ]
    local = [wordpiece_tokenize(s, vocab, lowercase=True) for s in sentences]
    remote = embedder.tokenize_check(sentences)
    assert local == remote
    passline("S1", "100 sentences: sidecar token ids bit-exact with local WordPiece; digests match")


def test_s2_protocol_shape(sidecar):
    embedder, vocab = sidecar
    assert embedder.handshake["dim"] == 768
    ids = list(np.random.default_rng(47).integers(4, len(vocab.tokens), size=512))
    tokens = embedder.embed_tokens([int(i) for i in ids])
    assert tokens.shape == (512, 768)
    cls = embedder.embed_cls([int(i) for i in ids[:40]])
    assert cls.shape == (768,)
    over = [int(i) for i in np.random.default_rng(48).integers(4, len(vocab.tokens), size=600)]
    before = embedder.truncation_count
    doc = embedder.embed_document(over)
    assert doc.shape == (768,)
    assert embedder.truncation_count == before + 1  # server flagged truncated=true
    passline("S2", "token request 512x768, cls request 768, over-length document flags truncated")
