"""Experiment orchestration: config parsing, the note -> patient
representation pipeline with embedding cache reuse, and the full
multi-seed benchmark grid.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import classify, pooling
from .cohort import CohortConfig, run_cohort
from .corpus import Corpus, generate_synthetic, load_corpus, write_synthetic_vocab
from .embed import cache_read, cache_write, derive_seed, make_embedder
from .errors import DataFormatError
from .evaluate import (
    EvalReport,
    MetricSet,
    aggregate_runs,
    compute_metrics,
    paired_ttest,
)
from .pairing import PairInstance, SplitSpec, build_pairs, save_pairs, split_patients
from .textproc import Vocabulary, sliding_chunks, split_sentences, wordpiece_tokenize


@dataclass
class PipelineConfig:
    raw: dict

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: malformed config JSON: {exc}") from exc
        return cls(raw).validated()

    def validated(self) -> "PipelineConfig":
        cfg = self.raw
        if "corpus" not in cfg or not (
            "path" in cfg["corpus"] or "synthetic" in cfg["corpus"]
        ):
            raise DataFormatError("config.corpus must give a path or synthetic parameters")
        seeds = cfg.get("seeds", [1, 2, 3])
        if not seeds:
            raise DataFormatError("config.seeds must be nonempty")
        cfg["seeds"] = [int(s) for s in seeds]
        cfg.setdefault("cohort", {})
        cfg.setdefault("split", {})
        cfg.setdefault("embedder", {"kind": "hash", "dim": 64, "seed": 0, "granularity": "token"})
        cfg.setdefault("window", 512)
        cfg.setdefault("stride", 256)
        cfg.setdefault("pooling_strategies", ["mean_max"])
        cfg.setdefault("feature_mode", "concat")
        cfg.setdefault("classifiers", {"boost": {}})
        cfg.setdefault("lowercase", True)
        if cfg["feature_mode"] not in classify.FEATURE_MODES:
            raise DataFormatError(f"unknown feature_mode {cfg['feature_mode']!r}")
        for name in cfg["classifiers"]:
            if name not in classify.CLASSIFIERS:
                raise DataFormatError(f"unknown classifier {name!r}")
        for strategy in cfg["pooling_strategies"]:
            self.pooling_spec(strategy).validate()
        return self

    @staticmethod
    def pooling_spec(strategy) -> pooling.PoolingSpec:
        if isinstance(strategy, str):
            return pooling.PoolingSpec.uniform(strategy)
        return pooling.PoolingSpec(**strategy)

    @staticmethod
    def strategy_name(strategy) -> str:
        if isinstance(strategy, str):
            return strategy
        return "/".join(
            [strategy["token_level"], strategy["note_level"], strategy["patient_level"]]
        )

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True).encode("utf-8")
        ).hexdigest()


def resolve_corpus(cfg: dict, out_dir: Path) -> tuple[Corpus, Path]:
    """Load or generate the corpus; returns it with the vocabulary path."""
    spec = cfg["corpus"]
    if "path" in spec:
        corpus = load_corpus(spec["path"])
        vocab_path = Path(cfg["vocab"])
        if not vocab_path.exists():
            raise DataFormatError(f"vocabulary file {vocab_path} does not exist")
        return corpus, vocab_path
    syn = spec["synthetic"]
    corpus = generate_synthetic(
        n_patients=int(syn["n_patients"]),
        notes_per_patient=(int(syn.get("notes_min", 2)), int(syn.get("notes_max", 10))),
        vocab_size=int(syn.get("vocab_size", 2000)),
        topic_tokens=int(syn.get("topic_tokens", 30)),
        seed=int(syn.get("seed", 0)),
        p_signal=float(syn.get("p_signal", 0.35)),
    )
    if "vocab" in cfg:
        vocab_path = Path(cfg["vocab"])
    else:
        vocab_path = out_dir / "vocab.txt"
        write_synthetic_vocab(int(syn.get("vocab_size", 2000)), vocab_path)
    return corpus, vocab_path


def _round_f32(vec: np.ndarray) -> np.ndarray:
    # vectors always pass through 32-bit so warm-cache runs equal cold runs
    return vec.astype(np.float32).astype(np.float64)


def compute_note_vectors(
    corpus: Corpus,
    vocab: Vocabulary,
    embedder,
    spec: pooling.PoolingSpec,
    window: int,
    stride: int,
    lowercase: bool = True,
    cache_path: Path | None = None,
) -> dict[str, np.ndarray]:
    """One vector per note, via the chunk-flattening hierarchy.

    Chunk vectors are cached under "{note_id}:{sentence_index}:{chunk_start}"
    (or "{note_id}" at document granularity) and reused on warm runs.
    """
    cache: dict[str, np.ndarray] = {}
    if cache_path is not None and cache_path.exists():
        cache = cache_read(cache_path)
    fresh: dict[str, np.ndarray] = {}
    note_vectors: dict[str, np.ndarray] = {}
    document_mode = getattr(embedder, "granularity", "token") == "document"
    for note in corpus.iter_notes():
        sentences = split_sentences(note.text)
        sent_ids = [wordpiece_tokenize(s, vocab, lowercase=lowercase) for s in sentences]
        sent_ids = [ids for ids in sent_ids if ids]
        if not sent_ids:
            raise DataFormatError(f"note {note.note_id!r} produced no tokens")
        if document_mode:
            key = note.note_id
            vec = cache.get(key)
            if vec is None:
                all_ids = [t for ids in sent_ids for t in ids]
                vec = _round_f32(embedder.embed_document(all_ids))
                fresh[key] = vec
            note_vectors[note.note_id] = vec
            continue
        flat: list[np.ndarray] = []
        for si, ids in enumerate(sent_ids):
            chunks = sliding_chunks(ids, window_size=window, stride=stride)
            cached_all = all(f"{note.note_id}:{si}:{c.start}" in cache for c in chunks)
            if cached_all:
                flat.extend(cache[f"{note.note_id}:{si}:{c.start}"] for c in chunks)
            else:
                vecs = pooling.chunk_vectors(chunks, embedder, spec.token_level)
                for chunk, vec in zip(chunks, vecs):
                    vec = _round_f32(vec)
                    fresh[f"{note.note_id}:{si}:{chunk.start}"] = vec
                    flat.append(vec)
        note_vectors[note.note_id] = pooling.note_repr(flat, spec.note_level)
    if cache_path is not None and fresh:
        cache.update(fresh)
        cache_write(cache_path, cache)
    return note_vectors


def features_for_instances(
    instances: list[PairInstance],
    note_vectors: dict[str, np.ndarray],
    spec: pooling.PoolingSpec,
    feature_mode: str,
) -> classify.Dataset:
    source_memo: dict[tuple[str, ...], np.ndarray] = {}
    rows, labels, ids = [], [], []
    for inst in instances:
        x1 = source_memo.get(inst.source_note_ids)
        if x1 is None:
            x1 = pooling.patient_repr(
                inst.patient_id,
                [note_vectors[nid] for nid in inst.source_note_ids],
                spec.patient_level,
            ).vector
            source_memo[inst.source_note_ids] = x1
        x2 = pooling.lift_target(note_vectors[inst.target_note_id], spec.patient_level)
        rows.append(classify.build_features(x1, x2, feature_mode))
        labels.append(inst.label)
        ids.append(f"{inst.patient_id}:{inst.target_note_id}:{inst.draw_index}")
    return classify.Dataset(np.stack(rows), np.array(labels, dtype=np.float64), ids)


def run_experiment(config: PipelineConfig, out_dir: str | Path) -> EvalReport:
    """Execute the full grid: seeds x pooling strategies x classifiers."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cfg = config.raw
    corpus, vocab_path = resolve_corpus(cfg, out_dir)
    vocab = Vocabulary.from_file(vocab_path)
    cohort_cfg = CohortConfig(
        categories=set(cfg["cohort"].get("categories", [])),
        iqr_multiplier=float(cfg["cohort"].get("iqr_multiplier", 1.5)),
        min_notes=int(cfg["cohort"].get("min_notes", 2)),
        dedup=bool(cfg["cohort"].get("dedup", True)),
    )
    corpus, cohort_report = run_cohort(corpus, cohort_cfg)
    (out_dir / "cohort_report.json").write_text(
        json.dumps(cohort_report.to_dict(), sort_keys=True), encoding="utf-8"
    )

    report = EvalReport(config_digest=config.digest(), seeds=cfg["seeds"])
    artifacts: dict[str, str] = {}
    per_run_metrics: dict[tuple[str, str], list[MetricSet]] = {}

    # note vectors depend on the strategy but not on the run seed
    strategy_note_vectors: dict[str, dict[str, np.ndarray]] = {}
    for strategy in cfg["pooling_strategies"]:
        name = config.strategy_name(strategy)
        spec = config.pooling_spec(strategy)
        embedder = make_embedder(cfg["embedder"])
        cache_path = out_dir / f"cache_{name.replace('/', '-')}.nem"
        strategy_note_vectors[name] = compute_note_vectors(
            corpus,
            vocab,
            embedder,
            spec,
            window=int(cfg["window"]),
            stride=int(cfg["stride"]),
            lowercase=bool(cfg["lowercase"]),
            cache_path=cache_path,
        )
        artifacts[f"cache:{name}"] = str(cache_path)

    for seed in cfg["seeds"]:
        split_spec = SplitSpec(
            train_ratio=float(cfg["split"].get("train_ratio", 0.8)),
            seed=derive_seed(seed, "pairing"),
            draws_per_patient=int(cfg["split"].get("draws_per_patient", 1)),
            distinct_negatives=bool(cfg["split"].get("distinct_negatives", False)),
        )
        train_ids, test_ids = split_patients(corpus, split_spec)
        instances = build_pairs(corpus, train_ids, test_ids, split_spec)
        pairs_path = out_dir / f"pairs_seed{seed}.jsonl"
        save_pairs(instances, pairs_path)
        artifacts[f"pairs:{seed}"] = str(pairs_path)
        train_instances = [i for i in instances if i.split == "train"]
        test_instances = [i for i in instances if i.split == "test"]

        for strategy in cfg["pooling_strategies"]:
            name = config.strategy_name(strategy)
            spec = config.pooling_spec(strategy)
            note_vectors = strategy_note_vectors[name]
            train_data = features_for_instances(
                train_instances, note_vectors, spec, cfg["feature_mode"]
            )
            test_data = features_for_instances(
                test_instances, note_vectors, spec, cfg["feature_mode"]
            )
            for clf_name in sorted(cfg["classifiers"]):
                hyper = dict(cfg["classifiers"][clf_name])
                if clf_name == "forest":
                    hyper.setdefault("seed", derive_seed(seed, "forest"))
                try:
                    params = classify.train(clf_name, train_data, **hyper)
                    scores = classify.predict(params, test_data.X)
                    metrics = compute_metrics(scores, test_data.y.astype(int))
                except Exception as exc:  # crash isolation: other classifiers proceed
                    report.errors.append(
                        {"seed": seed, "strategy": name, "classifier": clf_name, "error": str(exc)}
                    )
                    continue
                model_path = out_dir / f"model_{name.replace('/', '-')}_{clf_name}_seed{seed}.json"
                classify.save_model(params, model_path)
                artifacts[f"model:{name}:{clf_name}:{seed}"] = str(model_path)
                report.per_run.append(
                    {
                        "seed": seed,
                        "strategy": name,
                        "classifier": clf_name,
                        "metrics": metrics.as_dict(),
                    }
                )
                per_run_metrics.setdefault((name, clf_name), []).append(metrics)

    strategy_names = [config.strategy_name(s) for s in cfg["pooling_strategies"]]
    for (name, clf_name), runs in sorted(per_run_metrics.items()):
        agg = aggregate_runs(runs)
        report.aggregated.append(
            {
                "model": cfg["embedder"].get("kind", "hash"),
                "strategy": name,
                "classifier": clf_name,
                "mean": agg.mean.as_dict(),
                "std": agg.std.as_dict(),
                "n_runs": agg.n_runs,
            }
        )
    # best classifier per strategy by mean AUC
    for name in strategy_names:
        rows = [r for r in report.aggregated if r["strategy"] == name]
        if rows:
            best = max(rows, key=lambda r: r["mean"]["auc"])
            report.best_by_strategy[name] = best["classifier"]
    # paired t-tests between pooling strategies, per classifier, over per-run AUC
    if len(cfg["seeds"]) >= 2:
        for clf_name in sorted(cfg["classifiers"]):
            for i, a_name in enumerate(strategy_names):
                for b_name in strategy_names[i + 1 :]:
                    a_runs = per_run_metrics.get((a_name, clf_name))
                    b_runs = per_run_metrics.get((b_name, clf_name))
                    if not a_runs or not b_runs or len(a_runs) != len(b_runs):
                        continue
                    result = paired_ttest(
                        [m.auc for m in a_runs], [m.auc for m in b_runs]
                    )
                    report.ttests.append(
                        {
                            "classifier": clf_name,
                            "strategy_a": a_name,
                            "strategy_b": b_name,
                            "metric": "auc",
                            **result.as_dict(),
                        }
                    )

    report.timestamp = datetime.now(timezone.utc).isoformat()
    report_path = out_dir / "report.json"
    report_path.write_text(json.dumps(report.to_dict(), sort_keys=True), encoding="utf-8")
    artifacts["report"] = str(report_path)
    digests = {
        key: hashlib.sha256(Path(path).read_bytes()).hexdigest()
        for key, path in sorted(artifacts.items())
        if key != "report"
    }
    (out_dir / "artifacts.json").write_text(
        json.dumps({"paths": artifacts, "digests": digests}, sort_keys=True), encoding="utf-8"
    )
    return report
