"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 sidecar or
transport error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .cohort import CohortConfig, run_cohort
from .corpus import generate_synthetic, load_corpus, save_corpus, write_synthetic_vocab
from .embed import cache_write, make_embedder
from .errors import DataFormatError, TransportError, UsageError
from .evaluate import render_table
from .pairing import SplitSpec, build_pairs, save_pairs, split_patients
from .pooling import PoolingSpec, chunk_vectors
from .runner import PipelineConfig, compute_note_vectors, run_experiment
from .textproc import Vocabulary, sliding_chunks, split_sentences, wordpiece_tokenize


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="notematch", description="Patient-note identification pipeline")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic corpus")
    p.add_argument("--patients", type=int, required=True)
    p.add_argument("--notes-min", type=int, default=2)
    p.add_argument("--notes-max", type=int, default=10)
    p.add_argument("--vocab-size", type=int, default=2000)
    p.add_argument("--topic-tokens", type=int, default=30)
    p.add_argument("--p-signal", type=float, default=0.35)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-out", default=None)

    p = sub.add_parser("cohort", help="apply the cleaning pipeline")
    p.add_argument("--config", default=None, help="JSON cohort config")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)

    p = sub.add_parser("pairs", help="build the pair-instance manifest")
    p.add_argument("--corpus", required=True)
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--draws", type=int, default=1)
    p.add_argument("--distinct-negatives", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("tokenize", help="tokenize a corpus and print statistics")
    p.add_argument("--vocab", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--stats", action="store_true")
    p.add_argument("--no-lowercase", action="store_true")

    p = sub.add_parser("embed", help="populate an embedding cache")
    p.add_argument("--vocab", required=True)
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--granularity", choices=["token", "cls", "document"], default="token")
    p.add_argument("--token-level", default="avg")
    p.add_argument("--endpoint", default=None, help="sidecar endpoint instead of hash backend")
    p.add_argument("--window", type=int, default=512)
    p.add_argument("--stride", type=int, default=256)

    p = sub.add_parser("run", help="execute a full experiment grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="override config output_dir")

    p = sub.add_parser("report", help="render a saved report")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--format", choices=["table", "json"], default="table")
    return parser


def _cmd_generate(args) -> int:
    corpus = generate_synthetic(
        n_patients=args.patients,
        notes_per_patient=(args.notes_min, args.notes_max),
        vocab_size=args.vocab_size,
        topic_tokens=args.topic_tokens,
        seed=args.seed,
        p_signal=args.p_signal,
    )
    save_corpus(corpus, args.out)
    if args.vocab_out:
        write_synthetic_vocab(args.vocab_size, args.vocab_out)
    print(f"wrote {corpus.note_count} notes for {len(corpus.patients)} patients to {args.out}")
    return 0


def _cmd_cohort(args) -> int:
    raw = {}
    if args.config:
        if not Path(args.config).exists():
            raise UsageError(f"config file {args.config} does not exist")
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    config = CohortConfig(
        categories=set(raw.get("categories", [])),
        iqr_multiplier=float(raw.get("iqr_multiplier", 1.5)),
        min_notes=int(raw.get("min_notes", 2)),
        dedup=bool(raw.get("dedup", True)),
    )
    corpus = load_corpus(args.inp)
    corpus, report = run_cohort(corpus, config)
    save_corpus(corpus, args.out)
    if args.report:
        Path(args.report).write_text(
            json.dumps(report.to_dict(), sort_keys=True, indent=2), encoding="utf-8"
        )
    print(f"kept {len(corpus.patients)} patients / {corpus.note_count} notes")
    return 0


def _cmd_pairs(args) -> int:
    corpus = load_corpus(args.corpus)
    spec = SplitSpec(
        train_ratio=args.ratio,
        seed=args.seed,
        draws_per_patient=args.draws,
        distinct_negatives=args.distinct_negatives,
    )
    train_ids, test_ids = split_patients(corpus, spec)
    instances = build_pairs(corpus, train_ids, test_ids, spec)
    save_pairs(instances, args.out)
    print(f"wrote {len(instances)} instances ({len(train_ids)} train / {len(test_ids)} test patients)")
    return 0


def _cmd_tokenize(args) -> int:
    vocab = Vocabulary.from_file(args.vocab)
    corpus = load_corpus(args.inp)
    lowercase = not args.no_lowercase
    note_tokens, note_sentences = [], []
    for note in corpus.iter_notes():
        sentences = split_sentences(note.text)
        counts = [len(wordpiece_tokenize(s, vocab, lowercase=lowercase)) for s in sentences]
        note_sentences.append(len(sentences))
        note_tokens.append(sum(counts))
    print(f"vocab size: {len(vocab)} (sha256 {vocab.digest[:12]})")
    print(f"notes: {len(note_tokens)}")
    if note_tokens:
        print(f"mean tokens/note: {np.mean(note_tokens):.1f}  median: {np.median(note_tokens):.1f}")
        print(f"mean sentences/note: {np.mean(note_sentences):.1f}")
    return 0


def _cmd_embed(args) -> int:
    vocab = Vocabulary.from_file(args.vocab)
    corpus = load_corpus(args.inp)
    if args.endpoint:
        spec = {"kind": "sidecar", "endpoint": args.endpoint, "vocab_sha256": vocab.digest}
    else:
        spec = {"kind": "hash", "dim": args.dim, "seed": args.seed, "granularity": args.granularity}
    embedder = make_embedder(spec)
    vectors = {}
    for note in corpus.iter_notes():
        sent_ids = [wordpiece_tokenize(s, vocab) for s in split_sentences(note.text)]
        sent_ids = [ids for ids in sent_ids if ids]
        if not sent_ids:
            continue
        if args.granularity == "document":
            all_ids = [t for ids in sent_ids for t in ids]
            vectors[note.note_id] = embedder.embed_document(all_ids)
        else:
            for si, ids in enumerate(sent_ids):
                chunks = sliding_chunks(ids, window_size=args.window, stride=args.stride)
                for chunk, vec in zip(
                    chunks, chunk_vectors(chunks, embedder, args.token_level)
                ):
                    vectors[f"{note.note_id}:{si}:{chunk.start}"] = vec
    cache_write(args.out, vectors)
    print(f"wrote {len(vectors)} vectors to {args.out}")
    return 0


def _cmd_run(args) -> int:
    if not Path(args.config).exists():
        raise UsageError(f"config file {args.config} does not exist")
    config = PipelineConfig.from_file(args.config)
    out_dir = args.out or config.raw.get("output_dir")
    if not out_dir:
        raise UsageError("no output directory: set config.output_dir or pass --out")
    report = run_experiment(config, out_dir)
    print(render_table(report.to_dict()))
    if report.errors:
        print(f"{len(report.errors)} stage error(s); see report.json", file=sys.stderr)
    return 0


def _cmd_report(args) -> int:
    if not Path(args.inp).exists():
        raise UsageError(f"report file {args.inp} does not exist")
    report = json.loads(Path(args.inp).read_text(encoding="utf-8"))
    if args.format == "json":
        print(json.dumps(report, sort_keys=True, indent=2))
    else:
        print(render_table(report))
    return 0


_COMMANDS = {
    "generate": _cmd_generate,
    "cohort": _cmd_cohort,
    "pairs": _cmd_pairs,
    "tokenize": _cmd_tokenize,
    "embed": _cmd_embed,
    "run": _cmd_run,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataFormatError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
