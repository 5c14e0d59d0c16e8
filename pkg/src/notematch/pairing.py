"""Supervised pair construction: patient-level splits and balanced sampling.

Per patient and per draw, one target note is held out; the remaining notes
form the source set. The target is paired once with its true owner (label 1)
and once with the source set of a random other patient from the same split
(label 0), so each split yields exactly 2 * n_patients * draws instances,
half positive.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path

from .corpus import Corpus
from .errors import DataFormatError


@dataclass
class SplitSpec:
    train_ratio: float = 0.8
    seed: int = 0
    draws_per_patient: int = 1
    distinct_negatives: bool = False  # force a derangement of negative partners

    def validate(self) -> None:
        if not 0.0 < self.train_ratio < 1.0:
            raise ValueError("train_ratio must be in (0, 1)")
        if self.draws_per_patient < 1:
            raise ValueError("draws_per_patient must be >= 1")


@dataclass(frozen=True)
class PairInstance:
    patient_id: str  # owner of the source set X1
    source_note_ids: tuple[str, ...]
    target_note_id: str
    label: int
    split: str  # "train" | "test"
    draw_index: int

    def to_dict(self) -> dict:
        return {
            "patient_id": self.patient_id,
            "source_note_ids": list(self.source_note_ids),
            "target_note_id": self.target_note_id,
            "label": self.label,
            "split": self.split,
            "draw_index": self.draw_index,
        }


def split_patients(corpus: Corpus, spec: SplitSpec) -> tuple[set[str], set[str]]:
    """Seeded patient-level split; disjoint and exhaustive by construction."""
    spec.validate()
    ids = corpus.patient_ids()
    if len(ids) < 2:
        raise ValueError("need at least 2 patients to form train and test splits")
    rng = random.Random(spec.seed)
    shuffled = ids[:]
    rng.shuffle(shuffled)
    n_train = round(spec.train_ratio * len(ids))
    return set(shuffled[:n_train]), set(shuffled[n_train:])


def build_pairs(
    corpus: Corpus, train_ids: set[str], test_ids: set[str], spec: SplitSpec
) -> list[PairInstance]:
    """Emit one positive and one negative instance per patient per draw."""
    spec.validate()
    for pid in list(train_ids) + list(test_ids):
        if corpus.patients[pid].note_count < 2:
            raise ValueError(f"patient {pid} has fewer than 2 notes; run the cohort filters first")
    rng = random.Random(spec.seed ^ 0x5DEECE66D)
    instances: list[PairInstance] = []
    for split_name, pids in (("train", train_ids), ("test", test_ids)):
        ordered = sorted(pids)
        if len(ordered) < 2:
            raise ValueError(f"{split_name} split has {len(ordered)} patient(s); need >= 2")
        # per-patient target order: a permutation, then draws with replacement
        target_order: dict[str, list[str]] = {}
        for pid in ordered:
            note_ids = [n.note_id for n in corpus.patients[pid].notes]
            target_order[pid] = rng.sample(note_ids, len(note_ids))
        for draw in range(spec.draws_per_patient):
            targets: dict[str, str] = {}
            for pid in ordered:
                order = target_order[pid]
                if draw < len(order):
                    targets[pid] = order[draw]
                else:
                    targets[pid] = rng.choice(order)
            sources = {
                pid: tuple(
                    n.note_id for n in corpus.patients[pid].notes if n.note_id != targets[pid]
                )
                for pid in ordered
            }
            partners = _negative_partners(ordered, rng, spec.distinct_negatives)
            for pid in ordered:
                instances.append(
                    PairInstance(pid, sources[pid], targets[pid], 1, split_name, draw)
                )
                other = partners[pid]
                instances.append(
                    PairInstance(other, sources[other], targets[pid], 0, split_name, draw)
                )
    return instances


def _negative_partners(
    ordered: list[str], rng: random.Random, distinct: bool
) -> dict[str, str]:
    if not distinct:
        return {pid: rng.choice([q for q in ordered if q != pid]) for pid in ordered}
    # derangement: shuffle until no patient maps to itself
    while True:
        perm = ordered[:]
        rng.shuffle(perm)
        if all(a != b for a, b in zip(ordered, perm)):
            return dict(zip(ordered, perm))


def save_pairs(instances: list[PairInstance], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_dict(), sort_keys=True) + "\n")


def load_pairs(path: str | Path) -> list[PairInstance]:
    instances = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                instances.append(
                    PairInstance(
                        patient_id=rec["patient_id"],
                        source_note_ids=tuple(rec["source_note_ids"]),
                        target_note_id=rec["target_note_id"],
                        label=int(rec["label"]),
                        split=rec["split"],
                        draw_index=int(rec["draw_index"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise DataFormatError(f"{path}:{lineno}: bad pair record: {exc}") from exc
    return instances
