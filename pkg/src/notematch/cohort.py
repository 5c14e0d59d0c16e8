"""Cohort cleaning: dedup, category filtering, IQR outlier removal, min-notes.

Pipeline order is fixed: dedup -> category -> IQR -> min-notes. Applying the
full pipeline twice is idempotent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus, Patient


@dataclass
class CohortConfig:
    categories: set[str] = field(default_factory=set)  # empty = keep all
    iqr_multiplier: float = 1.5  # math.inf disables the filter
    min_notes: int = 2
    dedup: bool = True

    def validate(self) -> None:
        if self.iqr_multiplier < 0:
            raise ValueError("iqr_multiplier must be >= 0")
        if self.min_notes < 2:
            raise ValueError("min_notes must be >= 2")


@dataclass
class CohortReport:
    notes_removed: dict[str, int] = field(default_factory=dict)
    patients_removed: dict[str, int] = field(default_factory=dict)
    q1: float | None = None
    q3: float | None = None
    note_count_threshold: float | None = None

    def merge(self, other: "CohortReport") -> None:
        for stage, n in other.notes_removed.items():
            self.notes_removed[stage] = self.notes_removed.get(stage, 0) + n
        for stage, n in other.patients_removed.items():
            self.patients_removed[stage] = self.patients_removed.get(stage, 0) + n
        if other.q1 is not None:
            self.q1, self.q3 = other.q1, other.q3
            self.note_count_threshold = other.note_count_threshold

    def to_dict(self) -> dict:
        return {
            "notes_removed": dict(sorted(self.notes_removed.items())),
            "patients_removed": dict(sorted(self.patients_removed.items())),
            "q1": self.q1,
            "q3": self.q3,
            "note_count_threshold": self.note_count_threshold,
        }


def _rebuild(corpus: Corpus, patients: dict[str, Patient]) -> Corpus:
    return Corpus(patients=patients, source=corpus.source, seed=corpus.seed)


def _normalize(text: str) -> str:
    return " ".join(text.split())


def deduplicate(corpus: Corpus) -> tuple[Corpus, CohortReport]:
    """Drop per-patient duplicates; of same-time partial duplicates keep the longer.

    Exact duplicates are notes of one patient with identical
    whitespace-normalized text (the earliest survives). Partial duplicates are
    same-patient, same-chart-time notes where one normalized text is a
    substring of the other; only the longer survives.
    """
    report = CohortReport(notes_removed={"dedup_exact": 0, "dedup_partial": 0})
    patients: dict[str, Patient] = {}
    for pid in corpus.patient_ids():
        kept = []
        seen_texts: set[str] = set()
        for note in corpus.patients[pid].notes:
            norm = _normalize(note.text)
            if norm in seen_texts:
                report.notes_removed["dedup_exact"] += 1
                continue
            seen_texts.add(norm)
            kept.append(note)
        # partial duplicates at identical chart_time: shorter contained in longer
        drop: set[str] = set()
        by_time: dict[str, list] = {}
        for note in kept:
            by_time.setdefault(note.chart_time, []).append(note)
        for group in by_time.values():
            for a in group:
                for b in group:
                    if a.note_id == b.note_id:
                        continue
                    na, nb = _normalize(a.text), _normalize(b.text)
                    if len(na) < len(nb) and na in nb:
                        drop.add(a.note_id)
        report.notes_removed["dedup_partial"] += len(drop)
        kept = [n for n in kept if n.note_id not in drop]
        if kept:
            patients[pid] = Patient(pid, kept)
    return _rebuild(corpus, patients), report


def filter_categories(corpus: Corpus, categories: set[str]) -> tuple[Corpus, CohortReport]:
    """Keep only notes with category in `categories` (exact match); empty set keeps all."""
    report = CohortReport(notes_removed={"category": 0}, patients_removed={"category": 0})
    if not categories:
        return corpus, report
    patients: dict[str, Patient] = {}
    for pid in corpus.patient_ids():
        kept = [n for n in corpus.patients[pid].notes if n.category in categories]
        report.notes_removed["category"] += len(corpus.patients[pid].notes) - len(kept)
        if kept:
            patients[pid] = Patient(pid, kept)
        else:
            report.patients_removed["category"] += 1
    return _rebuild(corpus, patients), report


def iqr_filter(corpus: Corpus, multiplier: float = 1.5) -> tuple[Corpus, CohortReport]:
    """Remove patients whose note count exceeds Q3 + multiplier * IQR.

    Quartiles use linear-interpolation (type-7) quantiles over per-patient
    note counts; the comparison is strict (count > threshold).
    """
    if not corpus.patients:
        raise ValueError("iqr_filter requires a nonempty corpus")
    counts = np.array([corpus.patients[pid].note_count for pid in corpus.patient_ids()], dtype=float)
    q1 = float(np.quantile(counts, 0.25))  # numpy default is type-7 linear interpolation
    q3 = float(np.quantile(counts, 0.75))
    threshold = math.inf if math.isinf(multiplier) else q3 + multiplier * (q3 - q1)
    report = CohortReport(
        notes_removed={"iqr": 0},
        patients_removed={"iqr": 0},
        q1=q1,
        q3=q3,
        note_count_threshold=threshold,
    )
    patients: dict[str, Patient] = {}
    for pid in corpus.patient_ids():
        patient = corpus.patients[pid]
        if patient.note_count > threshold:
            report.patients_removed["iqr"] += 1
            report.notes_removed["iqr"] += patient.note_count
        else:
            patients[pid] = patient
    return _rebuild(corpus, patients), report


def min_notes_filter(corpus: Corpus, min_notes: int = 2) -> tuple[Corpus, CohortReport]:
    """Drop patients with fewer than `min_notes` notes (boundary inclusive)."""
    if min_notes < 2:
        raise ValueError("min_notes must be >= 2")
    report = CohortReport(notes_removed={"min_notes": 0}, patients_removed={"min_notes": 0})
    patients: dict[str, Patient] = {}
    for pid in corpus.patient_ids():
        patient = corpus.patients[pid]
        if patient.note_count < min_notes:
            report.patients_removed["min_notes"] += 1
            report.notes_removed["min_notes"] += patient.note_count
        else:
            patients[pid] = patient
    return _rebuild(corpus, patients), report


def run_cohort(corpus: Corpus, config: CohortConfig) -> tuple[Corpus, CohortReport]:
    """Full cleaning pipeline: dedup -> category -> IQR -> min-notes."""
    config.validate()
    report = CohortReport()
    if config.dedup:
        corpus, stage = deduplicate(corpus)
        report.merge(stage)
    corpus, stage = filter_categories(corpus, config.categories)
    report.merge(stage)
    if corpus.patients:
        corpus, stage = iqr_filter(corpus, config.iqr_multiplier)
        report.merge(stage)
    corpus, stage = min_notes_filter(corpus, config.min_notes)
    report.merge(stage)
    return corpus, report
