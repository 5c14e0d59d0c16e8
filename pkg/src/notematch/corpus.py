"""Patient/note data model, JSONL ingestion and the synthetic corpus generator.

A corpus file is UTF-8 JSON Lines, one note per line, with keys exactly
{patient_id, note_id, category, chart_time, text} and chart_time formatted
as YYYY-MM-DDTHH:MM:SSZ.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path

from .errors import DataFormatError

CHART_TIME_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
NOTE_KEYS = {"patient_id", "note_id", "category", "chart_time", "text"}


@dataclass(frozen=True)
class Note:
    note_id: str
    patient_id: str
    category: str
    chart_time: str  # ISO-8601 Z-suffixed, validated on construction
    text: str

    def sort_key(self) -> tuple[str, str]:
        # chart_time ties broken by note_id so ordering is deterministic
        return (self.chart_time, self.note_id)


@dataclass
class Patient:
    patient_id: str
    notes: list[Note] = field(default_factory=list)

    @property
    def note_count(self) -> int:
        return len(self.notes)


@dataclass
class Corpus:
    patients: dict[str, Patient] = field(default_factory=dict)
    source: str = ""
    seed: int | None = None

    @property
    def note_count(self) -> int:
        return sum(p.note_count for p in self.patients.values())

    def patient_ids(self) -> list[str]:
        return sorted(self.patients)

    def iter_notes(self):
        for pid in self.patient_ids():
            yield from self.patients[pid].notes

    def owner_of(self, note_id: str) -> str:
        for pid in self.patient_ids():
            for note in self.patients[pid].notes:
                if note.note_id == note_id:
                    return pid
        raise KeyError(note_id)


def parse_chart_time(value: str) -> datetime:
    try:
        return datetime.strptime(value, CHART_TIME_FORMAT)
    except (TypeError, ValueError) as exc:
        raise DataFormatError(f"unparseable chart_time {value!r}") from exc


def _build_corpus(notes: list[Note], source: str = "", seed: int | None = None) -> Corpus:
    corpus = Corpus(source=source, seed=seed)
    for note in notes:
        corpus.patients.setdefault(note.patient_id, Patient(note.patient_id)).notes.append(note)
    for patient in corpus.patients.values():
        patient.notes.sort(key=Note.sort_key)
    return corpus


def load_corpus(path: str | Path) -> Corpus:
    """Read a JSONL corpus, grouping notes per patient sorted by chart time."""
    path = Path(path)
    notes: list[Note] = []
    seen_ids: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            if not isinstance(record, dict) or set(record) != NOTE_KEYS:
                missing = NOTE_KEYS - set(record) if isinstance(record, dict) else NOTE_KEYS
                raise DataFormatError(
                    f"{path}:{lineno}: expected keys {sorted(NOTE_KEYS)}, missing {sorted(missing)}"
                )
            note_id = str(record["note_id"])
            if note_id in seen_ids:
                raise DataFormatError(f"{path}:{lineno}: duplicate note_id {note_id!r}")
            seen_ids.add(note_id)
            text = str(record["text"])
            if not text.strip():
                raise DataFormatError(f"{path}:{lineno}: empty text for note {note_id!r}")
            chart_time = str(record["chart_time"])
            try:
                parse_chart_time(chart_time)
            except DataFormatError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
            notes.append(
                Note(
                    note_id=note_id,
                    patient_id=str(record["patient_id"]),
                    category=str(record["category"]),
                    chart_time=chart_time,
                    text=text,
                )
            )
    return _build_corpus(notes, source=str(path))


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    """Write a corpus as JSONL, patients in id order, notes in chart order."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for note in corpus.iter_notes():
            fh.write(
                json.dumps(
                    {
                        "patient_id": note.patient_id,
                        "note_id": note.note_id,
                        "category": note.category,
                        "chart_time": note.chart_time,
                        "text": note.text,
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def synthetic_vocab_tokens(vocab_size: int) -> list[str]:
    """Pseudo-word vocabulary matching the generator's output tokens."""
    width = max(4, len(str(vocab_size - 1)))
    return [f"tok{i:0{width}d}" for i in range(vocab_size)]


def write_synthetic_vocab(vocab_size: int, path: str | Path) -> None:
    """Write a tokenizer vocabulary covering the synthetic corpus.

    Specials first (id = line index), then the pseudo-words, then the
    sentence punctuation the generator emits.
    """
    lines = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"] + synthetic_vocab_tokens(vocab_size) + [".", ","]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def generate_synthetic(
    n_patients: int,
    notes_per_patient: tuple[int, int],
    vocab_size: int,
    topic_tokens: int,
    seed: int,
    p_signal: float = 0.35,
    words_per_note: tuple[int, int] = (60, 160),
    words_per_sentence: tuple[int, int] = (6, 14),
) -> Corpus:
    """Seeded corpus with a per-patient topical signal.

    Each patient draws a private subset of `topic_tokens` vocabulary items;
    each word of each note comes from that subset with probability
    `p_signal`, otherwise uniformly from the whole vocabulary. Identical
    arguments and seed yield a byte-identical corpus.
    """
    lo, hi = notes_per_patient
    if lo < 2:
        raise ValueError(f"notes_per_patient lower bound must be >= 2, got {lo}")
    if hi < lo:
        raise ValueError("notes_per_patient range is empty")
    if n_patients < 1 or vocab_size < 1 or topic_tokens < 1:
        raise ValueError("n_patients, vocab_size and topic_tokens must be positive")
    if topic_tokens > vocab_size:
        raise ValueError("topic_tokens cannot exceed vocab_size")
    if not 0.0 <= p_signal <= 1.0:
        raise ValueError("p_signal must be in [0, 1]")

    rng = random.Random(seed)
    vocab = synthetic_vocab_tokens(vocab_size)
    base_time = datetime(2020, 1, 1)
    notes: list[Note] = []
    pid_width = max(4, len(str(n_patients - 1)))
    for p_idx in range(n_patients):
        pid = f"p{p_idx:0{pid_width}d}"
        topic = rng.sample(vocab, topic_tokens)
        n_notes = rng.randint(lo, hi)
        for n_idx in range(n_notes):
            n_words = rng.randint(*words_per_note)
            words: list[str] = []
            sentence_len = rng.randint(*words_per_sentence)
            in_sentence = 0
            for _ in range(n_words):
                if rng.random() < p_signal:
                    words.append(rng.choice(topic))
                else:
                    words.append(rng.choice(vocab))
                in_sentence += 1
                if in_sentence >= sentence_len:
                    words[-1] += "."
                    sentence_len = rng.randint(*words_per_sentence)
                    in_sentence = 0
            text = " ".join(words)
            if not text.endswith("."):
                text += "."
            chart_time = (base_time + timedelta(hours=24 * n_idx + rng.randint(0, 12))).strftime(
                CHART_TIME_FORMAT
            )
            notes.append(
                Note(
                    note_id=f"{pid}-n{n_idx:03d}",
                    patient_id=pid,
                    category="Physician",
                    chart_time=chart_time,
                    text=text,
                )
            )
    return _build_corpus(notes, source=f"synthetic(seed={seed})", seed=seed)
