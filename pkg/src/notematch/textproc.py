"""Sentence splitting, WordPiece tokenization and sliding-window chunking."""

from __future__ import annotations

import hashlib
import re
import unicodedata
from dataclasses import dataclass
from pathlib import Path

from .errors import DataFormatError

SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]")
MAX_WORD_CHARS = 100  # longer words become [UNK] outright

_SENTENCE_DELIMS = re.compile(r"[.!?\n]+")


@dataclass
class Vocabulary:
    tokens: list[str]
    digest: str  # SHA-256 of the raw vocabulary file bytes

    def __post_init__(self):
        self.index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise DataFormatError("vocabulary contains duplicate tokens")
        for special in SPECIAL_TOKENS:
            if special not in self.index:
                raise DataFormatError(f"vocabulary missing special token {special}")
        self.pad_id = self.index["[PAD]"]
        self.unk_id = self.index["[UNK]"]
        self.cls_id = self.index["[CLS]"]
        self.sep_id = self.index["[SEP]"]

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_file(cls, path: str | Path) -> "Vocabulary":
        raw = Path(path).read_bytes()
        digest = hashlib.sha256(raw).hexdigest()
        tokens = [line.rstrip("\n").rstrip("\r") for line in raw.decode("utf-8").splitlines()]
        tokens = [t for t in tokens if t]
        return cls(tokens=tokens, digest=digest)


def split_sentences(text: str) -> list[str]:
    """Split at '.', '!', '?' and newlines; trim segments, drop empties."""
    return [seg.strip() for seg in _SENTENCE_DELIMS.split(text) if seg.strip()]


def _is_punctuation(ch: str) -> bool:
    cp = ord(ch)
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(ch).startswith("P")


def basic_tokenize(text: str, lowercase: bool = True) -> list[str]:
    """Whitespace split with punctuation marks as standalone words."""
    if lowercase:
        text = text.lower()
    words: list[str] = []
    current: list[str] = []
    for ch in text:
        if ch.isspace():
            if current:
                words.append("".join(current))
                current = []
        elif _is_punctuation(ch):
            if current:
                words.append("".join(current))
                current = []
            words.append(ch)
        else:
            current.append(ch)
    if current:
        words.append("".join(current))
    return words


def _wordpiece_word(word: str, vocab: Vocabulary) -> list[int] | None:
    """Greedy longest-match-first decomposition; None if no full cover exists."""
    ids: list[int] = []
    start = 0
    while start < len(word):
        end = len(word)
        match = None
        while start < end:
            piece = word[start:end]
            if start > 0:
                piece = "##" + piece
            if piece in vocab.index:
                match = vocab.index[piece]
                break
            end -= 1
        if match is None:
            return None
        ids.append(match)
        start = end
    return ids


def wordpiece_tokenize(sentence: str, vocab: Vocabulary, lowercase: bool = True) -> list[int]:
    """Tokenize one sentence to vocabulary ids; undecomposable words become [UNK]."""
    ids: list[int] = []
    for word in basic_tokenize(sentence, lowercase=lowercase):
        if len(word) > MAX_WORD_CHARS:
            ids.append(vocab.unk_id)
            continue
        pieces = _wordpiece_word(word, vocab)
        ids.extend(pieces if pieces is not None else [vocab.unk_id])
    return ids


@dataclass(frozen=True)
class Chunk:
    start: int
    end: int  # exclusive
    token_ids: tuple[int, ...]


def sliding_chunks(token_ids: list[int], window_size: int = 512, stride: int = 256) -> list[Chunk]:
    """Overlapping windows covering [0, len); stops at the first chunk reaching the end."""
    if not (window_size >= stride >= 1):
        raise ValueError("require window_size >= stride >= 1")
    n = len(token_ids)
    if n == 0:
        return []
    chunks: list[Chunk] = []
    start = 0
    while True:
        end = min(start + window_size, n)
        chunks.append(Chunk(start, end, tuple(token_ids[start:end])))
        if end == n:
            return chunks
        start += stride
