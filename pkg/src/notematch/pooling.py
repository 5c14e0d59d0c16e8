"""Aggregation algebra: token -> sentence/chunk -> note -> patient pooling.

Strategies: avg (element-wise mean), max (element-wise max), and mean_max
(avg concatenated with max, doubling the dimension). The same algebra is
applied at every level; mean_max at all three levels multiplies the backend
dimension by 8.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .textproc import Chunk

STRATEGIES = ("avg", "max", "mean_max")
TOKEN_LEVEL_STRATEGIES = STRATEGIES + ("cls",)


def _check_strategy(strategy: str, allowed=STRATEGIES) -> None:
    if strategy == "att":
        raise ValueError(
            "learned attention aggregation is not supported; choose one of "
            + ", ".join(allowed)
        )
    if strategy not in allowed:
        raise ValueError(f"unknown pooling strategy {strategy!r}; choose one of {allowed}")


@dataclass
class PoolingSpec:
    token_level: str = "mean_max"  # avg | max | mean_max | cls
    note_level: str = "mean_max"
    patient_level: str = "mean_max"

    def validate(self) -> None:
        _check_strategy(self.token_level, TOKEN_LEVEL_STRATEGIES)
        _check_strategy(self.note_level)
        _check_strategy(self.patient_level)

    @classmethod
    def uniform(cls, strategy: str) -> "PoolingSpec":
        spec = cls(token_level=strategy, note_level=strategy, patient_level=strategy)
        spec.validate()
        return spec


@dataclass
class PatientRepresentation:
    patient_id: str
    vector: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


def pool(matrix: np.ndarray, strategy: str) -> np.ndarray:
    """Pool a (rows x dim) matrix into a single vector."""
    _check_strategy(strategy)
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise ValueError("cannot pool an empty matrix")
    if strategy == "avg":
        return matrix.mean(axis=0)
    if strategy == "max":
        return matrix.max(axis=0)
    return np.concatenate([matrix.mean(axis=0), matrix.max(axis=0)])


def chunk_vectors(chunks: list[Chunk], embedder, token_level: str) -> list[np.ndarray]:
    """One vector per chunk: pooled token embeddings, or [CLS] extraction."""
    _check_strategy(token_level, TOKEN_LEVEL_STRATEGIES)
    if not chunks:
        raise ValueError("sentence produced no chunks")
    if token_level == "cls":
        return [embedder.embed_cls(list(chunk.token_ids)) for chunk in chunks]
    return [pool(embedder.embed_tokens(list(chunk.token_ids)), token_level) for chunk in chunks]


def sentence_repr(chunks: list[Chunk], embedder, token_level: str) -> np.ndarray:
    """Single diagnostic sentence vector; multi-chunk sentences average their chunks.

    The benchmark path does not pre-merge chunks: note_repr receives the
    flattened chunk-vector list instead (chunks of a long sentence sit
    alongside whole-sentence vectors).
    """
    vectors = chunk_vectors(chunks, embedder, token_level)
    if len(vectors) == 1:
        return vectors[0]
    return np.stack(vectors).mean(axis=0)


def note_repr(vectors: list[np.ndarray], note_level: str) -> np.ndarray:
    """Aggregate sentence/chunk vectors into one note vector."""
    if not vectors:
        raise ValueError("cannot build a note representation from zero vectors")
    dims = {v.shape[0] for v in vectors}
    if len(dims) > 1:
        raise ValueError(f"sentence vector dimension mismatch: {sorted(dims)}")
    return pool(np.stack(vectors), note_level)


def patient_repr(
    patient_id: str, note_vectors: list[np.ndarray], patient_level: str
) -> PatientRepresentation:
    """Aggregate a patient's note vectors into the final representation."""
    if not note_vectors:
        raise ValueError("cannot build a patient representation from zero notes")
    return PatientRepresentation(patient_id, pool(np.stack(note_vectors), patient_level))


def lift_target(note_vector: np.ndarray, patient_level: str) -> np.ndarray:
    """Apply patient-level pooling to the singleton {target note} so its
    dimension matches the source-set representation."""
    return pool(np.asarray(note_vector)[None, :], patient_level)
