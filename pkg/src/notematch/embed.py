"""Embedding backends: deterministic hash embedder, binary vector cache,
and a newline-delimited-JSON client for the external model sidecar.

All backends expose the same surface (embed_tokens / embed_cls /
embed_document) so the pooling pipeline is backend-agnostic.
"""

from __future__ import annotations

import json
import os
import socket
import struct
import subprocess
import uuid
from pathlib import Path

import numpy as np

from .errors import DataFormatError, TransportError

CACHE_MAGIC = b"NEM1"
CACHE_VERSION = 1

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer, vectorized over uint64 arrays (wrapping mod 2^64)."""
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def derive_seed(master: int, label: str) -> int:
    """Stage seed derived from a master seed and a stage name."""
    h = np.uint64(np.uint64(master & 0xFFFFFFFFFFFFFFFF))
    for byte in label.encode("utf-8"):
        h = _splitmix64(np.array(h ^ np.uint64(byte), dtype=np.uint64))[()]
    return int(h)


def hash_vector(token_id: int, seed: int, dim: int) -> np.ndarray:
    """Unit-norm vector from a counter-based PRNG keyed by (seed, token_id, index)."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    with np.errstate(over="ignore"):
        key = _splitmix64(
            np.array(
                np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * np.uint64(0xD1B54A32D192ED03)
                ^ np.uint64(token_id & 0xFFFFFFFFFFFFFFFF) * _GOLDEN,
                dtype=np.uint64,
            )
        )
        states = _splitmix64(key + np.arange(dim, dtype=np.uint64))
    uniform = (states >> np.uint64(11)).astype(np.float64) * 2.0**-53  # [0, 1)
    vec = 2.0 * uniform - 1.0
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:  # unreachable in practice; keeps the contract total
        vec[0] = 1.0
        norm = 1.0
    return vec / norm


class HashEmbedder:
    """Self-contained deterministic backend; [CLS] and document vectors are
    defined as the mean of the per-token hash vectors."""

    kind = "hash"

    def __init__(self, dim: int, seed: int = 0, granularity: str = "token", max_len: int | None = None):
        if granularity not in ("token", "cls", "document"):
            raise ValueError(f"unknown granularity {granularity!r}")
        self.dim = dim
        self.seed = seed
        self.granularity = granularity
        self.max_len = max_len if max_len is not None else (4096 if granularity == "document" else 512)
        self.truncation_count = 0
        self._table: dict[int, np.ndarray] = {}

    def _vector(self, token_id: int) -> np.ndarray:
        vec = self._table.get(token_id)
        if vec is None:
            vec = hash_vector(token_id, self.seed, self.dim)
            self._table[token_id] = vec
        return vec

    def embed_tokens(self, token_ids) -> np.ndarray:
        if len(token_ids) > self.max_len:
            raise ValueError(f"chunk of {len(token_ids)} tokens exceeds max_len {self.max_len}")
        if len(token_ids) == 0:
            return np.zeros((0, self.dim))
        return np.stack([self._vector(t) for t in token_ids])

    def embed_cls(self, token_ids) -> np.ndarray:
        if len(token_ids) == 0:
            raise ValueError("cannot embed an empty chunk")
        return self.embed_tokens(token_ids).mean(axis=0)

    def embed_document(self, token_ids) -> np.ndarray:
        if len(token_ids) == 0:
            raise ValueError("cannot embed an empty document")
        if len(token_ids) > self.max_len:
            token_ids = token_ids[: self.max_len]
            self.truncation_count += 1
        return np.stack([self._vector(t) for t in token_ids]).mean(axis=0)


def cache_write(path: str | Path, vectors: dict[str, np.ndarray]) -> None:
    """Write a key -> vector map in the NEM1 binary format (little-endian, f32)."""
    dims = {v.shape[-1] for v in vectors.values()}
    if len(dims) > 1:
        raise ValueError(f"all cached vectors must share one dim, got {sorted(dims)}")
    dim = dims.pop() if dims else 0
    with Path(path).open("wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<IIQ", CACHE_VERSION, dim, len(vectors)))
        for key in sorted(vectors):
            encoded = key.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(np.asarray(vectors[key], dtype="<f4").tobytes())


def cache_read(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != CACHE_MAGIC:
        raise DataFormatError(f"{path}: bad cache magic {raw[:4]!r}")
    version, dim, count = struct.unpack_from("<IIQ", raw, 4)
    if version != CACHE_VERSION:
        raise DataFormatError(f"{path}: unsupported cache version {version}")
    offset = 20
    vectors: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (key_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            key = raw[offset : offset + key_len].decode("utf-8")
            if len(raw[offset : offset + key_len]) != key_len:
                raise DataFormatError(f"{path}: truncated cache file")
            offset += key_len
            if len(raw) < offset + 4 * dim:
                raise DataFormatError(f"{path}: truncated cache file")
            vec = np.frombuffer(raw, dtype="<f4", count=dim, offset=offset)
            offset += 4 * dim
            vectors[key] = vec.astype(np.float64)
    except struct.error as exc:
        raise DataFormatError(f"{path}: truncated cache file") from exc
    return vectors


class _StdioTransport:
    def __init__(self, command: list[str]):
        self.proc = subprocess.Popen(
            command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
        )

    def send(self, obj: dict) -> None:
        assert self.proc.stdin is not None
        self.proc.stdin.write(json.dumps(obj) + "\n")
        self.proc.stdin.flush()

    def recv_line(self) -> str:
        assert self.proc.stdout is not None
        line = self.proc.stdout.readline()
        if not line:
            raise TransportError("sidecar closed the stream")
        return line

    def close(self) -> None:
        if self.proc.stdin:
            self.proc.stdin.close()
        self.proc.wait(timeout=10)


class _TcpTransport:
    def __init__(self, host: str, port: int, retries: int = 3):
        last = None
        for attempt in range(retries):
            try:
                self.sock = socket.create_connection((host, port), timeout=30)
                break
            except OSError as exc:
                last = exc
        else:
            raise TransportError(f"cannot reach sidecar at {host}:{port}: {last}", retries=retries)
        self._buf = b""

    def send(self, obj: dict) -> None:
        self.sock.sendall((json.dumps(obj) + "\n").encode("utf-8"))

    def recv_line(self) -> str:
        while b"\n" not in self._buf:
            chunk = self.sock.recv(65536)
            if not chunk:
                raise TransportError("sidecar closed the connection")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line.decode("utf-8")

    def close(self) -> None:
        self.sock.close()


class SidecarEmbedder:
    """Client for the external embedding server (newline-delimited JSON).

    endpoint forms: "host:port" for TCP, or "stdio:<command ...>" to spawn a
    child process. The NOTEMATCH_SIDECAR environment variable overrides the
    configured endpoint.
    """

    kind = "sidecar"

    def __init__(self, endpoint: str, expected_vocab_digest: str | None = None):
        endpoint = os.environ.get("NOTEMATCH_SIDECAR", endpoint)
        if endpoint.startswith("stdio:"):
            self.transport = _StdioTransport(endpoint[len("stdio:") :].split())
        else:
            host, _, port = endpoint.rpartition(":")
            self.transport = _TcpTransport(host or "127.0.0.1", int(port))
        self._pending: dict[str, dict] = {}
        self.handshake = self._request({"op": "hello"}, request_id=None)
        self.dim = int(self.handshake["dim"])
        self.max_len = int(self.handshake["max_len"])
        self.granularities = set(self.handshake["granularities"])
        self.truncation_count = 0
        if expected_vocab_digest and self.handshake["vocab_sha256"] != expected_vocab_digest:
            self.transport.close()
            raise TransportError(
                "sidecar vocabulary digest mismatch: "
                f"{self.handshake['vocab_sha256']} != {expected_vocab_digest}"
            )

    def _request(self, obj: dict, request_id: str | None) -> dict:
        if request_id is not None:
            obj = {**obj, "id": request_id}
        self.transport.send(obj)
        while True:
            if request_id is not None and request_id in self._pending:
                return self._pending.pop(request_id)
            try:
                response = json.loads(self.transport.recv_line())
            except json.JSONDecodeError as exc:
                raise TransportError(f"sidecar sent malformed JSON: {exc}") from exc
            if "error" in response:
                raise TransportError(f"sidecar error: {response['error']}")
            if request_id is None:
                return response
            if response.get("id") == request_id:
                return response
            self._pending[response["id"]] = response  # out-of-order response

    def _embed(self, granularity: str, token_ids) -> dict:
        if granularity not in self.granularities:
            raise TransportError(f"sidecar does not support granularity {granularity!r}")
        return self._request(
            {"op": "embed", "granularity": granularity, "token_ids": [int(t) for t in token_ids]},
            request_id=uuid.uuid4().hex,
        )

    def embed_tokens(self, token_ids) -> np.ndarray:
        rows = np.array(self._embed("token", token_ids)["tokens"], dtype=np.float64)
        self._check_finite(rows)
        return rows

    def embed_cls(self, token_ids) -> np.ndarray:
        vec = np.array(self._embed("cls", token_ids)["cls"], dtype=np.float64)
        self._check_finite(vec)
        return vec

    def embed_document(self, token_ids) -> np.ndarray:
        response = self._embed("document", token_ids)
        if response.get("truncated"):
            self.truncation_count += 1
        vec = np.array(response["doc"], dtype=np.float64)
        self._check_finite(vec)
        return vec

    def tokenize_check(self, sentences: list[str]) -> list[list[int]]:
        response = self._request(
            {"op": "tokenize_check", "sentences": sentences}, request_id=uuid.uuid4().hex
        )
        return response["token_ids"]

    @staticmethod
    def _check_finite(arr: np.ndarray) -> None:
        if not np.isfinite(arr).all():
            raise TransportError("sidecar returned non-finite embedding values")

    def close(self) -> None:
        self.transport.close()


class CacheEmbedder:
    """Backend serving precomputed note/chunk vectors from a cache file.

    It answers by cache key only (no token-level embedding); the pooling
    pipeline queries keys "{note_id}" (document granularity) or
    "{note_id}:{sentence_index}:{chunk_start}".
    """

    kind = "cache"

    def __init__(self, path: str | Path, granularity: str = "token"):
        self.vectors = cache_read(path)
        dims = {v.shape[-1] for v in self.vectors.values()}
        self.dim = dims.pop() if dims else 0
        self.granularity = granularity

    def vector_for_key(self, key: str) -> np.ndarray:
        try:
            return self.vectors[key]
        except KeyError:
            raise DataFormatError(f"cache has no vector for key {key!r}") from None


def make_embedder(spec: dict):
    """Build a backend from an embedder spec dictionary."""
    kind = spec.get("kind", "hash")
    if kind == "hash":
        return HashEmbedder(
            dim=int(spec["dim"]),
            seed=int(spec.get("seed", 0)),
            granularity=spec.get("granularity", "token"),
            max_len=spec.get("max_len"),
        )
    if kind == "cache":
        return CacheEmbedder(spec["path"], granularity=spec.get("granularity", "token"))
    if kind == "sidecar":
        return SidecarEmbedder(spec["endpoint"], spec.get("vocab_sha256"))
    raise ValueError(f"unknown embedder kind {kind!r}")
