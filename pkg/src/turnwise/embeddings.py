"""Embedding data model, the STVE binary store, and embedding providers.

STVE is the bit-exact interchange format between the toolkit and any
embedding exporter::

    magic "STVE" | version u16 | flags u16 | dim u32 | count u64
    per record (sorted by key):
        key length u16 | key UTF-8 | modality u8 (0 vision, 1 text) | dim x f32

All integers and floats are little-endian. The synthetic provider stands in
for a frozen image-text encoder: it hashes its input into a deterministic
unit-norm vector, so identical inputs give bit-identical embeddings across
processes, and it can blend a planted direction into frames falling inside
chosen video intervals (used by end-to-end fixtures).
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Sequence

import numpy as np

from .sampling import timestamp_ms

MAGIC = b"STVE"
FORMAT_VERSION = 1

MODALITY_VISION = "vision"
MODALITY_TEXT = "text"
_MODALITY_CODE = {MODALITY_VISION: 0, MODALITY_TEXT: 1}
_CODE_MODALITY = {code: name for name, code in _MODALITY_CODE.items()}

_HEADER = struct.Struct("<4sHHIQ")
_KEYLEN = struct.Struct("<H")
_MODALITY_BYTE = struct.Struct("<B")


class StoreError(Exception):
    pass


class BadMagic(StoreError):
    pass


class UnsupportedVersion(StoreError):
    pass


class TruncatedRecord(StoreError):
    pass


class DimMismatch(StoreError):
    pass


class SinkFailure(StoreError):
    pass


@dataclass(frozen=True)
class EmbeddingVector:
    """A keyed d-dimensional float32 vector tagged with its modality."""

    key: str
    modality: str
    values: np.ndarray

    def __post_init__(self):
        if self.modality not in _MODALITY_CODE:
            raise ValueError(f"unknown modality {self.modality!r}")
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 1:
            raise ValueError(f"values must be 1-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"non-finite values in embedding {self.key!r}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


class EmbeddingStore:
    """Keyed collection of embedding vectors sharing one dimension."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = int(dim)
        self.entries: dict[str, EmbeddingVector] = {}

    def add(self, vector: EmbeddingVector) -> None:
        if vector.dim != self.dim:
            raise DimMismatch(f"vector {vector.key!r} has dim {vector.dim}, store dim {self.dim}")
        if vector.key in self.entries:
            raise ValueError(f"duplicate key {vector.key!r}")
        self.entries[vector.key] = vector

    def get(self, key: str) -> EmbeddingVector:
        return self.entries[key]

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def __len__(self) -> int:
        return len(self.entries)


def merge_stores(stores: Sequence[EmbeddingStore]) -> EmbeddingStore:
    if not stores:
        raise ValueError("no stores to merge")
    merged = EmbeddingStore(stores[0].dim)
    for store in stores:
        if store.dim != merged.dim:
            raise DimMismatch(f"cannot merge stores of dim {store.dim} and {merged.dim}")
        for vec in store.entries.values():
            merged.add(vec)
    return merged


def write_store(store: EmbeddingStore, sink: BinaryIO) -> int:
    """Serialize the store; returns the byte count written."""
    try:
        written = sink.write(_HEADER.pack(MAGIC, FORMAT_VERSION, 0, store.dim, len(store)))
        for key in sorted(store.entries):
            vec = store.entries[key]
            key_bytes = key.encode("utf-8")
            if len(key_bytes) > 0xFFFF:
                raise ValueError(f"key too long ({len(key_bytes)} bytes)")
            written += sink.write(_KEYLEN.pack(len(key_bytes)))
            written += sink.write(key_bytes)
            written += sink.write(_MODALITY_BYTE.pack(_MODALITY_CODE[vec.modality]))
            written += sink.write(vec.values.astype("<f4", copy=False).tobytes())
    except OSError as exc:
        raise SinkFailure(str(exc)) from exc
    return written


def read_store(source: BinaryIO) -> EmbeddingStore:
    """Inverse of write_store; rejects unknown magic/version and truncation."""
    header = _read_exact(source, _HEADER.size, "header")
    magic, version, _flags, dim, count = _HEADER.unpack(header)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"unsupported version {version}")
    if dim < 1:
        raise DimMismatch(f"invalid dim {dim} in header")
    store = EmbeddingStore(dim)
    previous_key: str | None = None
    for _ in range(count):
        (key_len,) = _KEYLEN.unpack(_read_exact(source, _KEYLEN.size, "key length"))
        key = _read_exact(source, key_len, "key").decode("utf-8")
        if previous_key is not None and key <= previous_key:
            raise StoreError(f"records not sorted: {key!r} after {previous_key!r}")
        previous_key = key
        (mod_code,) = _MODALITY_BYTE.unpack(_read_exact(source, 1, "modality"))
        if mod_code not in _CODE_MODALITY:
            raise StoreError(f"unknown modality code {mod_code} for key {key!r}")
        raw = _read_exact(source, 4 * dim, f"values of {key!r}")
        values = np.frombuffer(raw, dtype="<f4").astype(np.float32)
        store.add(EmbeddingVector(key, _CODE_MODALITY[mod_code], values))
    if source.read(1):
        raise StoreError("trailing data after last record")
    return store


def _read_exact(source: BinaryIO, n: int, what: str) -> bytes:
    data = source.read(n)
    if len(data) != n:
        raise TruncatedRecord(f"truncated while reading {what}: wanted {n}, got {len(data)}")
    return data


# --- join keys between sample plans and stores -------------------------------

def frame_key(video_id: str, timestamp: float) -> str:
    return f"{video_id}:frame:{timestamp_ms(timestamp)}"


def turn_text_key(video_id: str, turn_index: int) -> str:
    return f"{video_id}:text:k={turn_index}"


def fallback_text_key(video_id: str, timestamp: float) -> str:
    return f"{video_id}:text:fb={timestamp_ms(timestamp)}"


def text_key_for_frame(video_id: str, turn_index: int, timestamp: float) -> str:
    from .sampling import FALLBACK_TURN

    if turn_index == FALLBACK_TURN:
        return fallback_text_key(video_id, timestamp)
    return turn_text_key(video_id, turn_index)


# --- providers ----------------------------------------------------------------

@dataclass(frozen=True)
class Injection:
    """Blend a fixed direction into frame embeddings inside one interval."""

    video_id: str
    start: float
    end: float
    direction: np.ndarray
    weight: float = 0.8

    def __post_init__(self):
        direction = np.asarray(self.direction, dtype=np.float64)
        norm = float(np.linalg.norm(direction))
        if not math.isfinite(norm) or norm == 0.0:
            raise ValueError("injection direction must be finite and non-zero")
        object.__setattr__(self, "direction", direction / norm)
        if not 0.0 < self.weight <= 1.0:
            raise ValueError(f"injection weight must be in (0, 1], got {self.weight}")


class EmbeddingProvider:
    """Deterministic stand-in boundary for a frozen image-text encoder."""

    def dim(self) -> int:
        raise NotImplementedError

    def embed_text(self, text: str) -> EmbeddingVector:
        raise NotImplementedError

    def embed_frame(self, video_id: str, timestamp: float) -> EmbeddingVector:
        raise NotImplementedError


class SyntheticProvider(EmbeddingProvider):
    """Hash-based provider: same input, same seed -> bit-identical vector.

    Vectors are unit-norm by default (configurable off). The derivation uses
    a keyed BLAKE2b stream and Box-Muller only, so streams are stable across
    processes and library versions.
    """

    def __init__(
        self,
        seed: int,
        dim: int,
        injections: Iterable[Injection] = (),
        unit_norm: bool = True,
    ):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self._seed_key = (seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
        self._dim = int(dim)
        self._unit_norm = unit_norm
        self._injections: list[Injection] = []
        for inj in injections:
            if inj.direction.shape[0] != dim:
                raise ValueError(
                    f"injection direction dim {inj.direction.shape[0]} != provider dim {dim}"
                )
            self._injections.append(inj)

    def dim(self) -> int:
        return self._dim

    def with_injections(self, injections: Iterable[Injection]) -> "SyntheticProvider":
        seed = int.from_bytes(self._seed_key, "little")
        return SyntheticProvider(seed, self._dim, injections, self._unit_norm)

    def embed_text(self, text: str) -> EmbeddingVector:
        normalized = " ".join(text.split()).lower()
        values = self._hash_vector(b"text\x00" + normalized.encode("utf-8"))
        return EmbeddingVector(f"synth:text:{normalized}", MODALITY_TEXT, values)

    def embed_frame(self, video_id: str, timestamp: float) -> EmbeddingVector:
        ms = timestamp_ms(timestamp)
        payload = f"frame\x00{video_id}\x00{ms}".encode("utf-8")
        values = _hash_normals(self._seed_key, payload, self._dim)
        if self._unit_norm:
            values = values / np.linalg.norm(values)
        for inj in self._injections:
            if inj.video_id == video_id and inj.start <= timestamp <= inj.end:
                values = (1.0 - inj.weight) * values + inj.weight * inj.direction
                if self._unit_norm:
                    values = values / np.linalg.norm(values)
        return EmbeddingVector(frame_key(video_id, timestamp), MODALITY_VISION, values)

    def _hash_vector(self, payload: bytes) -> np.ndarray:
        normals = _hash_normals(self._seed_key, payload, self._dim)
        if self._unit_norm:
            normals = normals / np.linalg.norm(normals)
        return normals.astype(np.float32)


def _hash_normals(seed_key: bytes, payload: bytes, count: int) -> np.ndarray:
    """Standard normals derived from a keyed BLAKE2b stream via Box-Muller."""
    pairs = (count + 1) // 2
    # one 64-byte digest yields 8 uint64 -> 4 uniform pairs -> 8 normals
    blocks = (pairs + 3) // 4
    words: list[int] = []
    for block in range(blocks):
        h = hashlib.blake2b(key=seed_key, digest_size=64)
        h.update(payload)
        h.update(block.to_bytes(4, "little"))
        digest = h.digest()
        words.extend(struct.unpack("<8Q", digest))
    out = np.empty(2 * pairs, dtype=np.float64)
    for i in range(pairs):
        u1 = ((words[2 * i] >> 11) + 1) / (1 << 53)
        u2 = (words[2 * i + 1] >> 11) / (1 << 53)
        radius = math.sqrt(-2.0 * math.log(u1))
        angle = 2.0 * math.pi * u2
        out[2 * i] = radius * math.cos(angle)
        out[2 * i + 1] = radius * math.sin(angle)
    return out[:count]


def synthetic_provider(
    seed: int, dim: int, injections: Iterable[Injection] = (), unit_norm: bool = True
) -> SyntheticProvider:
    return SyntheticProvider(seed, dim, injections, unit_norm)


def store_from_plan(plan, provider: EmbeddingProvider) -> EmbeddingStore:
    """Materialize every embedding a sample plan needs: one vision record per
    frame and one text record per distinct turn (per frame window under the
    fallback)."""
    store = EmbeddingStore(provider.dim())
    for frame in plan.frames:
        fkey = frame_key(plan.video_id, frame.timestamp)
        if fkey not in store:
            vec = provider.embed_frame(plan.video_id, frame.timestamp)
            store.add(EmbeddingVector(fkey, MODALITY_VISION, vec.values))
        tkey = text_key_for_frame(plan.video_id, frame.turn_index, frame.timestamp)
        if tkey not in store:
            vec = provider.embed_text(frame.transcript)
            store.add(EmbeddingVector(tkey, MODALITY_TEXT, vec.values))
    return store
