"""Embedding ingest, validation and splitting.

Binary embedding file layout (little-endian), extension ``.gemb``:

    magic   4 bytes  b"GEMB"
    version u32      currently 1
    dim     u32      vector dimension D
    count   u64      number of records
    flags   u32      bit 0: per-record labels present
    records count times:
        label  i32   only when flags bit 0 is set; -1 means unlabeled/OOD
        vector f32 x dim

Vectors are stored as float32 and kept as float32 in memory; fitting code
promotes to float64. Split manifests are JSON documents with keys "name",
"id_train", "id_test", "ood_test" (arrays of record indices) and an optional
"class_names" object mapping class index to display name.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import (
    BadMagicError,
    DataValidationError,
    EmptySetError,
    InputError,
    NonFiniteValueError,
    TruncatedPayloadError,
    VersionMismatchError,
)

MAGIC = b"GEMB"
VERSION = 1
FLAG_LABELS = 0x1

_HEADER = struct.Struct("<4sIIQI")

OOD_LABEL = -1


@dataclass(frozen=True)
class EmbeddingRecord:
    """One labeled feature vector. label -1 marks unlabeled/OOD data."""

    label: int
    vector: np.ndarray


@dataclass(frozen=True)
class EmbeddingSet:
    """Immutable set of labeled embeddings.

    labels is int32 (N,), vectors float32 (N, D). class_names optionally maps
    class index to a display name. label_map records the original->dense
    class relabeling applied by apply_split, when any.
    """

    dim: int
    labels: np.ndarray
    vectors: np.ndarray
    class_names: dict[int, str] | None = None
    label_map: dict[int, int] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.dim <= 0:
            raise DataValidationError(f"dim must be positive, got {self.dim}")
        if self.vectors.ndim != 2 or self.vectors.shape[1] != self.dim:
            raise DataValidationError(
                f"vectors must be (N, {self.dim}), got {self.vectors.shape}"
            )
        if self.labels.shape != (self.vectors.shape[0],):
            raise DataValidationError("labels and vectors disagree on record count")
        self.labels.setflags(write=False)
        self.vectors.setflags(write=False)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def record(self, i: int) -> EmbeddingRecord:
        return EmbeddingRecord(int(self.labels[i]), self.vectors[i])

    def records(self) -> Iterator[EmbeddingRecord]:
        for i in range(len(self)):
            yield self.record(i)

    @property
    def class_count(self) -> int:
        """Number of distinct non-OOD classes present."""
        labeled = self.labels[self.labels >= 0]
        return 0 if labeled.size == 0 else int(labeled.max()) + 1

    def class_indices(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)


def make_embedding_set(
    vectors: np.ndarray,
    labels: np.ndarray | None = None,
    class_names: dict[int, str] | None = None,
) -> EmbeddingSet:
    """Build an EmbeddingSet from arrays, normalizing dtypes and validating."""
    vectors = np.ascontiguousarray(vectors, dtype=np.float32)
    if vectors.ndim != 2:
        raise DataValidationError("vectors must be a 2-D array")
    n = vectors.shape[0]
    if labels is None:
        labels = np.full(n, OOD_LABEL, dtype=np.int32)
    else:
        labels = np.ascontiguousarray(labels, dtype=np.int32)
    _check_finite(vectors)
    return EmbeddingSet(dim=vectors.shape[1], labels=labels, vectors=vectors,
                        class_names=class_names)


def _check_finite(vectors: np.ndarray) -> None:
    finite = np.isfinite(vectors).all(axis=1)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise NonFiniteValueError(f"non-finite value at record {bad}")


def load_embeddings(path: str | Path) -> EmbeddingSet:
    """Read a .gemb file, validating header and payload.

    Raises distinct errors for: missing file, bad magic, unsupported version,
    truncated/oversized payload, empty set, non-finite components.
    """
    path = Path(path)
    if not path.is_file():
        raise InputError(f"embeddings file not found: {path}")
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: file shorter than header")
    magic, version, dim, count, flags = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatchError(f"{path}: unsupported version {version}")
    if dim == 0:
        raise DataValidationError(f"{path}: dim must be positive")
    if count == 0:
        raise EmptySetError(f"{path}: empty set")

    labeled = bool(flags & FLAG_LABELS)
    payload = data[_HEADER.size:]
    if labeled:
        rec_dtype = np.dtype([("label", "<i4"), ("vector", "<f4", (dim,))])
    else:
        rec_dtype = np.dtype([("vector", "<f4", (dim,))])
    expected = count * rec_dtype.itemsize
    if len(payload) != expected:
        raise TruncatedPayloadError(
            f"{path}: payload is {len(payload)} bytes, header promises {expected}"
        )
    records = np.frombuffer(payload, dtype=rec_dtype, count=count)
    vectors = np.ascontiguousarray(records["vector"])
    if labeled:
        labels = np.ascontiguousarray(records["label"])
    else:
        labels = np.full(count, OOD_LABEL, dtype=np.int32)
    _check_finite(vectors)
    return EmbeddingSet(dim=int(dim), labels=labels, vectors=vectors)


def write_embeddings(path: str | Path, embeddings: EmbeddingSet,
                     with_labels: bool = True) -> None:
    """Write a .gemb file. Round-trips byte-identically for a fixed set."""
    path = Path(path)
    n = len(embeddings)
    flags = FLAG_LABELS if with_labels else 0
    header = _HEADER.pack(MAGIC, VERSION, embeddings.dim, n, flags)
    with open(path, "wb") as fh:
        fh.write(header)
        if with_labels:
            rec_dtype = np.dtype([("label", "<i4"), ("vector", "<f4", (embeddings.dim,))])
            out = np.empty(n, dtype=rec_dtype)
            out["label"] = embeddings.labels
            out["vector"] = embeddings.vectors
            fh.write(out.tobytes())
        else:
            fh.write(np.ascontiguousarray(embeddings.vectors, dtype="<f4").tobytes())


@dataclass(frozen=True)
class SplitManifest:
    """Index lists defining one ID/OOD experiment split."""

    name: str
    id_train: tuple[int, ...]
    id_test: tuple[int, ...]
    ood_test: tuple[int, ...]
    class_names: dict[int, str] | None = None


def load_manifest(path: str | Path) -> SplitManifest:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataValidationError(f"{path}: invalid JSON ({exc})") from exc
    try:
        names = doc.get("class_names")
        if names is not None:
            names = {int(k): str(v) for k, v in names.items()}
        return SplitManifest(
            name=str(doc["name"]),
            id_train=tuple(int(i) for i in doc["id_train"]),
            id_test=tuple(int(i) for i in doc["id_test"]),
            ood_test=tuple(int(i) for i in doc["ood_test"]),
            class_names=names,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataValidationError(f"{path}: malformed manifest ({exc})") from exc


def save_manifest(path: str | Path, manifest: SplitManifest) -> None:
    doc: dict = {
        "name": manifest.name,
        "id_train": list(manifest.id_train),
        "id_test": list(manifest.id_test),
        "ood_test": list(manifest.ood_test),
    }
    if manifest.class_names is not None:
        doc["class_names"] = {str(k): v for k, v in sorted(manifest.class_names.items())}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def apply_split(
    embeddings: EmbeddingSet, manifest: SplitManifest
) -> tuple[EmbeddingSet, EmbeddingSet, EmbeddingSet]:
    """Carve (id_train, id_test, ood_test) out of one embedding set.

    ID classes are relabeled to a dense 0..K-1 range, ascending in original
    class index; the mapping is recorded on both ID sets. OOD labels are
    forced to -1. Vectors are passed through bit-exactly.
    """
    n = len(embeddings)
    lists = {
        "id_train": np.asarray(manifest.id_train, dtype=np.int64),
        "id_test": np.asarray(manifest.id_test, dtype=np.int64),
        "ood_test": np.asarray(manifest.ood_test, dtype=np.int64),
    }
    for name, idx in lists.items():
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise DataValidationError(
                f"manifest {name} index out of bounds for {n}-record set"
            )
    seen: set[int] = set()
    for name, idx in lists.items():
        dupes = seen.intersection(idx.tolist())
        if dupes or len(set(idx.tolist())) != idx.size:
            raise DataValidationError(f"manifest lists overlap (near {name})")
        seen.update(idx.tolist())
    if lists["id_train"].size == 0:
        raise DataValidationError("manifest id_train is empty")

    train_labels = embeddings.labels[lists["id_train"]]
    test_labels = embeddings.labels[lists["id_test"]]
    if (train_labels < 0).any() or (test_labels < 0).any():
        raise DataValidationError("ID lists reference unlabeled (-1) records")

    id_classes = sorted(set(train_labels.tolist()) | set(test_labels.tolist()))
    train_counts = {c: int((train_labels == c).sum()) for c in id_classes}
    missing = [c for c in id_classes if train_counts[c] == 0]
    if missing:
        raise DataValidationError(f"class not in train: {missing}")
    thin = [c for c in id_classes if train_counts[c] < 2]
    if thin:
        raise DataValidationError(
            f"ID classes with fewer than 2 train records: {thin}"
        )

    label_map = {orig: dense for dense, orig in enumerate(id_classes)}
    names = None
    source_names = manifest.class_names or embeddings.class_names
    if source_names:
        names = {label_map[c]: source_names[c] for c in id_classes if c in source_names}

    def _subset(idx: np.ndarray, relabel: bool) -> EmbeddingSet:
        vecs = embeddings.vectors[idx]
        if relabel:
            labels = np.array([label_map[int(c)] for c in embeddings.labels[idx]],
                              dtype=np.int32)
            return EmbeddingSet(embeddings.dim, labels, vecs,
                                class_names=names, label_map=dict(label_map))
        labels = np.full(idx.size, OOD_LABEL, dtype=np.int32)
        return EmbeddingSet(embeddings.dim, labels, vecs)

    return (
        _subset(lists["id_train"], relabel=True),
        _subset(lists["id_test"], relabel=True),
        _subset(lists["ood_test"], relabel=False),
    )
