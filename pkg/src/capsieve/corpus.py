"""Caption corpora and embedding matrices, with bit-exact file formats.

Corpus files are JSONL, one record per line:

    {"id": str, "text": str, "nsfw": bool, "text_in_image": bool|null,
     "meta": {str: str, ...}}

Embedding files are a single binary blob so ids and rows cannot drift
apart:

    offset 0   magic b"EMB1"
    offset 4   dim   as little-endian uint32
    offset 8   count as little-endian uint64
    offset 16  count * dim little-endian float32 values, row-major
    then       one JSON string per line (LF): the row ids, in row order

Rows are stored exactly as produced by the encoder (no pre-normalization);
cosine normalization happens at computation time. All-zero rows are
rejected at load because cosine similarity is undefined for them, and
non-finite values are rejected because every downstream statistic assumes
finite scores. NSFW and text-in-image flags are trusted inputs produced by
upstream tooling; this module never recomputes them.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .errors import FormatError, MissingKeyError, ValidationError

EMBEDDING_MAGIC = b"EMB1"
_HEADER_SIZE = 4 + 4 + 8  # magic + u32 dim + u64 count
_F32LE = np.dtype("<f4")


@dataclass(frozen=True)
class InstanceRecord:
    """One corpus item: caption text plus ingested safety/OCR flags."""

    id: str
    text: str
    nsfw: bool = False
    text_in_image: bool | None = None
    meta: Mapping[str, str] = field(default_factory=dict)


@dataclass
class Corpus:
    """Ordered, uniquely-keyed caption records; immutable after load."""

    records: list[InstanceRecord]
    index: dict[str, int] = field(init=False)

    def __post_init__(self):
        index: dict[str, int] = {}
        for pos, record in enumerate(self.records):
            if record.id in index:
                raise ValidationError(f"duplicate instance id {record.id!r}")
            index[record.id] = pos
        self.index = index

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[InstanceRecord]:
        return iter(self.records)

    def __contains__(self, instance_id: str) -> bool:
        return instance_id in self.index

    def get(self, instance_id: str) -> InstanceRecord:
        try:
            return self.records[self.index[instance_id]]
        except KeyError:
            raise MissingKeyError(f"unknown instance id {instance_id!r}") from None


def load_corpus(path) -> Corpus:
    """Stream-load a JSONL corpus, rejecting duplicate ids with line numbers."""
    path = Path(path)
    records: list[InstanceRecord] = []
    seen: dict[str, int] = {}
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                row = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON ({exc.msg})", path=path, line=lineno) from exc
            try:
                rid = row["id"]
                text = row["text"]
            except KeyError as exc:
                raise FormatError(f"missing field {exc.args[0]!r}", path=path, line=lineno) from exc
            if rid in seen:
                raise ValidationError(
                    f"duplicate instance id {rid!r} (first seen on line {seen[rid]})",
                    path=path,
                    line=lineno,
                )
            seen[rid] = lineno
            records.append(
                InstanceRecord(
                    id=rid,
                    text=text,
                    nsfw=bool(row.get("nsfw", False)),
                    text_in_image=row.get("text_in_image"),
                    meta=dict(row.get("meta") or {}),
                )
            )
    return Corpus(records)


def save_corpus(corpus: Corpus, path) -> None:
    """Write a corpus to JSONL with a fixed key order (byte-reproducible)."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for r in corpus:
            row = {
                "id": r.id,
                "text": r.text,
                "nsfw": r.nsfw,
                "text_in_image": r.text_in_image,
                "meta": dict(r.meta),
            }
            fh.write(json.dumps(row, ensure_ascii=False))
            fh.write("\n")


@dataclass
class EmbeddingMatrix:
    """Dense float32 vectors keyed by id; rows align 1:1 with ids."""

    rows: np.ndarray  # (count, dim) float32
    ids: list[str]
    index: dict[str, int] = field(init=False)

    def __post_init__(self):
        rows = np.ascontiguousarray(self.rows, dtype=np.float32)
        if rows.ndim != 2:
            raise ValidationError(f"rows must be 2-D, got shape {rows.shape}")
        self.rows = rows
        if len(self.ids) != rows.shape[0]:
            raise ValidationError(
                f"{len(self.ids)} ids for {rows.shape[0]} rows; they must align 1:1"
            )
        index: dict[str, int] = {}
        for pos, rid in enumerate(self.ids):
            if rid in index:
                raise ValidationError(f"duplicate embedding id {rid!r}")
            index[rid] = pos
        self.index = index
        if not np.isfinite(rows).all():
            bad = int(np.argwhere(~np.isfinite(rows).all(axis=1))[0][0])
            raise ValidationError(f"non-finite values in row for id {self.ids[bad]!r}")
        if rows.shape[0]:
            zero = ~rows.any(axis=1)
            if zero.any():
                bad = int(np.argmax(zero))
                raise ValidationError(f"all-zero vector for id {self.ids[bad]!r}")

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    @property
    def count(self) -> int:
        return int(self.rows.shape[0])

    def __contains__(self, rid: str) -> bool:
        return rid in self.index


def get_embedding(matrix: EmbeddingMatrix, rid: str) -> np.ndarray:
    """Return the row for `rid`, bit-identical to the file it came from."""
    try:
        return matrix.rows[matrix.index[rid]]
    except KeyError:
        raise MissingKeyError(f"unknown embedding id {rid!r}") from None


def load_embeddings(path) -> EmbeddingMatrix:
    """Load the binary embedding format, validating header arithmetic."""
    path = Path(path)
    with path.open("rb") as fh:
        header = fh.read(_HEADER_SIZE)
        if len(header) < _HEADER_SIZE or header[:4] != EMBEDDING_MAGIC:
            raise FormatError(
                f"bad magic: expected {EMBEDDING_MAGIC!r}, got {header[:4]!r}", path=path
            )
        dim = int(np.frombuffer(header, dtype="<u4", count=1, offset=4)[0])
        count = int(np.frombuffer(header, dtype="<u8", count=1, offset=8)[0])
        if dim == 0:
            raise FormatError("header declares dim = 0", path=path)
        payload_size = count * dim * 4
        payload = fh.read(payload_size)
        if len(payload) != payload_size:
            raise FormatError(
                f"payload truncated: expected {payload_size} bytes for "
                f"{count}x{dim} float32, got {len(payload)}",
                path=path,
            )
        trailer = fh.read().decode("utf-8")
    ids: list[str] = []
    for lineno, raw in enumerate(trailer.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rid = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid id trailer JSON ({exc.msg})", path=path) from exc
        if not isinstance(rid, str):
            raise FormatError(f"id trailer entry {lineno} is not a string", path=path)
        ids.append(rid)
    if len(ids) != count:
        raise FormatError(
            f"id trailer has {len(ids)} entries but header declares {count} rows", path=path
        )
    rows = np.frombuffer(payload, dtype=_F32LE).astype(np.float32).reshape(count, dim)
    return EmbeddingMatrix(rows=rows, ids=ids)


def write_embeddings(matrix: EmbeddingMatrix, path) -> None:
    """Write the binary embedding format; load(write(m)) is bit-exact."""
    path = Path(path)
    buf = io.BytesIO()
    buf.write(EMBEDDING_MAGIC)
    buf.write(np.uint32(matrix.dim).astype("<u4").tobytes())
    buf.write(np.uint64(matrix.count).astype("<u8").tobytes())
    buf.write(np.ascontiguousarray(matrix.rows, dtype=_F32LE).tobytes())
    for rid in matrix.ids:
        buf.write(json.dumps(rid, ensure_ascii=False).encode("utf-8"))
        buf.write(b"\n")
    path.write_bytes(buf.getvalue())
