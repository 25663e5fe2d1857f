"""CVEC binary exchange format for per-token vectors with byte spans.

Layout (little-endian):
    magic "CVEC" | u32 version=1 | u32 dim | u32 sequence count
    per sequence: u16 path length + UTF-8 path | u32 entry count
    per entry:    u16 token length + UTF-8 token | u64 span start |
                  u64 span end | dim x IEEE-754 binary32

A JSONL mirror (one sequence object per line) exists for debugging.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable

import numpy as np

from .errors import (
    BadMagicError,
    NonFiniteVectorError,
    NonMonotoneSpanError,
    TruncatedRecordError,
    VersionMismatchError,
)

MAGIC = b"CVEC"
VERSION = 1


@dataclass(frozen=True)
class VectorEntry:
    token: str
    start: int
    end: int
    vector: tuple[float, ...]  # binary32 values widened to python floats


@dataclass
class VectorSequence:
    file_path: str
    provider: str  # "skipgram" | "external"
    dim: int
    entries: list[VectorEntry] = field(default_factory=list)

    def matrix(self) -> np.ndarray:
        """Entry vectors stacked as a (len, dim) float32 array."""
        if not self.entries:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.array([e.vector for e in self.entries], dtype=np.float32)

    def validate(self) -> None:
        prev = None
        for e in self.entries:
            if len(e.vector) != self.dim:
                raise ValueError(f"entry vector length {len(e.vector)} != dim {self.dim}")
            if not all(math.isfinite(v) for v in e.vector):
                raise ValueError(f"non-finite vector for token {e.token!r}")
            if prev is not None and e.start < prev:
                raise ValueError("entry spans must be monotone non-decreasing")
            prev = e.start


def store_vectors(
    sequences: Iterable[VectorSequence], path: str | Path, fmt: str = "cvec"
) -> None:
    sequences = list(sequences)
    for seq in sequences:
        seq.validate()
    if fmt == "cvec":
        _store_binary(sequences, Path(path))
    elif fmt == "jsonl":
        _store_jsonl(sequences, Path(path))
    else:
        raise ValueError(f"unknown vector format {fmt!r}")


def load_vectors(
    path: str | Path, fmt: str = "cvec", provider: str = "external"
) -> list[VectorSequence]:
    if fmt == "cvec":
        return _load_binary(Path(path), provider)
    if fmt == "jsonl":
        return _load_jsonl(Path(path), provider)
    raise ValueError(f"unknown vector format {fmt!r}")


# -- binary form -------------------------------------------------------------

def _store_binary(sequences: list[VectorSequence], path: Path) -> None:
    dim = sequences[0].dim if sequences else 0
    if any(s.dim != dim for s in sequences):
        raise ValueError("all sequences in one file must share a dimension")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<III", VERSION, dim, len(sequences)))
        for seq in sequences:
            _write_str16(fh, seq.file_path)
            fh.write(struct.pack("<I", len(seq.entries)))
            for e in seq.entries:
                _write_str16(fh, e.token)
                fh.write(struct.pack("<QQ", e.start, e.end))
                fh.write(np.asarray(e.vector, dtype="<f4").tobytes())


def _write_str16(fh: BinaryIO, text: str) -> None:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("string too long for u16 length prefix")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedRecordError(f"truncated {what}", self.pos)
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u16(self, what: str) -> int:
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what: str) -> int:
        return struct.unpack("<Q", self.take(8, what))[0]

    def str16(self, what: str) -> str:
        return self.take(self.u16(what), what).decode("utf-8")


def _load_binary(path: Path, provider: str) -> list[VectorSequence]:
    r = _Reader(path.read_bytes())
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    version = r.u32("version")
    if version != VERSION:
        raise VersionMismatchError(f"unsupported version {version}", 4)
    dim = r.u32("dim header")
    seq_count = r.u32("sequence count")
    sequences = []
    for _ in range(seq_count):
        file_path = r.str16("sequence path")
        entry_count = r.u32("entry count")
        entries = []
        prev_start = None
        for _ in range(entry_count):
            token = r.str16("entry token")
            span_offset = r.pos
            start = r.u64("span start")
            end = r.u64("span end")
            vec_offset = r.pos
            raw = r.take(4 * dim, "entry vector")
            vector = np.frombuffer(raw, dtype="<f4")
            if not np.all(np.isfinite(vector)):
                raise NonFiniteVectorError(
                    f"non-finite vector for token {token!r}", vec_offset
                )
            if prev_start is not None and start < prev_start:
                raise NonMonotoneSpanError(
                    f"span start {start} decreases after {prev_start}", span_offset
                )
            prev_start = start
            entries.append(
                VectorEntry(token, start, end, tuple(float(v) for v in vector))
            )
        sequences.append(VectorSequence(file_path, provider, dim, entries))
    return sequences


# -- JSONL mirror -------------------------------------------------------------

def _store_jsonl(sequences: list[VectorSequence], path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for seq in sequences:
            rec = {
                "path": seq.file_path,
                "dim": seq.dim,
                "entries": [
                    [e.token, e.start, e.end, list(e.vector)] for e in seq.entries
                ],
            }
            fh.write(json.dumps(rec, separators=(",", ":")))
            fh.write("\n")


def _load_jsonl(path: Path, provider: str) -> list[VectorSequence]:
    sequences = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            entries = [
                VectorEntry(
                    tok,
                    s,
                    e,
                    tuple(float(np.float32(v)) for v in vec),
                )
                for tok, s, e, vec in rec["entries"]
            ]
            seq = VectorSequence(rec["path"], provider, rec["dim"], entries)
            seq.validate()
            sequences.append(seq)
    return sequences
