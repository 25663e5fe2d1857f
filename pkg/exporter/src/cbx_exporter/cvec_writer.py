"""Minimal standalone writer for the CVEC vector exchange format.

Layout (little-endian):
    magic "CVEC" | u32 version=1 | u32 dim | u32 sequence count
    per sequence: u16 path length + UTF-8 path | u32 entry count
    per entry:    u16 token length + UTF-8 token | u64 span start |
                  u64 span end | dim x IEEE-754 binary32
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np

MAGIC = b"CVEC"
VERSION = 1


@dataclass(frozen=True)
class Entry:
    token: str
    start: int
    end: int
    vector: tuple[float, ...]


@dataclass
class Sequence_:
    file_path: str
    dim: int
    entries: list[Entry] = field(default_factory=list)

    def validate(self) -> None:
        prev = None
        for e in self.entries:
            if len(e.vector) != self.dim:
                raise ValueError(
                    f"entry vector length {len(e.vector)} != dim {self.dim}"
                )
            if not all(math.isfinite(v) for v in e.vector):
                raise ValueError(f"non-finite vector for token {e.token!r}")
            if e.end < e.start or e.start < 0:
                raise ValueError(f"bad span ({e.start}, {e.end})")
            if prev is not None and e.start < prev:
                raise ValueError("entry spans must be monotone non-decreasing")
            prev = e.start


def _write_str16(fh: BinaryIO, text: str) -> None:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("string too long for u16 length prefix")
    fh.write(struct.pack("<H", len(raw)))
    fh.write(raw)


def write_cvec(sequences: Iterable[Sequence_], path: str | Path) -> None:
    sequences = list(sequences)
    for seq in sequences:
        seq.validate()
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
