"""Vector providers: turn labeled windows into model input matrices.

Two routes exist. The skip-gram route looks token texts up in a trained
EmbeddingTable; the external route slices pre-computed per-file vector
sequences (CVEC) by window position, so the two routes share labeling
and windowing untouched.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .cvec import VectorSequence
from .dataset import LabeledWindow
from .embed import EmbeddingTable
from .errors import VulnhoundError


class TableProvider:
    name = "skipgram"

    def __init__(self, table: EmbeddingTable):
        self.table = table
        # narrowed once so training sees exactly the stored binary32 values
        self._vectors = table.input_vectors.astype(np.float32).astype(np.float64)

    @property
    def dim(self) -> int:
        return self.table.dim

    def window_vectors(self, window: LabeledWindow) -> np.ndarray:
        idx = [self.table.index(t) for t in window.tokens]
        return self._vectors[idx]


class SequenceProvider:
    name = "external"

    def __init__(self, sequences: Sequence[VectorSequence]):
        if not sequences:
            raise VulnhoundError("no vector sequences supplied")
        dims = {s.dim for s in sequences}
        if len(dims) != 1:
            raise VulnhoundError(f"mixed vector dimensions {sorted(dims)}")
        self._dim = dims.pop()
        self.by_path = {s.file_path: s for s in sequences}

    @property
    def dim(self) -> int:
        return self._dim

    def window_vectors(self, window: LabeledWindow) -> np.ndarray:
        seq = self.by_path.get(window.file_path)
        if seq is None:
            raise VulnhoundError(f"no vectors for file {window.file_path!r}")
        entries = seq.entries[
            window.start_index : window.start_index + len(window.tokens)
        ]
        if len(entries) != len(window.tokens):
            raise VulnhoundError(
                f"vector sequence for {window.file_path!r} shorter than window"
            )
        for entry, span in zip(entries, window.token_spans):
            if (entry.start, entry.end) != span:
                raise VulnhoundError(
                    f"span mismatch in {window.file_path!r}: window {span}, "
                    f"vectors ({entry.start}, {entry.end})"
                )
        return np.array([e.vector for e in entries], dtype=np.float64)


def windows_to_arrays(
    windows: Sequence[LabeledWindow], provider
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Padded (B, window_len, dim) inputs, mask, and labels for training."""
    if not windows:
        raise VulnhoundError("no windows to vectorize")
    full_len = windows[0].full_len
    B = len(windows)
    X = np.zeros((B, full_len, provider.dim))
    mask = np.zeros((B, full_len), dtype=bool)
    labels = np.zeros(B)
    for k, w in enumerate(windows):
        vecs = provider.window_vectors(w)
        X[k, : len(vecs)] = vecs
        mask[k, : len(vecs)] = True
        labels[k] = w.label
    return X, mask, labels
