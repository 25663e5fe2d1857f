"""Token embeddings: from-scratch skip-gram with negative sampling, plus
mapping of token streams to vector sequences.

Externally computed vectors (e.g. from a transformer encoder) enter
through the CVEC exchange format in vulnhound.cvec; this module owns the
trained-from-corpus route.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .cvec import VectorEntry, VectorSequence, load_vectors, store_vectors  # noqa: F401
from .errors import DegenerateCorpusError, ModelFormatError
from .pylex import Token, TokenKind, TokenStream

UNK_TOKEN = "<unk>"

TABLE_MAGIC = b"CVTB"
TABLE_VERSION = 1


@dataclass(frozen=True)
class SgConfig:
    dim: int = 100
    window: int = 5  # context radius
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    min_learning_rate: float = 1e-4
    min_count: int = 2
    seed: int = 0
    table_size: int = 1_000_000

    def __post_init__(self):
        if min(self.dim, self.window, self.negatives, self.epochs, self.min_count,
               self.table_size) < 1:
            raise ValueError("all skip-gram sizes must be positive")
        if self.learning_rate <= 0 or self.min_learning_rate <= 0:
            raise ValueError("learning rates must be positive")


@dataclass
class EmbeddingTable:
    dim: int
    vocab: dict[str, int]  # token text -> row; UNK_TOKEN is always row 0
    input_vectors: np.ndarray  # (|vocab|, dim) float64, center representations
    output_vectors: np.ndarray  # (|vocab|, dim) float64, context representations

    def index(self, token: str) -> int:
        return self.vocab.get(token, self.vocab[UNK_TOKEN])

    def vector(self, token: str) -> np.ndarray:
        return self.input_vectors[self.index(token)]


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def pair_gradients(
    v_center: np.ndarray, u_context: np.ndarray, u_negatives: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Loss and gradients for one (center, context, negatives) update.

    Negative-sampling objective for the pair:
        L = -log s(u_o . v_c) - sum_j log s(-u_j . v_c)
    Returns (loss, dL/dv_c, dL/du_o, dL/du_negatives).
    """
    pos_score = _sigmoid(u_context @ v_center)
    neg_scores = _sigmoid(u_negatives @ v_center)
    loss = -np.log(pos_score) - np.sum(np.log1p(-neg_scores))
    g_pos = pos_score - 1.0
    grad_center = g_pos * u_context + neg_scores @ u_negatives
    grad_context = g_pos * v_center
    grad_negatives = np.outer(neg_scores, v_center)
    return float(loss), grad_center, grad_context, grad_negatives


def _build_vocab(
    sentences: list[list[str]], min_count: int
) -> tuple[dict[str, int], np.ndarray]:
    counts: dict[str, int] = {}
    for sent in sentences:
        for tok in sent:
            counts[tok] = counts.get(tok, 0) + 1
    kept = [(t, c) for t, c in counts.items() if c >= min_count]
    # frequency-descending, text tie-break, for deterministic indices
    kept.sort(key=lambda tc: (-tc[1], tc[0]))
    vocab = {UNK_TOKEN: 0}
    freqs = [sum(c for t, c in counts.items() if c < min_count)]
    for t, c in kept:
        vocab[t] = len(vocab)
        freqs.append(c)
    return vocab, np.array(freqs, dtype=np.float64)


def _sampling_table(freqs: np.ndarray, size: int) -> np.ndarray:
    weights = freqs ** 0.75
    if weights.sum() == 0:
        weights = np.ones_like(weights)
    probs = weights / weights.sum()
    counts = np.floor(probs * size).astype(np.int64)
    counts[0] = max(counts[0], 0)
    table = np.repeat(np.arange(len(freqs)), counts)
    if len(table) < size:  # pad with the most frequent row
        pad = np.full(size - len(table), int(np.argmax(freqs)), dtype=np.int64)
        table = np.concatenate([table, pad])
    return table[:size]


def train_skipgram(
    corpus: Iterable[TokenStream | Sequence[str]], config: SgConfig = SgConfig()
) -> EmbeddingTable:
    """Train skip-gram embeddings with negative sampling by plain SGD.

    Deterministic for a fixed seed: single-threaded, fixed iteration
    order, one PCG64 stream for initialization and negative draws.
    Learning rate decays linearly to config.min_learning_rate.
    """
    sentences = []
    for item in corpus:
        if isinstance(item, TokenStream):
            sentences.append([t.text for t in item.tokens])
        else:
            sentences.append(list(item))
    vocab, freqs = _build_vocab(sentences, config.min_count)
    if len(vocab) - 1 < 2:
        raise DegenerateCorpusError(
            f"vocabulary has {len(vocab) - 1} tokens after min-count filtering; "
            "need at least 2"
        )
    ids = [[vocab.get(t, 0) for t in sent] for sent in sentences]

    rng = np.random.default_rng(config.seed)
    table = _sampling_table(freqs, config.table_size)
    vsize = len(vocab)
    input_vectors = (rng.random((vsize, config.dim)) - 0.5) / config.dim
    output_vectors = np.zeros((vsize, config.dim))

    pairs_per_epoch = 0
    for sent in ids:
        for i in range(len(sent)):
            lo = max(0, i - config.window)
            hi = min(len(sent), i + config.window + 1)
            pairs_per_epoch += hi - lo - 1
    total_pairs = max(1, pairs_per_epoch * config.epochs)
    lr_span = config.learning_rate - config.min_learning_rate

    seen = 0
    for _ in range(config.epochs):
        for sent in ids:
            for i, center in enumerate(sent):
                lo = max(0, i - config.window)
                hi = min(len(sent), i + config.window + 1)
                for j in range(lo, hi):
                    if j == i:
                        continue
                    context = sent[j]
                    lr = config.learning_rate - lr_span * (seen / total_pairs)
                    seen += 1
                    negs = table[rng.integers(0, len(table), config.negatives)]
                    # a negative colliding with the true context is a no-op
                    # direction; re-draw once, then keep whatever comes
                    if np.any(negs == context):
                        redraw = table[rng.integers(0, len(table), config.negatives)]
                        negs = np.where(negs == context, redraw, negs)
                    v_c = input_vectors[center]
                    u_o = output_vectors[context]
                    u_n = output_vectors[negs]
                    _, g_c, g_o, g_n = pair_gradients(v_c, u_o, u_n)
                    input_vectors[center] = v_c - lr * g_c
                    output_vectors[context] = u_o - lr * g_o
                    for k, neg in enumerate(negs):
                        output_vectors[neg] -= lr * g_n[k]
    return EmbeddingTable(config.dim, vocab, input_vectors, output_vectors)


def embed_stream(stream: TokenStream, table: EmbeddingTable, file_path: str = "") -> VectorSequence:
    """Map each token to its center vector (binary32), UNK for OOV."""
    entries = [
        VectorEntry(
            tok.text,
            tok.start,
            tok.end,
            tuple(float(v) for v in table.vector(tok.text).astype(np.float32)),
        )
        for tok in stream.tokens
    ]
    return VectorSequence(file_path, "skipgram", table.dim, entries)


def stream_from_sequence(seq: VectorSequence) -> TokenStream:
    """View an external vector sequence as a token stream.

    Lets externally tokenized files share the labeling and windowing
    logic: only token texts and byte spans matter there.
    """
    tokens = [
        Token(e.token, TokenKind.IDENTIFIER, e.start, e.end) for e in seq.entries
    ]
    source_len = max((e.end for e in seq.entries), default=0)
    return TokenStream(tokens=tokens, source_len=source_len)


# -- table persistence --------------------------------------------------------

def store_table(table: EmbeddingTable, path: str | Path) -> None:
    """Persist a trained table: CVEC string/number conventions plus a
    vocabulary section, binary64 vectors (training precision)."""
    with open(path, "wb") as fh:
        fh.write(TABLE_MAGIC)
        fh.write(struct.pack("<III", TABLE_VERSION, table.dim, len(table.vocab)))
        by_index = sorted(table.vocab.items(), key=lambda kv: kv[1])
        for token, _ in by_index:
            raw = token.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        fh.write(np.ascontiguousarray(table.input_vectors, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(table.output_vectors, dtype="<f8").tobytes())


def load_table(path: str | Path) -> EmbeddingTable:
    data = Path(path).read_bytes()
    if data[:4] != TABLE_MAGIC:
        raise ModelFormatError(f"bad table magic {data[:4]!r}")
    version, dim, vsize = struct.unpack("<III", data[4:16])
    if version != TABLE_VERSION:
        raise ModelFormatError(f"unsupported table version {version}")
    pos = 16
    vocab = {}
    for i in range(vsize):
        (tlen,) = struct.unpack("<H", data[pos : pos + 2])
        pos += 2
        vocab[data[pos : pos + tlen].decode("utf-8")] = i
        pos += tlen
    want = vsize * dim * 8
    if len(data) - pos != 2 * want:
        raise ModelFormatError("table vector block has wrong size")
    input_vectors = np.frombuffer(data[pos : pos + want], dtype="<f8").reshape(
        vsize, dim
    ).copy()
    output_vectors = np.frombuffer(data[pos + want :], dtype="<f8").reshape(
        vsize, dim
    ).copy()
    if UNK_TOKEN not in vocab:
        raise ModelFormatError("table lacks the UNK row")
    return EmbeddingTable(dim, vocab, input_vectors, output_vectors)
