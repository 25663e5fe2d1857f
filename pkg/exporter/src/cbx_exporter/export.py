"""Run a pre-trained code transformer over Python files and emit CVEC vectors.

Each file is subtokenized with the checkpoint's fast tokenizer, encoded with
the transformer in eval mode, and written out as one CVEC sequence holding
the last-hidden-state vector plus the byte span of every subtoken. Files
longer than the context window are split into overlapping chunks; each
position keeps the vector from the chunk where it sits farthest from a
chunk edge, so every vector has the best available context.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from transformers import AutoModel, AutoTokenizer

from .cvec_writer import Entry, Sequence_, write_cvec

DEFAULT_MODEL = "microsoft/codebert-base"


class CheckpointUnavailableError(RuntimeError):
    """The requested checkpoint could not be resolved."""


@dataclass
class ExportJob:
    inputs: list[str]
    out_path: str
    model_id: str = DEFAULT_MODEL
    max_len: int = 512
    overlap: int = 64
    device: str = "cpu"
    offline: bool = False

    def __post_init__(self) -> None:
        if self.max_len < 3:
            raise ValueError("max_len must leave room for content subtokens")
        if not 0 <= self.overlap < self.max_len - 2:
            raise ValueError("overlap must be smaller than the content length")


def load_checkpoint(model_id: str, offline: bool = False, device: str = "cpu"):
    try:
        tokenizer = AutoTokenizer.from_pretrained(
            model_id, use_fast=True, local_files_only=offline
        )
        model = AutoModel.from_pretrained(model_id, local_files_only=offline)
    except Exception as exc:
        raise CheckpointUnavailableError(
            f"cannot resolve checkpoint {model_id!r}: {exc}"
        ) from exc
    if not tokenizer.is_fast:
        raise CheckpointUnavailableError(
            f"checkpoint {model_id!r} has no fast tokenizer (offset mapping needed)"
        )
    model.eval()
    model.to(device)
    return tokenizer, model


def checkpoint_hash(model) -> str:
    """SHA-256 over the model weights, stable across load paths."""
    digest = hashlib.sha256()
    state = model.state_dict()
    for name in sorted(state):
        digest.update(name.encode("utf-8"))
        digest.update(state[name].detach().cpu().numpy().tobytes())
    return digest.hexdigest()


def _byte_prefix(text: str) -> np.ndarray:
    """prefix[i] = byte length of text[:i], for char-to-byte span mapping."""
    lengths = np.fromiter(
        (len(ch.encode("utf-8")) for ch in text), dtype=np.int64, count=len(text)
    )
    prefix = np.zeros(len(text) + 1, dtype=np.int64)
    np.cumsum(lengths, out=prefix[1:])
    return prefix


def encode_text(
    text: str, tokenizer, model, max_len: int, overlap: int, device: str = "cpu"
) -> list[Entry]:
    enc = tokenizer(text, add_special_tokens=False, return_offsets_mapping=True)
    ids: list[int] = enc["input_ids"]
    offsets: list[tuple[int, int]] = enc["offset_mapping"]
    if not ids:
        return []
    n = len(ids)
    content = max_len - 2  # bos/eos occupy two positions
    step = content - overlap
    dim = model.config.hidden_size
    vectors = np.zeros((n, dim), dtype=np.float32)
    best = np.full(n, -1, dtype=np.int64)
    bos, eos = tokenizer.bos_token_id, tokenizer.eos_token_id
    start = 0
    with torch.no_grad():
        while True:
            end = min(start + content, n)
            chunk = torch.tensor([[bos, *ids[start:end], eos]], device=device)
            hidden = model(chunk).last_hidden_state[0, 1:-1]
            hidden = hidden.cpu().numpy().astype(np.float32)
            pos = np.arange(start, end)
            dist = np.minimum(pos - start, end - 1 - pos)
            take = dist > best[start:end]
            vectors[start:end][take] = hidden[take]
            best[start:end] = np.maximum(best[start:end], dist)
            if end == n:
                break
            start += step
    prefix = _byte_prefix(text)
    tokens = tokenizer.convert_ids_to_tokens(ids)
    entries = []
    for tok, (cs, ce), vec in zip(tokens, offsets, vectors):
        bs, be = int(prefix[cs]), int(prefix[ce])
        if bs == be:  # zero-width control subtoken
            continue
        entries.append(Entry(tok, bs, be, tuple(float(v) for v in vec)))
    return entries


@dataclass
class ExportResult:
    out_path: str
    sequences: int
    skipped: list[dict] = field(default_factory=list)
    meta_path: str = ""


def export(job: ExportJob, echo=None) -> ExportResult:
    echo = echo or (lambda msg: print(msg, file=sys.stderr))
    tokenizer, model = load_checkpoint(job.model_id, job.offline, job.device)
    sequences = []
    skipped = []
    for name in job.inputs:
        path = Path(name)
        try:
            text = path.read_bytes().decode("utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            echo(f"warning: skipping {path}: {exc}")
            skipped.append({"path": str(path), "reason": str(exc)})
            continue
        entries = encode_text(
            text, tokenizer, model, job.max_len, job.overlap, job.device
        )
        sequences.append(
            Sequence_(str(path), model.config.hidden_size, entries)
        )
    write_cvec(sequences, job.out_path)
    meta_path = job.out_path + ".meta.json"
    meta = {
        "checkpoint": job.model_id,
        "checkpoint_sha256": checkpoint_hash(model),
        "dim": model.config.hidden_size,
        "max_len": job.max_len,
        "overlap": job.overlap,
        "skipped": skipped,
    }
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return ExportResult(job.out_path, len(sequences), skipped, meta_path)
