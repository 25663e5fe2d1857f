"""Labeled sliding-window dataset construction and serialization.

Tokens overlapping a fix-touched line are labeled vulnerable; windows
inherit the OR of their token labels. Splits group by repository so
near-duplicate windows never straddle partitions.
"""

from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import LabelingError
from .miner import MinedChange
from .pylex import TokenStream

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WindowSpec:
    window_len: int = 128
    stride: int = 16

    def __post_init__(self):
        if self.window_len <= 0 or self.stride <= 0:
            raise ValueError("window_len and stride must be positive")
        if self.stride > self.window_len:
            raise ValueError("stride must not exceed window_len")


@dataclass(frozen=True)
class LabeledWindow:
    tokens: tuple[str, ...]
    token_spans: tuple[tuple[int, int], ...]
    label: int
    repo_id: str
    commit_id: str
    file_path: str
    start_index: int
    pad_len: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError("label must be 0 or 1")
        if len(self.tokens) != len(self.token_spans):
            raise ValueError("tokens and spans length mismatch")

    @property
    def full_len(self) -> int:
        return len(self.tokens) + self.pad_len


@dataclass
class DatasetSplit:
    train: list[LabeledWindow]
    validation: list[LabeledWindow]
    test: list[LabeledWindow]
    ratios: tuple[float, float, float]
    seed: int

    def positive_ratio(self) -> float:
        windows = self.train + self.validation + self.test
        if not windows:
            return 0.0
        return sum(w.label for w in windows) / len(windows)


@dataclass
class DedupReport:
    duplicates_removed: int = 0
    conflicts: int = 0


def label_tokens(
    change: MinedChange,
    stream: TokenStream,
    lines: Sequence[tuple[int, int]],
) -> list[int]:
    """Per-token binary labels: 1 iff the token span intersects a changed line."""
    for line_no in change.changed_lines:
        if line_no > len(lines):
            raise LabelingError(
                f"commit {change.commit_id}: changed line {line_no} beyond "
                f"{len(lines)}-line file {change.file_path}"
            )
    changed_spans = [lines[line_no - 1] for line_no in change.changed_lines]
    labels = []
    for tok in stream.tokens:
        hit = any(tok.start < e and tok.end > s for s, e in changed_spans)
        labels.append(1 if hit else 0)
    return labels


def make_windows(
    stream: TokenStream,
    token_labels: Sequence[int],
    spec: WindowSpec,
    repo_id: str = "",
    commit_id: str = "",
    file_path: str = "",
    min_overlap: int = 1,
) -> list[LabeledWindow]:
    """Slide a window of spec.window_len over the stream at spec.stride.

    A window is positive when it contains at least min_overlap positive
    tokens. The trailing partial window is zero-padded.
    """
    if len(token_labels) != len(stream.tokens):
        raise ValueError("token_labels length must match token count")
    if min_overlap < 1:
        raise ValueError("min_overlap must be >= 1")
    count = len(stream.tokens)
    windows = []
    for start in range(0, count, spec.stride):
        chunk = stream.tokens[start : start + spec.window_len]
        positives = sum(token_labels[start : start + spec.window_len])
        windows.append(
            LabeledWindow(
                tokens=tuple(t.text for t in chunk),
                token_spans=tuple((t.start, t.end) for t in chunk),
                label=1 if positives >= min_overlap else 0,
                repo_id=repo_id,
                commit_id=commit_id,
                file_path=file_path,
                start_index=start,
                pad_len=spec.window_len - len(chunk),
            )
        )
    return windows


def dedup(windows: Iterable[LabeledWindow]) -> tuple[list[LabeledWindow], DedupReport]:
    """Collapse exact-duplicate token sequences; drop label conflicts entirely."""
    report = DedupReport()
    first_seen: dict[tuple[str, ...], LabeledWindow] = {}
    conflicted: set[tuple[str, ...]] = set()
    for w in windows:
        key = w.tokens
        if key in conflicted:
            continue
        prior = first_seen.get(key)
        if prior is None:
            first_seen[key] = w
        elif prior.label != w.label:
            conflicted.add(key)
            del first_seen[key]
            report.conflicts += 1
        else:
            report.duplicates_removed += 1
    return list(first_seen.values()), report


def _cut(n: int, ratios: tuple[float, float, float]) -> tuple[int, int]:
    i1 = round(n * ratios[0])
    i2 = round(n * (ratios[0] + ratios[1]))
    return i1, i2


def split(
    windows: Sequence[LabeledWindow],
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15),
    seed: int = 0,
) -> DatasetSplit:
    """Partition windows into train/validation/test grouped by repository.

    With fewer than 3 distinct repositories the grouping degenerates and a
    plain window-level split (same seed) is used instead.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError("all three split ratios must be positive")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("split ratios must sum to 1")
    rng = random.Random(seed)
    repos = sorted({w.repo_id for w in windows})
    if len(repos) >= 3:
        rng.shuffle(repos)
        i1, i2 = _cut(len(repos), ratios)
        groups = (set(repos[:i1]), set(repos[i1:i2]), set(repos[i2:]))
        parts: tuple[list, list, list] = ([], [], [])
        for w in windows:
            for part, group in zip(parts, groups):
                if w.repo_id in group:
                    part.append(w)
                    break
        train, validation, test = parts
    else:
        log.warning(
            "only %d repositories: falling back to window-level split", len(repos)
        )
        order = list(range(len(windows)))
        rng.shuffle(order)
        i1, i2 = _cut(len(windows), ratios)
        train = [windows[i] for i in sorted(order[:i1])]
        validation = [windows[i] for i in sorted(order[i1:i2])]
        test = [windows[i] for i in sorted(order[i2:])]
    return DatasetSplit(train, validation, test, tuple(ratios), seed)


def build_windows(
    changes: Iterable[MinedChange],
    spec: WindowSpec,
    min_overlap: int = 1,
    keep_comments: bool = False,
) -> list[LabeledWindow]:
    """Tokenize, label, and window every mined change."""
    from .pylex import line_spans, tokenize

    out = []
    for change in changes:
        stream = tokenize(change.pre_image, keep_comments=keep_comments)
        lines = line_spans(change.pre_image)
        labels = label_tokens(change, stream, lines)
        out.extend(
            make_windows(
                stream,
                labels,
                spec,
                repo_id=change.repo_id,
                commit_id=change.commit_id,
                file_path=change.file_path,
                min_overlap=min_overlap,
            )
        )
    return out


# -- JSONL serialization ---------------------------------------------------

def window_to_record(w: LabeledWindow) -> dict:
    # field order is fixed for byte-stable files
    return {
        "repo": w.repo_id,
        "commit": w.commit_id,
        "path": w.file_path,
        "start": w.start_index,
        "tokens": list(w.tokens),
        "spans": [list(s) for s in w.token_spans],
        "label": w.label,
        "pad": w.pad_len,
    }


def window_from_record(rec: dict) -> LabeledWindow:
    return LabeledWindow(
        tokens=tuple(rec["tokens"]),
        token_spans=tuple((s, e) for s, e in rec["spans"]),
        label=rec["label"],
        repo_id=rec["repo"],
        commit_id=rec["commit"],
        file_path=rec["path"],
        start_index=rec["start"],
        pad_len=rec["pad"],
    )


def write_windows(windows: Iterable[LabeledWindow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for w in windows:
            fh.write(json.dumps(window_to_record(w), separators=(",", ":")))
            fh.write("\n")


def read_windows(path: str | Path) -> list[LabeledWindow]:
    windows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                windows.append(window_from_record(json.loads(line)))
    return windows
