"""Confusion-matrix metrics and ingestion of external SAST verdicts.

Degenerate denominators yield UNDEFINED (None), rendered as "-" in
tables; they are never silently coerced to zero.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import VulnhoundError

# Bandit test ids counted as SQL-injection findings
DEFAULT_SQLI_TEST_IDS = frozenset({"B608"})


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            self.tn + other.tn,
        )


@dataclass(frozen=True)
class Metrics:
    accuracy: float | None
    precision: float | None
    recall: float | None
    f1: float | None


@dataclass
class SastVerdictSet:
    tool: str
    verdicts: dict[str, bool]  # file path -> positive?
    findings: list[dict] | None = None


def compute_metrics(c: Confusion) -> Metrics:
    """Standard P/R/F1/accuracy; None where a denominator vanishes."""
    if c.total == 0:
        raise VulnhoundError("cannot compute metrics from an all-zero confusion")
    accuracy = (c.tp + c.tn) / c.total
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp > 0 else None
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn > 0 else None
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return Metrics(accuracy, precision, recall, f1)


def f1_from(precision: float, recall: float) -> float | None:
    """Harmonic mean straight from already-rounded P and R values."""
    if precision + recall == 0:
        return None
    return 2 * precision * recall / (precision + recall)


def score_windows(
    predictions: Sequence[int | bool], labels: Sequence[int | bool]
) -> Confusion:
    """Window-level tally of prediction/label pairs."""
    if len(predictions) != len(labels):
        raise VulnhoundError(
            f"length mismatch: {len(predictions)} predictions, {len(labels)} labels"
        )
    tp = fp = fn = tn = 0
    for pred, lab in zip(predictions, labels):
        if pred and lab:
            tp += 1
        elif pred and not lab:
            fp += 1
        elif not pred and lab:
            fn += 1
        else:
            tn += 1
    return Confusion(tp, fp, fn, tn)


def score_files(
    verdicts: Mapping[str, bool], truth: Mapping[str, bool]
) -> Confusion:
    """File-level tally; both sides must cover exactly the same files."""
    if set(verdicts) != set(truth):
        missing = sorted(set(truth) - set(verdicts))
        extra = sorted(set(verdicts) - set(truth))
        raise VulnhoundError(
            f"file sets differ; missing from verdicts: {missing}, "
            f"unexpected in verdicts: {extra}"
        )
    paths = sorted(verdicts)
    return score_windows(
        [verdicts[p] for p in paths], [truth[p] for p in paths]
    )


def any_window_file_verdicts(
    window_verdicts: Iterable[tuple[str, bool]], k: int = 1
) -> dict[str, bool]:
    """Lift window verdicts to files: positive iff >= k windows are positive."""
    counts: dict[str, int] = {}
    for path, verdict in window_verdicts:
        counts.setdefault(path, 0)
        if verdict:
            counts[path] += 1
    return {path: n >= k for path, n in counts.items()}


def ingest_sast(
    path: str | Path,
    fmt: str,
    tool: str | None = None,
    sqli_test_ids: frozenset[str] = DEFAULT_SQLI_TEST_IDS,
) -> SastVerdictSet:
    """Read external tool verdicts.

    "bandit-json": the public Bandit report schema; a file is positive iff
    it carries a finding whose test_id is in sqli_test_ids. The scanned
    file universe is the per-file metrics keys plus all finding paths.

    "generic-csv": columns path,verdict with verdict in {0,1}, taken
    verbatim (the route for exported commercial-tool verdicts).
    """
    path = Path(path)
    if fmt == "bandit-json":
        try:
            report = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise VulnhoundError(f"malformed bandit report {path}: {exc}") from exc
        results = report.get("results", [])
        files = {
            f for f in report.get("metrics", {}) if f != "_totals"
        } | {r.get("filename", "") for r in results} - {""}
        verdicts = {f: False for f in sorted(files)}
        findings = []
        for r in results:
            fname = r.get("filename", "")
            if not fname:
                continue
            findings.append(
                {
                    "path": fname,
                    "test_id": r.get("test_id"),
                    "line": r.get("line_number"),
                }
            )
            if r.get("test_id") in sqli_test_ids:
                verdicts[fname] = True
        return SastVerdictSet(tool or "bandit", verdicts, findings)
    if fmt == "generic-csv":
        verdicts = {}
        try:
            rows = list(csv.DictReader(path.open(encoding="utf-8")))
        except OSError as exc:
            raise VulnhoundError(f"cannot read {path}: {exc}") from exc
        for row in rows:
            if row.get("path") is None or row.get("verdict") is None:
                raise VulnhoundError(f"{path}: rows need path and verdict columns")
            p = row["path"]
            v = row["verdict"].strip()
            if v not in ("0", "1"):
                raise VulnhoundError(f"{path}: verdict must be 0 or 1, got {v!r}")
            if p in verdicts:
                raise VulnhoundError(f"{path}: duplicate path {p!r}")
            verdicts[p] = v == "1"
        return SastVerdictSet(tool or "generic", verdicts, None)
    raise VulnhoundError(f"unknown SAST format {fmt!r}")


# -- rendering ----------------------------------------------------------------

_COLUMNS = ("accuracy", "precision", "recall", "f1")


def _pct(value: float | None) -> str:
    return "-" if value is None else f"{100 * value:.1f}%"


def comparison_table(entries: Sequence[tuple[str, Confusion]]) -> tuple[str, str]:
    """Render per-tool metrics as (aligned text, CSV).

    The CSV carries full-precision values so it re-parses to identical
    Metrics; undefined cells are "-" in both renderings.
    """
    if not entries:
        raise VulnhoundError("comparison table needs at least one entry")
    rows = [(name, compute_metrics(c)) for name, c in entries]
    header = ("", "Acc", "Precision", "Recall", "F1")
    text_rows = [header] + [
        (name, _pct(m.accuracy), _pct(m.precision), _pct(m.recall), _pct(m.f1))
        for name, m in rows
    ]
    widths = [max(len(r[i]) for r in text_rows) for i in range(5)]
    text = "\n".join(
        "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)).rstrip()
        for r in text_rows
    )

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("name",) + _COLUMNS)
    for name, m in rows:
        writer.writerow(
            [name]
            + [
                "-" if getattr(m, col) is None else repr(getattr(m, col))
                for col in _COLUMNS
            ]
        )
    return text, buf.getvalue()


def parse_comparison_csv(text: str) -> list[tuple[str, Metrics]]:
    reader = csv.DictReader(io.StringIO(text))
    out = []
    for row in reader:
        values = {
            col: (None if row[col] == "-" else float(row[col])) for col in _COLUMNS
        }
        out.append((row["name"], Metrics(**values)))
    return out
