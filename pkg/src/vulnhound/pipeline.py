"""End-to-end orchestration: mine -> dataset -> embed -> train -> scan -> eval.

Stages are content-addressed: each stage records the SHA-256 of its
inputs and outputs in out_dir/stages.json and is skipped when nothing
changed. All artifacts are byte-deterministic for a fixed seed.
"""

from __future__ import annotations

import hashlib
import json
import logging
import subprocess
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import embed, evalkit, miner, providers, pylex, rnn
from .errors import ConfigError, DimensionMismatchError, VulnhoundError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    repos: list[str] = field(default_factory=list)
    keywords_file: str | None = None
    out_dir: str = "vulnhound-out"
    max_files: int = miner.DEFAULT_MAX_FILES
    keep_comments: bool = False

    window_len: int = 128
    stride: int = 16
    min_overlap: int = 1
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int = 0

    provider: str = "skipgram"
    vectors_file: str | None = None  # external provider input (CVEC)

    sg_dim: int = 100
    sg_window: int = 5
    sg_negatives: int = 5
    sg_epochs: int = 5
    sg_learning_rate: float = 0.025
    sg_min_count: int = 2

    epochs: int = 100
    batch_size: int = 128
    hidden: int = 100
    dropout_rate: float = 0.20
    learning_rate: float = 1e-3
    threshold: float = 0.5

    scan_paths: list[str] = field(default_factory=list)

    def validate(self) -> None:
        if self.provider not in ("skipgram", "external"):
            raise ConfigError(f"unknown provider {self.provider!r}")
        if self.provider == "external" and not self.vectors_file:
            raise ConfigError("external provider needs vectors_file")
        if self.provider == "skipgram" and self.vectors_file:
            raise ConfigError(
                "both providers selected: provider=skipgram yet vectors_file set"
            )
        if not self.repos:
            raise ConfigError("no repositories configured")

    def snapshot(self) -> dict:
        snap = {}
        for name in sorted(self.__dataclass_fields__):
            value = getattr(self, name)
            snap[name] = list(value) if isinstance(value, tuple) else value
        return snap

    @classmethod
    def from_toml(cls, path: str | Path) -> "PipelineConfig":
        raw = tomllib.loads(Path(path).read_text(encoding="utf-8"))
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "ratios" in raw:
            raw["ratios"] = tuple(raw["ratios"])
        return cls(**raw)

    def window_spec(self) -> ds.WindowSpec:
        return ds.WindowSpec(self.window_len, self.stride)

    def sg_config(self) -> embed.SgConfig:
        return embed.SgConfig(
            dim=self.sg_dim,
            window=self.sg_window,
            negatives=self.sg_negatives,
            epochs=self.sg_epochs,
            learning_rate=self.sg_learning_rate,
            min_count=self.sg_min_count,
            seed=self.seed,
        )

    def train_config(self) -> rnn.TrainConfig:
        return rnn.TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            hidden=self.hidden,
            dropout_rate=self.dropout_rate,
            learning_rate=self.learning_rate,
            threshold=self.threshold,
            seed=self.seed,
        )


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _sha256_obj(obj) -> str:
    return hashlib.sha256(
        json.dumps(obj, sort_keys=True, default=str).encode("utf-8")
    ).hexdigest()


def _repo_state(repo: str) -> str:
    proc = subprocess.run(
        ["git", "-C", repo, "for-each-ref"], capture_output=True
    )
    return hashlib.sha256(proc.stdout).hexdigest()


# -- mined-change serialization ------------------------------------------------

def write_changes(changes, path: Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for c in changes:
            rec = {
                "repo": c.repo_id,
                "commit": c.commit_id,
                "path": c.file_path,
                "changed_lines": list(c.changed_lines),
                "message": c.commit_message,
                "pre_image": c.pre_image,
            }
            fh.write(json.dumps(rec, separators=(",", ":")))
            fh.write("\n")


def read_changes(path: Path) -> list[miner.MinedChange]:
    changes = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            changes.append(
                miner.MinedChange(
                    repo_id=rec["repo"],
                    commit_id=rec["commit"],
                    file_path=rec["path"],
                    pre_image=rec["pre_image"],
                    changed_lines=tuple(rec["changed_lines"]),
                    commit_message=rec["message"],
                )
            )
    return changes


# -- scanning -------------------------------------------------------------------

def _window_lines(span: tuple[int, int], lines: list[tuple[int, int]]) -> list[int]:
    covered = [
        i + 1 for i, (s, e) in enumerate(lines) if span[0] < e and span[1] > s
    ]
    return [covered[0], covered[-1]] if covered else [0, 0]


def _nonpad_span(window: ds.LabeledWindow) -> tuple[int, int]:
    spans = [s for s in window.token_spans]
    return (spans[0][0], spans[-1][1]) if spans else (0, 0)


def scan(
    paths: list[str | Path],
    params: rnn.LstmParams,
    threshold: float,
    provider,
    spec: ds.WindowSpec,
    model_id: str = "",
    config_snapshot: dict | None = None,
    keep_comments: bool = False,
) -> dict:
    """Scan files and return the JSON-ready report.

    Window geometry must come from the model metadata so it can never
    drift from training. Unreadable files become error entries, not
    failures.
    """
    if provider.dim != params.dim:
        raise DimensionMismatchError(
            f"provider dim {provider.dim} != model dim {params.dim}"
        )
    files: list[Path] = []
    for p in paths:
        p = Path(p)
        if p.is_dir():
            files.extend(sorted(p.rglob("*.py")))
        else:
            files.append(p)
    file_reports = []
    for path in sorted(set(files)):
        entry: dict = {"path": str(path)}
        try:
            source = path.read_bytes()
            if isinstance(provider, providers.SequenceProvider):
                seq = provider.by_path.get(str(path))
                if seq is None:
                    raise VulnhoundError(f"no vectors supplied for {path}")
                stream = embed.stream_from_sequence(seq)
            else:
                stream = pylex.tokenize(source, keep_comments=keep_comments)
            lines = pylex.line_spans(source)
            windows = ds.make_windows(
                stream, [0] * len(stream.tokens), spec, file_path=str(path)
            )
            flagged = []
            max_prob = 0.0
            for w in windows:
                vecs = provider.window_vectors(w)
                prob, verdict = rnn.predict(params, vecs, threshold=threshold)
                max_prob = max(max_prob, prob)
                if verdict:
                    span = _nonpad_span(w)
                    flagged.append(
                        {
                            "start_token": w.start_index,
                            "span": list(span),
                            "lines": _window_lines(span, lines),
                            "probability": prob,
                        }
                    )
            flagged.sort(key=lambda f: (f["span"][0], f["start_token"]))
            entry.update(
                {
                    "verdict": bool(flagged),
                    "max_probability": max_prob,
                    "windows": flagged,
                    "error": None,
                }
            )
        except (OSError, VulnhoundError) as exc:
            entry.update(
                {
                    "verdict": None,
                    "max_probability": None,
                    "windows": [],
                    "error": str(exc),
                }
            )
        file_reports.append(entry)
    return {
        "model_id": model_id,
        "config": config_snapshot or {},
        "files": file_reports,
    }


def write_report(report: dict, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )


# -- staged pipeline -------------------------------------------------------------

class _Stages:
    def __init__(self, out_dir: Path):
        self.path = out_dir / "stages.json"
        self.state = (
            json.loads(self.path.read_text(encoding="utf-8"))
            if self.path.exists()
            else {}
        )

    def fresh(self, stage: str, inputs: dict, outputs: list[Path]) -> bool:
        rec = self.state.get(stage)
        if rec is None or rec["inputs"] != inputs:
            return False
        for out in outputs:
            if not out.exists() or sha256_file(out) != rec["outputs"].get(str(out)):
                return False
        return True

    def record(self, stage: str, inputs: dict, outputs: list[Path]) -> None:
        self.state[stage] = {
            "inputs": inputs,
            "outputs": {str(o): sha256_file(o) for o in outputs},
        }
        self.path.write_text(
            json.dumps(self.state, sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )


def run_pipeline(config: PipelineConfig, echo=print) -> dict:
    """Run every stage, skipping those whose inputs are unchanged.

    Returns the summary: artifact path -> SHA-256.
    """
    config.validate()
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stages = _Stages(out)
    snap = config.snapshot()
    summary: dict[str, str] = {}

    def run_stage(name: str, inputs: dict, outputs: list[Path], action) -> None:
        if stages.fresh(name, inputs, outputs):
            echo(f"[{name}] unchanged, skipping")
        else:
            echo(f"[{name}] running")
            try:
                action()
            except VulnhoundError as exc:
                raise VulnhoundError(f"stage {name!r} failed: {exc}") from exc
            stages.record(name, inputs, outputs)
        for o in outputs:
            summary[str(o)] = sha256_file(o)

    keyword_filter = (
        miner.KeywordFilter.from_file(config.keywords_file)
        if config.keywords_file
        else miner.KeywordFilter()
    )

    mined_path = out / "mined.jsonl"
    mine_inputs = {
        "repos": {r: _repo_state(r) for r in config.repos},
        "keywords": list(keyword_filter.patterns),
        "max_files": config.max_files,
    }

    def do_mine():
        changes = miner.mine_repositories(
            config.repos, keyword_filter, config.max_files
        )
        write_changes(changes, mined_path)

    run_stage("mine", mine_inputs, [mined_path], do_mine)

    part_paths = {
        part: out / f"{part}.jsonl" for part in ("train", "validation", "test")
    }
    dataset_inputs = {
        "mined": sha256_file(mined_path),
        "window": [config.window_len, config.stride, config.min_overlap],
        "ratios": list(config.ratios),
        "seed": config.seed,
        "keep_comments": config.keep_comments,
    }

    def do_dataset():
        changes = read_changes(mined_path)
        windows = ds.build_windows(
            changes,
            config.window_spec(),
            min_overlap=config.min_overlap,
            keep_comments=config.keep_comments,
        )
        windows, dedup_report = ds.dedup(windows)
        split = ds.split(windows, config.ratios, config.seed)
        for part, path in part_paths.items():
            ds.write_windows(getattr(split, part), path)
        report = {
            "windows": len(windows),
            "positive_ratio": split.positive_ratio(),
            "duplicates_removed": dedup_report.duplicates_removed,
            "label_conflicts": dedup_report.conflicts,
        }
        (out / "dataset_report.json").write_text(
            json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )

    run_stage(
        "dataset",
        dataset_inputs,
        list(part_paths.values()) + [out / "dataset_report.json"],
        do_dataset,
    )

    table_path = out / "embedding.cvtb"
    if config.provider == "skipgram":
        embed_inputs = {
            "train": sha256_file(part_paths["train"]),
            "sg": [
                config.sg_dim, config.sg_window, config.sg_negatives,
                config.sg_epochs, config.sg_learning_rate, config.sg_min_count,
                config.seed,
            ],
        }

        def do_embedding():
            windows = ds.read_windows(part_paths["train"])
            if not windows:
                raise VulnhoundError("train partition is empty")
            table = embed.train_skipgram(
                [list(w.tokens) for w in windows], config.sg_config()
            )
            embed.store_table(table, table_path)

        run_stage("embedding", embed_inputs, [table_path], do_embedding)

    def make_provider():
        if config.provider == "skipgram":
            return providers.TableProvider(embed.load_table(table_path))
        return providers.SequenceProvider(embed.load_vectors(config.vectors_file))

    model_path = out / "model.vlsm"
    provider_artifact = (
        str(table_path) if config.provider == "skipgram" else config.vectors_file
    )
    train_inputs = {
        "train": sha256_file(part_paths["train"]),
        "validation": sha256_file(part_paths["validation"]),
        "vectors": sha256_file(provider_artifact),
        "config": [
            config.epochs, config.batch_size, config.hidden,
            config.dropout_rate, config.learning_rate, config.threshold,
            config.seed,
        ],
    }

    def do_train():
        provider = make_provider()
        train_windows = ds.read_windows(part_paths["train"])
        if not train_windows:
            raise VulnhoundError("train partition is empty")
        X, mask, labels = providers.windows_to_arrays(train_windows, provider)
        val_windows = ds.read_windows(part_paths["validation"])
        validation = (
            providers.windows_to_arrays(val_windows, provider)
            if val_windows
            else None
        )
        report = rnn.train(X, mask, labels, config.train_config(), validation)
        rnn.save_model(
            report.params,
            model_path,
            threshold=config.threshold,
            metadata={
                "window_len": config.window_len,
                "stride": config.stride,
                "provider": config.provider,
                "seed": config.seed,
                "config": snap,
            },
        )

    run_stage("train", train_inputs, [model_path], do_train)

    report_path = out / "scan_report.json"
    if config.scan_paths:
        scan_inputs = {
            "model": sha256_file(model_path),
            "vectors": sha256_file(provider_artifact),
            "files": {
                str(f): sha256_file(f)
                for p in config.scan_paths
                for f in (
                    sorted(Path(p).rglob("*.py")) if Path(p).is_dir() else [Path(p)]
                )
            },
        }

        def do_scan():
            params, threshold, metadata = rnn.load_model(model_path)
            spec = ds.WindowSpec(metadata["window_len"], metadata["stride"])
            report = scan(
                config.scan_paths,
                params,
                threshold,
                make_provider(),
                spec,
                model_id=sha256_file(model_path),
                config_snapshot=snap,
                keep_comments=config.keep_comments,
            )
            write_report(report, report_path)

        run_stage("scan", scan_inputs, [report_path], do_scan)

    eval_path = out / "eval.json"
    eval_inputs = {
        "model": sha256_file(model_path),
        "test": sha256_file(part_paths["test"]),
        "vectors": sha256_file(provider_artifact),
    }

    def do_eval():
        params, threshold, _ = rnn.load_model(model_path)
        windows = ds.read_windows(part_paths["test"])
        if windows:
            provider = make_provider()
            X, mask, labels = providers.windows_to_arrays(windows, provider)
            probs, verdicts = rnn.predict_batch(params, X, mask, threshold)
            metrics = evalkit.compute_metrics(
                evalkit.score_windows(verdicts.tolist(), labels.tolist())
            )
            payload = {
                "windows": len(windows),
                "accuracy": metrics.accuracy,
                "precision": metrics.precision,
                "recall": metrics.recall,
                "f1": metrics.f1,
            }
        else:
            payload = {"windows": 0}
        eval_path.write_text(
            json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )

    run_stage("eval", eval_inputs, [eval_path], do_eval)

    summary_path = out / "summary.json"
    summary_path.write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    for artifact, digest in sorted(summary.items()):
        echo(f"{digest}  {artifact}")
    return summary
