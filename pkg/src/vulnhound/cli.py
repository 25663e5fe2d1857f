"""Command-line interface for the full detection pipeline.

Exit codes: 0 success, 1 usage error, 2 data/validation error,
3 internal error. VULNHOUND_SEED overrides the config-file seed; an
explicit --seed flag beats both.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from . import dataset as ds
from . import embed, evalkit, miner, pipeline, providers, pylex, rnn
from .errors import VulnhoundError

CVEC_CONTRACT = """\
Vector exchange format (CVEC), little-endian:

  magic "CVEC" (4 bytes) | format version u32 = 1 | dim u32 |
  sequence count u32
  per sequence: path length u16 + UTF-8 path | entry count u32
  per entry:    token length u16 + UTF-8 token | span start u64 |
                span end u64 | dim x IEEE-754 binary32

Spans are byte offsets into the original source file, monotone
non-decreasing within a sequence; every vector value must be finite.
A JSONL mirror (--format jsonl) holds one sequence object per line:
{"path": ..., "dim": ..., "entries": [[token, start, end, [...]], ...]}.

Producing these files is the job of an external exporter (for example
the cbx-export tool running a pre-trained code transformer); this
toolchain only validates and consumes them via `train --provider
external` and `scan --vectors`.
"""


def _resolve_seed(flag_seed: int | None, config_seed: int) -> int:
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get("VULNHOUND_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise VulnhoundError(f"VULNHOUND_SEED must be an integer: {env!r}") from exc
    return config_seed


def _repo_list(repos: str) -> list[str]:
    """A --repos argument: either a directory of repos or a list file."""
    path = Path(repos)
    if path.is_dir():
        if (path / ".git").exists():
            return [str(path)]
        subdirs = [str(p) for p in sorted(path.iterdir()) if (p / ".git").exists()]
        if not subdirs:
            raise VulnhoundError(f"{repos} holds no git repositories")
        return subdirs
    if path.is_file():
        return [
            line.strip()
            for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
    raise VulnhoundError(f"{repos} is neither a directory nor a list file")


@click.group()
def cli():
    """SQL-injection detection toolchain: mine, train, scan, compare."""


@cli.command()
@click.option("--repos", required=True, help="Directory of repos or a list file.")
@click.option("--keywords", type=click.Path(exists=True), help="Pattern file, one per line.")
@click.option("--out", required=True, type=click.Path(), help="Output JSONL of mined changes.")
@click.option("--max-files", default=miner.DEFAULT_MAX_FILES, show_default=True)
def mine(repos, keywords, out, max_files):
    """Mine vulnerability-fix commits from local git repositories."""
    keyword_filter = (
        miner.KeywordFilter.from_file(keywords) if keywords else miner.KeywordFilter()
    )
    changes = miner.mine_repositories(_repo_list(repos), keyword_filter, max_files)
    pipeline.write_changes(changes, Path(out))
    click.echo(f"mined {len(changes)} changes into {out}")


@cli.command("build-dataset")
@click.option("--mined", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--window-len", default=128, show_default=True)
@click.option("--stride", default=16, show_default=True)
@click.option("--min-overlap", default=1, show_default=True)
@click.option("--ratios", default="0.70,0.15,0.15", show_default=True)
@click.option("--seed", type=int, default=None)
def build_dataset(mined, out_dir, window_len, stride, min_overlap, ratios, seed):
    """Window, label, dedup, and split mined changes into a dataset."""
    seed = _resolve_seed(seed, 0)
    ratio_tuple = tuple(float(r) for r in ratios.split(","))
    changes = pipeline.read_changes(Path(mined))
    windows = ds.build_windows(
        changes, ds.WindowSpec(window_len, stride), min_overlap=min_overlap
    )
    windows, dedup_report = ds.dedup(windows)
    split = ds.split(windows, ratio_tuple, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for part in ("train", "validation", "test"):
        ds.write_windows(getattr(split, part), out / f"{part}.jsonl")
    click.echo(
        f"windows={len(windows)} positive_ratio={split.positive_ratio():.4f} "
        f"dups_removed={dedup_report.duplicates_removed} "
        f"conflicts={dedup_report.conflicts}"
    )


@cli.command("train-embedding")
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--dim", default=100, show_default=True)
@click.option("--window", default=5, show_default=True)
@click.option("--negatives", default=5, show_default=True)
@click.option("--epochs", default=5, show_default=True)
@click.option("--min-count", default=2, show_default=True)
@click.option("--seed", type=int, default=None)
def train_embedding(dataset_path, out, dim, window, negatives, epochs, min_count, seed):
    """Train skip-gram embeddings on the train-partition token windows."""
    seed = _resolve_seed(seed, 0)
    windows = ds.read_windows(dataset_path)
    if not windows:
        raise VulnhoundError(f"{dataset_path} holds no windows")
    config = embed.SgConfig(
        dim=dim, window=window, negatives=negatives, epochs=epochs,
        min_count=min_count, seed=seed,
    )
    table = embed.train_skipgram([list(w.tokens) for w in windows], config)
    embed.store_table(table, out)
    click.echo(f"trained {len(table.vocab)}-token table (dim {dim}) into {out}")


@cli.command("export-vectors")
def export_vectors():
    """Describe the CVEC exchange contract external exporters must meet."""
    click.echo(CVEC_CONTRACT)


def _load_provider(provider: str, vectors: str):
    if provider == "skipgram":
        return providers.TableProvider(embed.load_table(vectors))
    if provider == "external":
        return providers.SequenceProvider(embed.load_vectors(vectors))
    raise VulnhoundError(f"unknown provider {provider!r}")


@cli.command()
@click.option("--dataset", "dataset_dir", required=True, type=click.Path(exists=True),
              help="Dataset directory with train/validation/test JSONL.")
@click.option("--vectors", required=True, type=click.Path(exists=True),
              help="Embedding table (skipgram) or CVEC file (external).")
@click.option("--provider", default="skipgram", show_default=True,
              type=click.Choice(["skipgram", "external"]))
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="TOML with training keys; flags win.")
@click.option("--out", required=True, type=click.Path())
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--hidden", type=int, default=None)
@click.option("--seed", type=int, default=None)
def train(dataset_dir, vectors, provider, config_path, out, epochs, batch_size, hidden, seed):
    """Train the LSTM classifier."""
    base = pipeline.PipelineConfig.from_toml(config_path) if config_path else pipeline.PipelineConfig()
    cfg = rnn.TrainConfig(
        epochs=epochs if epochs is not None else base.epochs,
        batch_size=batch_size if batch_size is not None else base.batch_size,
        hidden=hidden if hidden is not None else base.hidden,
        dropout_rate=base.dropout_rate,
        learning_rate=base.learning_rate,
        threshold=base.threshold,
        seed=_resolve_seed(seed, base.seed),
    )
    vec_provider = _load_provider(provider, vectors)
    dataset_dir = Path(dataset_dir)
    train_windows = ds.read_windows(dataset_dir / "train.jsonl")
    if not train_windows:
        raise VulnhoundError("train partition is empty")
    X, mask, labels = providers.windows_to_arrays(train_windows, vec_provider)
    val_path = dataset_dir / "validation.jsonl"
    val_windows = ds.read_windows(val_path) if val_path.exists() else []
    validation = (
        providers.windows_to_arrays(val_windows, vec_provider) if val_windows else None
    )
    report = rnn.train(X, mask, labels, cfg, validation)
    spec_meta = {
        "window_len": train_windows[0].full_len,
        "stride": base.stride,
        "provider": provider,
        "seed": cfg.seed,
    }
    rnn.save_model(report.params, out, threshold=cfg.threshold, metadata=spec_meta)
    last = report.epoch_losses[-1] if report.epoch_losses else float("nan")
    click.echo(f"trained {cfg.epochs} epochs, final loss {last:.4f}, model at {out}")


@cli.command()
@click.option("--model", required=True, type=click.Path(exists=True))
@click.option("--paths", required=True, multiple=True, type=click.Path())
@click.option("--vectors", required=True, type=click.Path(exists=True))
@click.option("--provider", default="skipgram", show_default=True,
              type=click.Choice(["skipgram", "external"]))
@click.option("--out", required=True, type=click.Path())
def scan(model, paths, vectors, provider, out):
    """Scan files with a trained model; write the JSON report."""
    params, threshold, metadata = rnn.load_model(model)
    spec = ds.WindowSpec(
        metadata.get("window_len", 128), metadata.get("stride", 16)
    )
    report = pipeline.scan(
        list(paths),
        params,
        threshold,
        _load_provider(provider, vectors),
        spec,
        model_id=pipeline.sha256_file(model),
        config_snapshot={"model": str(model), "provider": provider},
    )
    pipeline.write_report(report, out)
    positives = sum(1 for f in report["files"] if f["verdict"])
    click.echo(f"scanned {len(report['files'])} files, {positives} flagged; report at {out}")


@cli.command("eval")
@click.option("--model", required=True, type=click.Path(exists=True))
@click.option("--dataset", "dataset_path", required=True, type=click.Path(exists=True),
              help="JSONL window file (typically test.jsonl).")
@click.option("--vectors", required=True, type=click.Path(exists=True))
@click.option("--provider", default="skipgram", show_default=True,
              type=click.Choice(["skipgram", "external"]))
def eval_cmd(model, dataset_path, vectors, provider):
    """Window-level metrics of a model on a labeled dataset partition."""
    params, threshold, _ = rnn.load_model(model)
    vec_provider = _load_provider(provider, vectors)
    windows = ds.read_windows(dataset_path)
    if not windows:
        raise VulnhoundError(f"{dataset_path} holds no windows")
    X, mask, labels = providers.windows_to_arrays(windows, vec_provider)
    _, verdicts = rnn.predict_batch(params, X, mask, threshold)
    confusion = evalkit.score_windows(verdicts.tolist(), labels.tolist())
    text, _ = evalkit.comparison_table([("model", confusion)])
    click.echo(text)


@cli.command()
@click.option("--truth", required=True, type=click.Path(exists=True),
              help="Ground-truth CSV: path,verdict.")
@click.option("--report", "report_path", type=click.Path(exists=True),
              help="Model scan report JSON to include as a row.")
@click.option("--sast", multiple=True,
              help="SAST verdicts as <file>:<format>, e.g. bandit.json:bandit-json.")
@click.option("--csv-out", type=click.Path(), help="Also write the CSV rendering.")
def compare(truth, report_path, sast, csv_out):
    """Head-to-head file-level comparison against SAST tool verdicts."""
    truth_set = evalkit.ingest_sast(truth, "generic-csv", tool="truth")
    entries = []
    if report_path:
        report = json.loads(Path(report_path).read_text(encoding="utf-8"))
        verdicts = {
            f["path"]: bool(f["verdict"])
            for f in report["files"]
            if f["error"] is None
        }
        entries.append(("model", evalkit.score_files(verdicts, truth_set.verdicts)))
    for item in sast:
        try:
            path, fmt = item.rsplit(":", 1)
        except ValueError as exc:
            raise VulnhoundError(f"--sast needs <file>:<format>, got {item!r}") from exc
        verdict_set = evalkit.ingest_sast(path, fmt, tool=Path(path).stem)
        entries.append(
            (verdict_set.tool, evalkit.score_files(verdict_set.verdicts, truth_set.verdicts))
        )
    text, csv_text = evalkit.comparison_table(entries)
    click.echo(text)
    if csv_out:
        Path(csv_out).write_text(csv_text, encoding="utf-8")


@cli.command("pipeline")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--seed", type=int, default=None)
def pipeline_cmd(config_path, seed):
    """Run the full mine -> dataset -> embed -> train -> scan -> eval pipeline."""
    config = pipeline.PipelineConfig.from_toml(config_path)
    config.seed = _resolve_seed(seed, config.seed)
    pipeline.run_pipeline(config, echo=click.echo)


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Abort:
        return 1
    except click.exceptions.ClickException as exc:
        exc.show()
        return 1
    except (VulnhoundError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except Exception as exc:  # pragma: no cover - internal failures
        click.echo(f"internal error: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
