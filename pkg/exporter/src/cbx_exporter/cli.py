"""Command line front end: cbx-export."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .export import DEFAULT_MODEL, CheckpointUnavailableError, ExportJob, export


def _expand_inputs(values: tuple[str, ...]) -> list[str]:
    """Each --input is a Python file or a text file listing one path per line."""
    files: list[str] = []
    for value in values:
        path = Path(value)
        if path.suffix == ".py":
            files.append(str(path))
        else:
            for line in path.read_text(encoding="utf-8").splitlines():
                line = line.strip()
                if line:
                    files.append(line)
    return files


@click.command()
@click.option(
    "--input", "inputs", multiple=True, required=True,
    help="Python file, or a list file with one path per line. Repeatable.",
)
@click.option("--out", "out_path", required=True, help="Output CVEC file.")
@click.option("--model", "model_id", default=DEFAULT_MODEL, show_default=True)
@click.option("--max-len", default=512, show_default=True,
              help="Maximum subtokens per chunk, special tokens included.")
@click.option("--overlap", default=64, show_default=True,
              help="Subtoken overlap between adjacent chunks.")
@click.option("--device", default="cpu", show_default=True)
@click.option("--offline", is_flag=True,
              help="Resolve the checkpoint from the local cache only.")
def cli(inputs, out_path, model_id, max_len, overlap, device, offline):
    """Export per-subtoken transformer vectors with byte spans to CVEC."""
    try:
        job = ExportJob(
            inputs=_expand_inputs(inputs),
            out_path=out_path,
            model_id=model_id,
            max_len=max_len,
            overlap=overlap,
            device=device,
            offline=offline,
        )
    except (ValueError, OSError) as exc:
        raise click.ClickException(str(exc)) from exc
    result = export(job, echo=lambda msg: click.echo(msg, err=True))
    click.echo(
        f"wrote {result.sequences} sequence(s) to {result.out_path} "
        f"({len(result.skipped)} skipped)"
    )


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        return 1
    except CheckpointUnavailableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
