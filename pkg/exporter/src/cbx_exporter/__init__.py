"""cbx-exporter: per-subtoken transformer vectors with byte spans, in CVEC."""

from .cvec_writer import Entry, Sequence_, write_cvec
from .export import (
    DEFAULT_MODEL,
    CheckpointUnavailableError,
    ExportJob,
    ExportResult,
    checkpoint_hash,
    encode_text,
    export,
    load_checkpoint,
)

__version__ = "0.1.0"

__all__ = [
    "Entry",
    "Sequence_",
    "write_cvec",
    "DEFAULT_MODEL",
    "CheckpointUnavailableError",
    "ExportJob",
    "ExportResult",
    "checkpoint_hash",
    "encode_text",
    "export",
    "load_checkpoint",
    "__version__",
]
