"""Exception hierarchy shared across the toolchain."""


class VulnhoundError(Exception):
    """Base class for all toolchain errors."""


class SourceDecodingError(VulnhoundError):
    """Input bytes are not valid UTF-8."""

    def __init__(self, offset: int, detail: str = ""):
        self.offset = offset
        msg = f"invalid UTF-8 at byte offset {offset}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class MiningError(VulnhoundError):
    """Repository cannot be mined (not a repo, no commits, git failure)."""


class LabelingError(VulnhoundError):
    """A changed-line number falls outside the pre-fix file."""


class DegenerateCorpusError(VulnhoundError):
    """Corpus too small to train embeddings (vocabulary < 2 after filtering)."""


class CvecFormatError(VulnhoundError):
    """Vector exchange file fails validation."""

    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class BadMagicError(CvecFormatError):
    pass


class VersionMismatchError(CvecFormatError):
    pass


class NonFiniteVectorError(CvecFormatError):
    pass


class NonMonotoneSpanError(CvecFormatError):
    pass


class TruncatedRecordError(CvecFormatError):
    pass


class ModelFormatError(VulnhoundError):
    """Model container fails validation."""


class DimensionMismatchError(VulnhoundError):
    """Vector dimension does not match model dimension."""


class ConfigError(VulnhoundError):
    """Invalid pipeline or training configuration."""


class TrainingDivergedError(VulnhoundError):
    """Non-finite loss or gradient encountered during training."""

