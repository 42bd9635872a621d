"""
Exception hierarchy shared by the library and the CLI.

Every error carries a ``detail`` message and the process ``exit_code`` the
CLI reports for it.
"""


class MMAError(Exception):
    """Base error with an exit code and a human-readable detail"""

    exit_code = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class ConfigurationError(MMAError):
    """Invalid configuration or command-line arguments"""

    exit_code = 2


class DimensionError(ConfigurationError):
    """Tensor extents do not fit together"""


class ContractError(MMAError):
    """A documented pre-condition was violated by the caller"""

    exit_code = 2


class SampleFormatError(MMAError):
    """A sample or weight file could not be decoded"""

    exit_code = 2


class BadMagicError(SampleFormatError):
    """File does not start with the expected magic bytes"""


class VersionMismatchError(SampleFormatError):
    """File was written by an unsupported format version"""


class TruncatedPayloadError(SampleFormatError):
    """File ended before the declared payload was read"""


class DigestMismatchError(ConfigurationError):
    """A run report was produced by a different configuration"""


class NumericFailure(MMAError):
    """A non-finite value appeared during training"""

    exit_code = 3

    def __init__(self, detail: str, batch_id: int | None = None):
        super().__init__(detail)
        self.batch_id = batch_id


class VerificationFailure(MMAError):
    """Finite-difference verification exceeded its threshold"""

    exit_code = 4

    def __init__(self, detail: str, offending: list[str] | None = None):
        super().__init__(detail)
        self.offending = offending or []
