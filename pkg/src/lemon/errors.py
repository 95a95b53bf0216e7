"""Exception hierarchy shared by all lemon modules."""


class LemonError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(LemonError, ValueError):
    """Tensor extents or dtypes are inconsistent with an operation's contract."""


class NumericsError(LemonError, ArithmeticError):
    """A kernel produced (or would produce) a non-finite value."""


class SplitError(LemonError, ValueError):
    """A column-split violates its sum constraints beyond tolerance."""


class PlanError(LemonError, ValueError):
    """An expansion plan, model spec, or schedule spec is invalid (usage error)."""


class ContainerError(LemonError):
    """Base class for checkpoint-container format errors.

    Each concrete subclass carries a stable ``code`` string so callers
    (and the CLI) can distinguish failure modes without string matching.
    """

    code = "container_error"


class BadMagicError(ContainerError):
    code = "bad_magic"


class UnsupportedVersionError(ContainerError):
    code = "unsupported_version"


class MalformedHeaderError(ContainerError):
    code = "malformed_header"


class TruncatedPayloadError(ContainerError):
    code = "truncated_payload"
