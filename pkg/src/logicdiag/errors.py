"""Exception hierarchy shared by all engine modules.

The CLI maps these onto its exit-code contract: validation problems
(bad files, bad shapes, bad flags values) are user-facing data errors,
while ContractViolation signals an internal invariant failure.
"""


class LogicDiagError(Exception):
    """Base class for every error raised by this package."""


class HierarchyFormatError(LogicDiagError):
    """Malformed, ambiguous, or structurally invalid hierarchy file."""


class ValidationError(LogicDiagError):
    """Invalid argument or data passed to an engine operation."""


class DiagnosisBoundExceeded(LogicDiagError):
    """No diagnosis exists within the configured flip-set cardinality bound.

    Distinct from the consistent case (which yields an empty diagnosis
    list); callers that treat un-repairable rows as ignorable catch this.
    """

    def __init__(self, max_cardinality: int):
        super().__init__(
            f"no diagnosis within cardinality bound {max_cardinality}"
        )
        self.max_cardinality = max_cardinality


class TensorFormatError(LogicDiagError):
    """Base class for tensor-file format errors."""


class BadMagicError(TensorFormatError):
    """File does not start with the expected magic bytes."""


class DimensionError(TensorFormatError):
    """Header dtype/ndim/dims are invalid or do not match expectations."""


class TruncatedPayloadError(TensorFormatError):
    """Declared dimensions require more payload bytes than the file holds."""


class ContractViolation(LogicDiagError):
    """An internal invariant failed; indicates a bug, not bad input."""
