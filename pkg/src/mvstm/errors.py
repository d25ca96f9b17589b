"""Exception types shared across the package."""


class MvstmError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(MvstmError):
    """Malformed input file; message names the offending line."""


class ValidationError(MvstmError):
    """Record violates a declared invariant; message names the field."""


class ConfigError(MvstmError):
    """Invalid configuration value."""


class GraphLookupError(MvstmError):
    """A referenced node is absent from the road network."""


class ShapeError(MvstmError):
    """Operand shapes are incompatible; message names both shapes."""


class NumericError(MvstmError):
    """A computation produced non-finite values."""


class ContractError(MvstmError):
    """A caller broke an API contract (misaligned inputs, non-scalar loss)."""


class CheckpointError(MvstmError):
    """A checkpoint or embedding file cannot be loaded."""
