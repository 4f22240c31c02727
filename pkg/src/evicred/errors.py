"""Exception types shared across the package."""


class EvicredError(Exception):
    """Base class for every error this package raises deliberately."""


class ShapeError(EvicredError):
    """Operands have incompatible dimensions; the message names both shapes."""


class ContractError(EvicredError):
    """A caller violated a documented precondition."""


class DegenerateInputError(EvicredError):
    """Input is structurally valid but too empty or too uniform to process."""


class ParseError(EvicredError):
    """A data file could not be read; the message points at the offending spot."""


class UsageError(EvicredError):
    """A caller asked for an option that does not exist."""
