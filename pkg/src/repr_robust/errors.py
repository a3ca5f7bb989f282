"""Exception hierarchy shared by all modules."""


class ToolkitError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(ToolkitError):
    """Operands passed to a primitive do not have compatible shapes."""

    def __init__(self, primitive, *shapes):
        self.primitive = primitive
        self.shapes = tuple(tuple(s) for s in shapes)
        pretty = " vs ".join(str(s) for s in self.shapes)
        super().__init__(f"{primitive}: incompatible shapes {pretty}")


class GraphError(ToolkitError):
    """Misuse of the differentiation tape (non-scalar root, detached root, ...)."""


class DomainError(ToolkitError):
    """Input values outside the documented domain of an operation."""


class ConfigError(ToolkitError):
    """Invalid configuration value."""


class CheckpointError(ToolkitError):
    """Corrupt, truncated or inconsistent checkpoint/dataset file."""


class DataError(ToolkitError):
    """Invalid dataset request (bad split fractions, sample count, ...)."""
