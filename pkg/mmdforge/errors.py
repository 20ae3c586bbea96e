r"""
Exception types raised across :mod:`mmdforge`.

Every error subclasses the builtin a caller would naturally catch
(:class:`ValueError` for bad inputs, :class:`RuntimeError` for training
failures), so ``except ValueError`` keeps working.
"""


class MmdForgeError(Exception):
    r"""Root of all :mod:`mmdforge` errors."""


class DimensionError(MmdForgeError, ValueError):
    r"""Operands have incompatible shapes."""


class ContractError(MmdForgeError, ValueError):
    r"""A documented precondition of an operation was violated."""


class NumericError(MmdForgeError, FloatingPointError):
    r"""A primitive produced NaN or Inf.

    Args:
        primitive (str): Name of the offending primitive.
        message (str, optional): Extra detail.
    """
    def __init__(self, primitive, message=None):
        self.primitive = primitive
        text = f"Primitive '{primitive}' produced non-finite values."
        if message:
            text = f"{text} {message}"
        super(NumericError, self).__init__(text)


class InsufficientSampleError(MmdForgeError, ValueError):
    r"""A sample is too small for the requested estimator."""


class ParseError(MmdForgeError, ValueError):
    r"""A data file could not be parsed.

    Args:
        path (str): File being parsed.
        line (int): 1-based line number of the offending row.
        message (str): What went wrong.
    """
    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        super(ParseError, self).__init__(f"{path}:{line}: {message}")


class ConfigError(MmdForgeError, ValueError):
    r"""A run configuration is malformed.

    Args:
        message (str): What went wrong.
        path (str, optional): Config file name.
        line (int, optional): 1-based line number.
        key (str, optional): Offending ``section.key``.
    """
    def __init__(self, message, path=None, line=None, key=None):
        self.path = path
        self.line = line
        self.key = key
        location = []
        if path is not None:
            location.append(str(path))
        if line is not None:
            location.append(str(line))
        prefix = ":".join(location)
        if key is not None:
            message = f"{message} (key '{key}')"
        super(ConfigError, self).__init__(
            f"{prefix}: {message}" if prefix else message
        )


class CheckpointError(MmdForgeError, ValueError):
    r"""A checkpoint file is unreadable or has the wrong version."""


class DivergenceError(MmdForgeError, RuntimeError):
    r"""Training produced a non-finite loss.

    Args:
        message (str): Description of the failing step.
        snapshot (dict, optional): Diagnostic values at the failing step.
    """
    def __init__(self, message, snapshot=None):
        self.snapshot = dict(snapshot or {})
        super(DivergenceError, self).__init__(message)
