"""Exception types raised by the sampler and its I/O layer."""


class ParameterDomainError(ValueError):
    """A distribution or model parameter lies outside its valid domain."""


class NotPositiveDefiniteError(ParameterDomainError):
    def __init__(self, name, detail=""):
        self.name = name
        msg = f"matrix {name!r} is not symmetric positive definite"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class InsufficientSticksError(RuntimeError):
    """The materialised stick vector is too short to certify C*."""


class StickExtensionError(RuntimeError):
    """Stick extension exceeded its iteration cap."""


class ImpossibleStateError(RuntimeError):
    """An individual has no admissible cluster during allocation."""


class DataError(ValueError):
    def __init__(self, message, row=None, column=None, path=None):
        self.message = message
        self.row = row
        self.column = column
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"line {row}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class ConfigError(ValueError):
    """Unknown or malformed configuration entry."""


class SamplerError(RuntimeError):
    def __init__(self, sweep, step, cause):
        self.sweep = sweep
        self.step = step
        self.cause = cause
        super().__init__(f"sweep {sweep}, step {step}: {cause}")
