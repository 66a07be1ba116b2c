class DFCVAEError(Exception):
    """Base class for all package errors."""


class ConfigError(DFCVAEError, ValueError):
    pass


class NumericError(DFCVAEError, ArithmeticError):
    pass


class ContractError(DFCVAEError, ValueError):
    """Inputs violate an operation's shape/tag contract."""


class CheckpointError(DFCVAEError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CorruptArchiveError(CheckpointError):
    pass


class MissingTensorError(CheckpointError, KeyError):
    def __init__(self, name: str, path=None):
        self.name = name
        where = f" in {path}" if path is not None else ""
        super().__init__(f"missing tensor {name!r}{where}")

    def __str__(self):
        return self.args[0]


class WeightLoadError(DFCVAEError):
    pass


class ParseError(DFCVAEError, ValueError):
    def __init__(self, message: str, path=None, line: int = None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix += f"{path}:"
        if line is not None:
            prefix += f"{line}:"
        super().__init__(f"{prefix} {message}" if prefix else message)


class DataError(DFCVAEError):
    pass


class NonFiniteLossError(NumericError):
    def __init__(self, message: str, snapshot_path=None):
        self.snapshot_path = snapshot_path
        if snapshot_path is not None:
            message += f" (diagnostic snapshot written to {snapshot_path})"
        super().__init__(message)
