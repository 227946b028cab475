"""Exception hierarchy.

Everything raised deliberately by the package derives from ``DualMeshError``.
``DataError`` subclasses describe bad input data (the CLI maps them to exit
code 2); the rest are programming or configuration errors.
"""


class DualMeshError(Exception):
    pass


class DataError(DualMeshError):
    pass


class ParseError(DataError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class ValidationError(DataError):
    pass


class NonManifoldError(ValidationError):
    def __init__(self, message, edges=()):
        self.edges = list(edges)
        super().__init__(message)


class DegenerateFaceError(DataError):
    def __init__(self, message, faces=()):
        self.faces = list(faces)
        super().__init__(message)


class IsolatedVertexError(DataError):
    pass


class DisconnectedError(DataError):
    def __init__(self, message, unreachable=()):
        self.unreachable = list(unreachable)
        super().__init__(message)


class LabelOutOfRangeError(DataError):
    pass


class TargetUnreachableError(DataError):
    pass


class EmptySelectionError(DualMeshError):
    pass


class ShapeMismatchError(DualMeshError):
    pass


class StateMissingError(DualMeshError):
    pass


class NonFiniteError(DualMeshError):
    pass


class NonFiniteLossError(NonFiniteError):
    def __init__(self, message, epoch=None):
        self.epoch = epoch
        super().__init__(message)


class ConfigError(DualMeshError):
    pass


class CheckpointError(DataError):
    pass


class VersionError(CheckpointError):
    pass


class CorruptionError(CheckpointError):
    pass


class FeatureMismatchError(CheckpointError):
    pass
