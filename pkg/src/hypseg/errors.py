"""Exception hierarchy shared by all modules."""


class HypsegError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""


class FormatError(HypsegError):
    pass


class UnsupportedDtype(HypsegError):
    pass


class RangeError(HypsegError):
    pass


class GeometryError(HypsegError):
    pass


class LabelInterpError(GeometryError):
    """Trilinear interpolation requested for a label payload."""


class LabelError(HypsegError):
    pass


class MaskError(HypsegError):
    pass


class DegenerateClusterError(HypsegError):
    pass


class ShapeError(HypsegError):
    pass


class StateError(HypsegError):
    pass


class ConfigError(HypsegError):
    pass


class DataError(HypsegError):
    pass


class EmptySetError(DataError):
    pass


class DegenerateError(DataError):
    pass
