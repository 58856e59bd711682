"""Exception hierarchy shared by every stage of the FSI / ROM pipeline."""


class FsiRomError(Exception):
    """Base class for all errors raised by :mod:`fsirom`."""


class SingularMatrix(FsiRomError):
    pass


class NotSymmetric(FsiRomError):
    pass


class GeometryFailure(FsiRomError):
    pass


class ParseError(FsiRomError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MeshValidationError(FsiRomError):
    pass


class TangledMesh(FsiRomError):
    pass


class DegenerateCell(FsiRomError):
    pass


class NewtonDiverged(FsiRomError):
    pass


class MeshFixedPointDiverged(FsiRomError):
    pass


class StepFailure(FsiRomError):
    """Wraps a step error together with the failing time-step index."""

    def __init__(self, step, time, cause):
        self.step = step
        self.time = time
        self.cause = cause
        super().__init__(f"step {step} (t={time:.6g}s) failed: {cause!r}")


class NonDivisible(FsiRomError):
    pass


class MissingState(FsiRomError):
    pass


class RankDeficient(FsiRomError):
    pass


class ZeroEnergy(FsiRomError):
    pass


class DimensionMismatch(FsiRomError):
    pass


class ZeroNorm(FsiRomError):
    pass


class ConfigError(FsiRomError):
    pass
