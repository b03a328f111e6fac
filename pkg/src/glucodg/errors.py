"""Exception types raised across the pipeline."""


class GlucoDGError(Exception):
    """Base class for all package errors."""


class SchemaMismatch(GlucoDGError):
    pass


class EmptyInput(GlucoDGError):
    pass


class EmptyStream(EmptyInput):
    pass


class AllMissingColumn(GlucoDGError):
    def __init__(self, feature):
        super().__init__(f"column {feature!r} has no present values")
        self.feature = feature


class OutOfRange(GlucoDGError):
    def __init__(self, t):
        super().__init__(f"query time {t!r} outside the glucose record span")
        self.t = t


class DegenerateInterval(GlucoDGError):
    pass


class TooFewSamples(GlucoDGError):
    pass


class TooFewDomains(GlucoDGError):
    pass


class TooFewGroups(GlucoDGError):
    pass


class DomainMismatch(GlucoDGError):
    pass


class InvalidAlpha(GlucoDGError):
    pass


class RankDeficient(GlucoDGError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = list(columns)


class NonConvergence(GlucoDGError):
    def __init__(self, iterations):
        super().__init__(f"variance-ratio search did not converge after {iterations} iterations")
        self.iterations = iterations


class ZeroVariance(GlucoDGError):
    pass


class PortionTooSmall(GlucoDGError):
    pass


class LengthMismatch(GlucoDGError):
    pass


class ZeroReference(GlucoDGError):
    pass


class InvalidConfig(GlucoDGError):
    pass


class LeakageError(GlucoDGError):
    """Target-domain rows reached a training routine."""
