"""Exception hierarchy.

Every library error derives from :class:`DiffGofError`. The CLI maps
:class:`NumericalFailure` subclasses to exit code 3 and
:class:`ConfigError` to exit code 2.
"""


class DiffGofError(Exception):
    pass


class ConfigError(DiffGofError, ValueError):
    pass


class NumericalFailure(DiffGofError):
    pass


class QuadratureDivergence(NumericalFailure):
    """An improper integral (e.g. the normalizer G(S)) does not converge.

    ``report`` holds the partial :class:`~diffgof.model.ConditionsReport`
    when raised from :func:`~diffgof.model.check_conditions`.
    """

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class NormalizationFailure(NumericalFailure):
    pass


class TailDivergence(NumericalFailure):
    pass


class DomainError(DiffGofError, ValueError):
    pass


class GridMismatch(DiffGofError, ValueError):
    pass


class GridTooNarrow(NumericalFailure):
    pass


class BlowupError(NumericalFailure):
    pass


class WeightVanishes(NumericalFailure):
    pass


class LevelNotTabulated(DiffGofError, KeyError):
    pass


class InsufficientSamples(DiffGofError, ValueError):
    pass


class VersionMismatch(DiffGofError):
    pass


class CorruptFile(DiffGofError):
    pass


class MissingInputs(DiffGofError, FileNotFoundError):
    pass


class MedianDependsOnTheta(DiffGofError, ValueError):
    pass
