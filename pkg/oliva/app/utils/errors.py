"""Exception hierarchy shared by every estimation module and the CLI.

Input errors map to CLI exit code 2, numerical failures to exit code 3.
Every error carries a `context` dict that the CLI prints as structured JSON.
"""


class OlivaError(Exception):
    """Base class. Keyword arguments become the structured `context`."""

    hint: str | None = None

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.message = message
        self.context = context

    def to_dict(self) -> dict:
        payload = {
            'error': type(self).__name__,
            'message': self.message,
            'context': {k: _jsonable(v) for k, v in self.context.items()},
        }
        if self.hint:
            payload['hint'] = self.hint
        return payload


def _jsonable(value):
    try:
        return value.item()
    except (AttributeError, ValueError):
        pass
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)


class InputError(OlivaError):
    exit_code = 2


class DegenerateInputError(InputError):
    """A regressor or instrument column is constant."""


class InsufficientDataError(InputError):
    """Too few observations for the requested basis size."""


class ShapeMismatchError(InputError):
    pass


class SchemaMismatchError(InputError):
    """Out-of-sample input does not match the training schema."""


class InvalidTuningError(InputError):
    pass


class InvalidLevelError(InputError):
    pass


class InvalidDgpError(InputError):
    pass


class UnsupportedDegreeError(InputError):
    pass


class InsufficientSamplesError(InputError):
    pass


class ParseError(InputError):
    """CSV could not be parsed; context carries the row and column."""


class RoleError(InputError):
    """Column roles are missing, unknown or overlapping."""


class ConfigError(InputError):
    pass


class NumericalError(OlivaError):
    exit_code = 3


class RankDeficientError(NumericalError):
    hint = 'reduce the number of basis functions or drop collinear columns'


class SingularSystemError(NumericalError):
    hint = 'enlarge the lambda grid towards larger values'


class InstrumentRankDeficientError(NumericalError):
    """Hn'X is numerically singular: the estimated instrument is too weak."""

    hint = 'the first stage is weak; try a richer instrument basis or larger lambda'


class DegenerateTraceError(NumericalError):
    pass


class AllScoresInfiniteError(NumericalError):
    hint = 'enlarge the lambda grid or reduce j'


class DegenerateTreatmentError(NumericalError):
    pass


class ConstantPropensityError(NumericalError):
    pass


class WeakPropensityError(NumericalError):
    pass


class CollinearAugmentationError(NumericalError):
    """The first-stage residual lies in the span of X."""


class ExtrapolationWarning(UserWarning):
    """A continuous basis was evaluated outside its training range."""
