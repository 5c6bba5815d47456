"""Exception hierarchy.

The CLI maps the three families onto exit codes: ``ConfigError`` -> 1,
``DataError`` -> 2, ``PreconditionError`` -> 3.
"""


class TouchpitError(Exception):
    pass


class ConfigError(TouchpitError):
    pass


class InvalidConfig(ConfigError):
    pass


class DataError(TouchpitError):
    pass


class MalformedRow(DataError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class UnknownDevice(DataError):
    pass


class EmptyScoreList(DataError):
    pass


class DegenerateStroke(DataError):
    pass


class DegenerateSample(DataError):
    pass


class NonFiniteFeature(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class EmptyTrainingSet(DataError):
    pass


class ZeroReferenceMean(DataError):
    pass


class PreconditionError(TouchpitError):
    pass


class NotEnoughUsers(PreconditionError):
    pass


class TooFewUsers(PreconditionError):
    pass


class TooFewSessions(PreconditionError):
    pass


class TooFewStrokes(PreconditionError):
    pass


class SingleClassTraining(PreconditionError):
    pass


class InsufficientNegativePool(PreconditionError):
    pass


class VariantPreconditionFailed(PreconditionError):
    pass
