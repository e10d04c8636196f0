"""Exception hierarchy shared by every module of the package."""


class TripPredictionError(Exception):
    """Base class for all errors raised by tripneighbors."""


class InvalidValueError(TripPredictionError, ValueError):
    """A value type was constructed with data violating its invariants."""


class DuplicateEntityError(TripPredictionError):
    def __init__(self, key):
        self.key = key
        super().__init__(f"duplicate entity key: {key}")


class UnknownEntityError(TripPredictionError, KeyError):
    def __init__(self, key):
        self.key = key
        super().__init__(f"unknown entity: {key}")

    def __str__(self):
        return self.args[0]


class UnsupportedTripError(TripPredictionError):
    """Raised for multi-leg trips (non-empty via list) reaching a metric."""


class AlignmentError(TripPredictionError):
    """The ordered distance was asked to compare histories of unequal length."""


class EmptyHistoryError(TripPredictionError):
    pass


class NegativeSimilarityError(TripPredictionError):
    pass


class CannotSplitError(TripPredictionError):
    pass


class EmptyPoolError(TripPredictionError):
    pass


class NonNegativityError(TripPredictionError):
    pass


class RankError(TripPredictionError):
    pass


class DegenerateInputError(TripPredictionError):
    pass


class SchemaError(TripPredictionError):
    pass


class EvaluationIncompleteError(TripPredictionError):
    def __init__(self, key, what):
        self.key = key
        super().__init__(f"cannot evaluate {key}: missing {what}")
