"""Exception types raised across pmle_lab."""


class PmleLabError(Exception):
    """Base class; CLI maps every subclass to exit code 1."""


class InvalidInput(PmleLabError, ValueError):
    pass


class InvalidMatrix(InvalidInput):
    pass


class SingularMatrix(PmleLabError, ArithmeticError):
    pass


class InvalidEntropySequence(InvalidInput):
    pass


class InvalidPenalizedShape(InvalidInput):
    pass


class InvalidWeight(InvalidInput):
    pass


class OutOfValidRange(InvalidInput):
    pass


class InvalidLemmaInput(InvalidInput):
    pass


class GConstraintViolated(InvalidInput):
    pass


class InvalidSmoothness(InvalidInput):
    pass


class LinkOverflow(PmleLabError, ArithmeticError):
    pass


class NotConverged(PmleLabError, RuntimeError):
    def __init__(self, msg, result=None):
        super().__init__(msg)
        self.result = result


class SolverInconsistency(PmleLabError, RuntimeError):
    pass


class InvalidWeightOrder(InvalidInput):
    pass


class NoConcentrationRadius(PmleLabError, RuntimeError):
    pass


class LevelTooLarge(InvalidInput):
    pass


class ExperimentDegenerate(PmleLabError, RuntimeError):
    pass


class AggregationMismatch(InvalidInput):
    pass


class ConfigError(InvalidInput):
    pass
