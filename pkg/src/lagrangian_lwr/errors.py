"""Exception hierarchy shared by all modules."""


class LagrangianLWRError(Exception):
    """Base class for every error raised by this package."""


class InconsistentDiagram(LagrangianLWRError, ValueError):
    pass


class SpacingBelowJam(LagrangianLWRError, ValueError):
    pass


class ConjugateOutOfDomain(LagrangianLWRError, ValueError):
    pass


class DensityOutOfRange(LagrangianLWRError, ValueError):
    pass


class NonMonotoneLabels(LagrangianLWRError, ValueError):
    pass


class NonMonotoneTimes(LagrangianLWRError, ValueError):
    pass


class NegativeSpacing(LagrangianLWRError, ValueError):
    pass


class NegativeSpeed(LagrangianLWRError, ValueError):
    pass


# spelled as in the condition-builder contract; same failure as NegativeSpeed
SpeedNegative = NegativeSpeed


class InvalidCondition(LagrangianLWRError, ValueError):
    pass


class PointOutsideDomain(LagrangianLWRError, ValueError):
    pass


class GridTooCoarse(LagrangianLWRError, RuntimeError):
    pass


class ValueOutOfRange(LagrangianLWRError, ValueError):
    pass


class NotStrictlyMonotone(LagrangianLWRError, ValueError):
    pass


class PreconditionViolated(LagrangianLWRError, ValueError):
    pass


class EmptyTrajectory(LagrangianLWRError, ValueError):
    pass


class PositionNotReached(LagrangianLWRError, ValueError):
    pass


class CFLViolation(LagrangianLWRError, ValueError):
    pass


class NoCrossing(LagrangianLWRError, ValueError):
    pass


class UnknownScenario(LagrangianLWRError, KeyError):
    pass


class ConfigError(LagrangianLWRError, ValueError):
    pass
