"""Exception types shared across the toolkit."""


class RVELabError(Exception):
    """Base class for all toolkit errors."""


class InvalidSpec(RVELabError, ValueError):
    """A precondition on user-supplied parameters is violated."""


class JammingError(RVELabError):
    """Random sequential adsorption could not place every fibre."""

    def __init__(self, message, placed=0, requested=0):
        super().__init__(message)
        self.placed = placed
        self.requested = requested


class DegenerateError(RVELabError, ValueError):
    pass


class NoPairError(RVELabError):
    pass


class NonconformingMesh(RVELabError, ValueError):
    pass


class MeshTopologyError(RVELabError):
    pass


class RankDeficiency(RVELabError):
    """Constraint rows contradict each other after elimination."""


class SingularSystem(RVELabError):
    """Reduced stiffness is not symmetric positive definite."""


class NoCrack(RVELabError):
    pass


class NeverDamaged(RVELabError):
    pass


class NeverFailed(RVELabError):
    pass


class InadmissibleLocalization(RVELabError, ValueError):
    pass


class Undefined(RVELabError, ZeroDivisionError):
    """A ratio is undefined because its denominator vanishes."""


class DegenerateDenominator(Undefined):
    pass


class NoIntersection(RVELabError):
    pass
