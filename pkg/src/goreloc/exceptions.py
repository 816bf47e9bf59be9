"""Exception hierarchy for goreloc."""


class GorelocError(Exception):
    """Base class for all errors raised by goreloc."""


# geometry
class PointBehindCamera(GorelocError, ValueError):
    pass


class DegenerateConic(GorelocError, ValueError):
    pass


class EmptyBox(GorelocError, ValueError):
    pass


# semantics
class UnknownCategory(GorelocError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NoObservations(GorelocError, ValueError):
    pass


class ZeroDistribution(GorelocError, ValueError):
    pass


# graph
class UnknownNode(GorelocError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


# association
class InsufficientDetections(GorelocError):
    pass


class NoValidPose(GorelocError):
    pass


# pose
class DegenerateConfiguration(GorelocError, ValueError):
    pass


class NoSolution(GorelocError):
    pass


class NoInliers(GorelocError, ValueError):
    pass


class DivergedBehindCamera(GorelocError):
    pass


# evaluation
class NoGroundTruth(GorelocError, LookupError):
    pass


# file formats
class ParseError(GorelocError, ValueError):
    """Malformed input file. ``context`` names the offending line or field."""

    def __init__(self, message, context=None):
        self.context = context
        if context is not None:
            message = f"{context}: {message}"
        super().__init__(message)


class InvariantViolation(GorelocError, ValueError):
    pass
