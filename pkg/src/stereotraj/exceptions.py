"""Exception hierarchy.

Every error belongs to one family; the CLI maps families to exit codes
(parse=2, numerical=3, infeasible=4, io=5).
"""


class StereoTrajError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ParseError(StereoTrajError):
    exit_code = 2


class DanglingReference(ParseError):
    pass


class DuplicateCamera(ParseError):
    pass


class NumericalError(StereoTrajError):
    exit_code = 3


class PointBehindCamera(NumericalError):
    pass


class DegenerateBaseline(NumericalError):
    pass


class NumericalFailure(NumericalError):
    pass


class DidNotConverge(NumericalError):
    pass


class NonPositiveScale(NumericalError, ValueError):
    pass


class ScaleMismatch(NumericalError):
    pass


class InfeasibleError(StereoTrajError):
    exit_code = 4


class InfeasibleScene(InfeasibleError):
    pass


class NoCommonFrames(InfeasibleError):
    pass


class NoStereoFrames(InfeasibleError):
    pass


class EmptyProblem(InfeasibleError):
    pass


class EmptyPrediction(InfeasibleError):
    pass


class FrameOrderError(InfeasibleError):
    pass


class FrameMismatch(InfeasibleError):
    pass


class UnknownCamera(InfeasibleError, KeyError):
    pass


class IoError(StereoTrajError, OSError):
    exit_code = 5
