""" Exceptions shared by all mvmatch modules.

Every error raised by the library derives from MvMatchError. DataError
covers anything wrong with the input data (malformed files, infeasible
clustering instances, degenerate geometry); the command line maps it to
exit code 2. ConfigError covers bad settings and maps to exit code 1.

"""


class MvMatchError(Exception):
    pass


class DataError(MvMatchError):
    pass


class ConfigError(MvMatchError):
    pass


class IoError(MvMatchError, OSError):
    """ Thrown when an output file cannot be written. """
    pass


# io

class ParseError(DataError):
    """ Thrown when a record cannot be parsed. """
    pass


class SchemaError(DataError):
    """ Thrown when a parsed record violates an invariant. """
    pass


# tracking / embedding

class MixedCameraError(DataError):
    pass


class ZeroVectorError(DataError):
    pass


class EmptyTrackError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


# clustering

class InfeasibleError(DataError):
    pass


class NoEligibleClusterError(DataError):
    pass


# geometry

class DegenerateError(DataError):
    pass


class InsufficientInliersError(DataError):
    pass


class DisconnectedGraphError(DataError):

    def __init__(self, unreachable):
        self.unreachable = sorted(unreachable)
        super().__init__('cameras not connected to the reference: %s'
                         % ', '.join(map(str, self.unreachable)))


class BehindCameraError(DataError):
    pass


class NoLegObservedError(DataError):
    pass


class NonConvergenceError(DataError):
    """ Bundle adjustment hit its iteration cap. The best iterate is kept. """

    def __init__(self, msg, skeletons=None, poses=None, rmse=None):
        super().__init__(msg)
        self.skeletons = skeletons
        self.poses = poses
        self.rmse = rmse


# metrics / synth

class LengthMismatchError(DataError):
    pass


class SpecError(DataError):
    pass
