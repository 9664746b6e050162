"""Exception types raised across the package."""


class MagVehicleError(Exception):
    """Base class for all package errors."""


# trace_io
class FormatError(MagVehicleError):
    pass


class ChannelMismatch(MagVehicleError):
    pass


class RangeError(MagVehicleError, ValueError):
    pass


class IoError(MagVehicleError, OSError):
    pass


# shared numeric preconditions
class InsufficientData(MagVehicleError, ValueError):
    pass


class NonFiniteInput(MagVehicleError, ValueError):
    pass


class ZeroEnergy(MagVehicleError, ValueError):
    pass


# detect
class NoQuietBaseline(MagVehicleError):
    pass


class TruncatedEvent(UserWarning):
    """Warning: an extracted segment was clipped by the trace edge or by max_event_len."""


# dsp
class InvalidFilterSpec(MagVehicleError, ValueError):
    pass


class DesignInfeasible(MagVehicleError):
    pass


class NumericalInstability(MagVehicleError):
    pass


class SpeedBelowMinimum(MagVehicleError, ValueError):
    pass


class UndefinedCorrelation(MagVehicleError):
    pass


# kinematics
class NoReliableMatch(MagVehicleError):
    pass


class ImplausibleLength(MagVehicleError):
    pass


class OutOfRange(MagVehicleError, ValueError):
    pass


# svm / hierarchy / autotune
class SingleClassError(MagVehicleError, ValueError):
    pass


class MissingClassError(MagVehicleError):
    def __init__(self, class_name):
        super().__init__(class_name)
        self.class_name = class_name


class StratificationError(MagVehicleError, ValueError):
    pass


# simgen
class ClippingError(MagVehicleError):
    pass
