class SbauthError(Exception):
    pass


class ParameterError(SbauthError, ValueError):
    pass


class DimensionMismatchError(ParameterError):
    pass


class DatasetFormatError(SbauthError, ValueError):
    pass


class StoreCorruptionError(DatasetFormatError):
    pass


class EstimationError(SbauthError, ValueError):
    pass


class DegenerateStatisticsError(EstimationError):
    pass


class KeyNotProvisionedError(SbauthError, KeyError):
    pass


class AlreadyEnrolledError(SbauthError):
    pass


class UnknownIdentityError(SbauthError, KeyError):
    pass


class ProtocolError(SbauthError, ValueError):
    pass


class PayloadTooLargeError(ProtocolError):
    pass
