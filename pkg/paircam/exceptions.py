class PaircamError(Exception):
    pass


class InvalidGridError(PaircamError, ValueError):
    pass


class InvalidDistributionError(PaircamError):
    def __init__(self, violations):
        self.violations = list(violations)
        message = "; ".join(str(v) for v in self.violations)
        super().__init__(f"Invalid joint distribution: {message}")


class PixelIndexError(PaircamError, IndexError):
    pass


class DomainError(PaircamError, ValueError):
    pass


class TruncationError(PaircamError):
    pass


class DimensionMismatchError(PaircamError, ValueError):
    pass


class InsufficientFramesError(PaircamError):
    pass


class SaturatedPixelError(PaircamError):
    def __init__(self, index, value):
        self.index = index
        self.value = value
        super().__init__(
            f"Pixel {index} is saturated (mean count {value:.6g}); "
            "the SPC inversion needs mean counts below 1."
        )


class NonPositiveLogArgumentError(PaircamError):
    def __init__(self, index, value):
        self.index = index
        self.value = value
        super().__init__(
            f"Log argument {value:.6g} at pixel pair {index} is not positive."
        )


class AllNonPositiveError(PaircamError):
    pass


class NonConvergenceError(PaircamError):
    def __init__(self, message, last_iterate=None, residual=None):
        self.last_iterate = last_iterate
        self.residual = residual
        super().__init__(message)


class FrameStackError(PaircamError):
    pass


class ModeMismatchError(PaircamError):
    pass


class UnknownOracleOperationError(PaircamError, ValueError):
    pass


class UnsupportedConfigFormatError(PaircamError, ValueError):
    pass


class NoFilepathError(PaircamError):
    pass
