"""Exception hierarchy shared by the library and the command-line tool."""


class EgonoiseError(Exception):
    """Base class for all errors raised by :mod:`egonoise`."""

    exit_code = 3


class DataError(EgonoiseError, ValueError):
    """Input data is malformed, mismatched or degenerate."""

    exit_code = 3


class ConfigError(EgonoiseError, ValueError):
    """Configuration file or parameter set is invalid."""

    exit_code = 2


class DivergenceError(EgonoiseError, FloatingPointError):
    """The adaptive filter produced a non-finite state.

    Attributes
    ----------
    bin_index : int
        Frequency bin in which the recursion blew up.
    frame_index : int or None
        Frame at which the problem was detected, when known.
    """

    exit_code = 4

    def __init__(self, bin_index, frame_index=None):
        self.bin_index = int(bin_index)
        self.frame_index = None if frame_index is None else int(frame_index)
        where = f"bin {self.bin_index}"
        if self.frame_index is not None:
            where += f", frame {self.frame_index}"
        super().__init__(f"RLS recursion diverged (non-finite state) in {where}")


class NoSourceDetected(DataError):
    """The steered power profile has no dominant peak."""
