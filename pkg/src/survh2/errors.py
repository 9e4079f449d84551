"""Exception types shared across the package.

The CLI maps these onto process exit codes: malformed or inconsistent
input exits with 2, numerical failures exit with 3, and missing files
(plain ``FileNotFoundError``) exit with 4.
"""

from __future__ import annotations


class SurvH2Error(Exception):
    """Base class for errors raised by this package."""


class InputFormatError(SurvH2Error):
    """Input files or arrays are malformed or mutually inconsistent."""


class NumericalError(SurvH2Error):
    """The data admit no usable estimate (degenerate or ill-conditioned)."""
