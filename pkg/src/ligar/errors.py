"""Error taxonomy shared by the library and the command line.

ConfigError covers bad configuration or usage, DataError covers missing
or malformed datasets, and numerical failures reuse
:class:`ligar.tape.NumericsError`.  The CLI maps these onto exit codes.
"""

from __future__ import annotations


class ConfigError(Exception):
    """Invalid configuration value, file, or command usage."""


class DataError(Exception):
    """Dataset files missing, malformed, or inconsistent."""
