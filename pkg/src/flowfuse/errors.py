"""Error taxonomy shared by the CLI and the library.

Exit-code mapping lives in cli.py: ConfigError -> 2, DataError -> 3,
NumericError -> 4. Library code raises plain ValueError for contract
violations that indicate a programming mistake rather than bad input.
"""


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


class DataError(Exception):
    """Missing, malformed, or mutually inconsistent input data."""


class NumericError(Exception):
    """Non-finite values produced where finite ones are required."""
