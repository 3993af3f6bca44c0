"""Exception roots shared by the pipeline.

`main.py` maps each root to an exit status; modules raise narrower subclasses.
"""


class ConfigError(Exception):
    """Raised when a run configuration or model spec is invalid."""
    pass


class DataError(Exception):
    """Raised when input data cannot be read, validated or assembled."""
    pass


class FitError(Exception):
    """Raised when model fitting, evaluation or explanation fails at runtime."""
    pass
