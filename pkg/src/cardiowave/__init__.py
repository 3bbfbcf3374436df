"""cardiowave: coupled ventricle / 1D arterial pulse-wave simulation engine."""

__version__ = "0.1.0"

from . import errors  # noqa: F401

__all__ = ["errors", "__version__"]
