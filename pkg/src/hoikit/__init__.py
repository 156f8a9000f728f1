"""hoikit: hand-object trajectory synthesis and task-space residual control."""

__version__ = "0.1.0"

from .errors import HoikitError

__all__ = ["HoikitError", "__version__"]
