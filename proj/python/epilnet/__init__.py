"""Python bindings for the EpilNet C++ core."""

from ._epilnet import *  # noqa: F401,F403
from ._epilnet import __version__, WINDOW_LENGTH

__all__ = [name for name in dir() if not name.startswith("_")]
