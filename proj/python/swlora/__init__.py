"""Low-rank adapters with vector switching (C++ core)."""

from ._swlora import *  # noqa: F401,F403
from ._swlora import __doc__  # noqa: F401

__version__ = "0.1.0"
