"""
greybox quantum optimal control package
"""

__version__ = "1.0.0"

from .pipeline import Pipeline  # noqa: F401
from .exceptions import QGreyboxError  # noqa: F401
