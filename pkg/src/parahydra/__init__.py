"""Distributed multi-view image compression with parallax attention.

Each view is encoded independently; all views are decoded jointly.
"""

from .config import FULL, LAMBDAS, TOY, ModelConfig
from .model import ParaHydra

__all__ = ["FULL", "LAMBDAS", "TOY", "ModelConfig", "ParaHydra"]
__version__ = "0.1.0"
