from .base import HartreeLab
from .persistence import RunWriter

__all__ = ["HartreeLab", "RunWriter"]
