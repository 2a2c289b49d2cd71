"""Kinematic synthesis of an anthropomorphic robotic hand and its thumb placement."""

from handforge.errors import GridTooSmall, HandforgeError, InvalidInput, NoFeasibleCandidate, Undefined
from handforge.hand import HandModel, ThumbBase, build_hand, default_hand

__version__ = "0.1.0"

__all__ = [
    "GridTooSmall",
    "HandModel",
    "HandforgeError",
    "InvalidInput",
    "NoFeasibleCandidate",
    "ThumbBase",
    "Undefined",
    "build_hand",
    "default_hand",
]
