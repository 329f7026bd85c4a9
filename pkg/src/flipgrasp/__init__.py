"""Hierarchical RL for occluded grasping with a learned wall-assisted flip.

A high-level fully convolutional Q network picks a primitive (push, flip,
grasp) and its start pose from a height map; a low-level Q network drives
the flip from force and pose feedback.  Everything runs on a small
quasi-static simulator built on numpy.
"""
from .config import RunConfig, load_config, parse_config
from .sim import Simulator

__all__ = ["RunConfig", "load_config", "parse_config", "Simulator"]
__version__ = "0.1.0"
