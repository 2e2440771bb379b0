"""Decentralized cooperative inertial navigation with zero-velocity updates."""

__version__ = "0.1.0"
