"""Minimum-time quadrotor trajectories in transverse coordinates along a frame path."""

__version__ = "0.1.0"
