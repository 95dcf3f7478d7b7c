"""Core package for the GMPPI quadrotor flight controller and its forest simulator."""

__all__ = [
    "core",
    "dynamics",
    "se3_controller",
    "trajectories",
    "perception",
    "streams",
    "gmppi",
    "forest",
    "rendering",
    "simulator",
    "config",
    "artifacts",
    "bench",
    "cli",
]
