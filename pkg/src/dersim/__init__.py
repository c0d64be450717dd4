"""Discrete elastic rod simulation with analytic validation and a fling task."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("dersim")
except PackageNotFoundError:
    __version__ = "0.1.0"
