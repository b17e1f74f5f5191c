"""Numerical toolkit for the quasilinear conductivity equation and the recovery of
an anisotropic conductivity from its Dirichlet-to-Neumann data."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"
