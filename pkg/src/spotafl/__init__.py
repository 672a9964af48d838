"""Simulator for secure and private over-the-air federated learning."""

from spotafl._kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
