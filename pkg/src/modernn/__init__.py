"""ModeRNN: slot-structured recurrent video prediction, self-contained.

Subpackages are imported lazily so the command-line front end can configure
thread environment variables before numpy first loads.
"""

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]


def __getattr__(name):
    if name == "KERNEL_BACKEND":
        from . import kernels
        return kernels.BACKEND
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
