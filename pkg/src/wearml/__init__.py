"""Wearable-sensor machine learning: minute-level models, baselines, evaluation."""

from importlib import import_module

__version__ = "0.1.0"

# Lazy exports keep `import wearml` free of numpy, so the CLI can pin
# BLAS thread counts through the environment before numpy loads.
_EXPORTS = {
    "RngStream": ".rng",
    "Tape": ".tensor",
    "Tensor": ".tensor",
}

__all__ = ["RngStream", "Tape", "Tensor", "__version__"]


def __getattr__(name: str):
    if name in _EXPORTS:
        return getattr(import_module(_EXPORTS[name], __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


def __dir__():
    return sorted(set(globals()) | set(_EXPORTS))
