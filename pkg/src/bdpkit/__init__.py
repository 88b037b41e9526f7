"""Simulation, transition probabilities, estimation and forecasting for
population-size-dependent birth-and-death processes."""

from importlib import import_module

__version__ = "0.1.0"

_SUBMODULES = ("models", "simulate", "linalg", "laplace", "probability", "optimize",
               "estimate", "uncertainty", "io", "expr", "cli")
_EXPORTS = {
    "builtin_model": "models", "custom_model": "models", "get_model": "models",
    "carrying_capacity": "models", "MODEL_LABELS": "models",
    "simulate_discrete": "simulate", "simulate_continuous": "simulate",
    "ObservedData": "estimate", "EstimationResult": "estimate",
    "forecast": "uncertainty", "confidence_ellipse": "uncertainty",
}

__all__ = sorted(_SUBMODULES + tuple(_EXPORTS))


def __getattr__(name):
    # submodules load on first use so that the CLI can set thread limits first
    if name in _SUBMODULES:
        return import_module(f".{name}", __name__)
    if name in _EXPORTS:
        return getattr(import_module(f".{_EXPORTS[name]}", __name__), name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
