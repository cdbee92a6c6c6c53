"""Stochastic ReLU for two-party private inference.

Garbled sign tests on truncated shares, their fault model, and an
offline/online two-party protocol built on them.
"""

from .circuit import Mode, Variant
from .field import DEFAULT_PARAMS, DEFAULT_PRIME, FieldParams
from .nn import Model, StochasticReluConfig, infer_plain, infer_stochastic
from .protocol import SessionConfig, offline_phase, private_inference

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_PARAMS",
    "DEFAULT_PRIME",
    "FieldParams",
    "Mode",
    "Model",
    "SessionConfig",
    "StochasticReluConfig",
    "Variant",
    "infer_plain",
    "infer_stochastic",
    "offline_phase",
    "private_inference",
]
