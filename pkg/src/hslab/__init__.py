"""Eigen-decomposition laboratory for long-maturity sensitivities of diffusion prices."""

__version__ = "0.1.0"

from .catalog import (CevParams, CirParams, ThreeHalvesParams, closed_form, model_chain,  # noqa: E402
                      price_closed, sensitivity_limits)
from .core import DecompositionChain, Eigenpair, Quadruple, ScalarField, StateInterval  # noqa: E402
from .montecarlo import Estimate, PathConfig  # noqa: E402

__all__ = [
    "CevParams", "CirParams", "ThreeHalvesParams", "closed_form", "model_chain", "price_closed",
    "sensitivity_limits", "DecompositionChain", "Eigenpair", "Quadruple", "ScalarField",
    "StateInterval", "Estimate", "PathConfig", "__version__",
]
