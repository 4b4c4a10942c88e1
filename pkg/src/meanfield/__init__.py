"""Mean field equation on the flat torus: energy, bubbles, mountain pass."""

__version__ = "0.1.0"

from .functional import Params, eval_G, eval_I, residual, sobolev_gradient
from .torus import Field, MeanZeroField, TorusGrid

__all__ = [
    "Field",
    "MeanZeroField",
    "Params",
    "TorusGrid",
    "eval_G",
    "eval_I",
    "residual",
    "sobolev_gradient",
]
