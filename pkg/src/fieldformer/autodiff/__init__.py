from . import functional
from .graph import Graph, ParamStore, coordinate_partials, finite_difference_grads, gradcheck
from .jet import Jet
from .tensor import (
    AutodiffError,
    NonFiniteError,
    ShapeError,
    Tensor,
    UnsupportedOperation,
    backward,
    check_finite,
    grad,
    no_grad,
)

__all__ = [
    "AutodiffError",
    "Graph",
    "Jet",
    "NonFiniteError",
    "ParamStore",
    "ShapeError",
    "Tensor",
    "UnsupportedOperation",
    "backward",
    "check_finite",
    "coordinate_partials",
    "finite_difference_grads",
    "functional",
    "grad",
    "gradcheck",
    "no_grad",
]
