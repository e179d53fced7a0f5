"""Neural stochastic delay differential equations for irregularly sampled time series."""

from .model import ModelConfig, NeuralLSDEModel, NeuralSDDEModel, Prediction, predict
from .path import IrregularSeries, build_path, eval_path
from .solver import forward_integrate, backward_adjoint, make_grid, sample_noise

__version__ = "0.1.0"

__all__ = [
    "IrregularSeries",
    "ModelConfig",
    "NeuralLSDEModel",
    "NeuralSDDEModel",
    "Prediction",
    "backward_adjoint",
    "build_path",
    "eval_path",
    "forward_integrate",
    "make_grid",
    "predict",
    "sample_noise",
]
