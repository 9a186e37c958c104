"""Opinion dynamics on graphs: classical models, synthetic data, and the OPINN
forecaster (GRU encoder, neural diffusion-convection-reaction ODE, MLP decoder).
"""

from .classical import ClassicalConfig, simulate
from .dynamics import DcrField
from .errors import (
    DatasetFormatError,
    DegenerateInputError,
    DivergenceError,
    InvalidParameterError,
    NonConvergenceError,
    OpinnError,
    ShapeError,
)
from .evaluation import EvalReport, MechanicalBaseline, SplitSpec, evaluate, mae, rmse
from .graph import Graph, generate_ba_graph, neighbor_list, propagation_operator
from .model import OpinnConfig, OpinnModel, TrainReport, grid_search, train
from .odesolve import SolverConfig, integrate
from .synthgen import Dataset, SynthConfig, generate, load_dataset, save_dataset

__version__ = "0.1.0"

__all__ = [
    "ClassicalConfig", "simulate", "DcrField", "DatasetFormatError", "DegenerateInputError",
    "DivergenceError", "InvalidParameterError", "NonConvergenceError", "OpinnError", "ShapeError",
    "EvalReport", "MechanicalBaseline", "SplitSpec", "evaluate", "mae", "rmse", "Graph",
    "generate_ba_graph", "neighbor_list", "propagation_operator", "OpinnConfig", "OpinnModel",
    "TrainReport", "grid_search", "train", "SolverConfig", "integrate", "Dataset", "SynthConfig",
    "generate", "load_dataset", "save_dataset",
]
