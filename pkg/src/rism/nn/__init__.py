from .autograd import Tensor, debug_checks, no_grad
from .network import IsmNetwork, IsmOutput, NetworkConfig
from .optim import Adam, adam_step
from .weights import WeightFileError, load_weights, read_weights, save_weights

__all__ = [
    "Tensor",
    "no_grad",
    "debug_checks",
    "IsmNetwork",
    "IsmOutput",
    "NetworkConfig",
    "Adam",
    "adam_step",
    "WeightFileError",
    "save_weights",
    "load_weights",
    "read_weights",
]
