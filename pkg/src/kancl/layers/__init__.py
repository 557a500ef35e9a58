from .base import GradientTape, Layer, TapeError
from .classic import Activation, BatchNorm, Conv2d, Dense, Flatten, MaxPool2d
from .kan import KanConv2d, KanLinear, fold, unfold
from .loss import half_mse, mse, softmax, softmax_cross_entropy

__all__ = [
    "Activation", "BatchNorm", "Conv2d", "Dense", "Flatten", "GradientTape", "KanConv2d", "KanLinear",
    "Layer", "MaxPool2d", "TapeError", "fold", "half_mse", "mse", "softmax", "softmax_cross_entropy", "unfold",
]
