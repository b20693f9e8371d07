"""MSCNet salient object detection on a small numpy autograd engine."""
from .engine import Tensor, default_dtype, gradcheck, no_grad
from .losses import LossConfig, bce_loss, iou_loss, total_loss
from .metrics import MetricsReport, evaluate_map
from .model import ModelConfig, MSCNet, count_params, load_weights, save_weights
from .train import TrainConfig, evaluate, infer, train

__version__ = "0.1.0"

__all__ = [
    "Tensor", "default_dtype", "gradcheck", "no_grad", "LossConfig", "bce_loss", "iou_loss",
    "total_loss", "MetricsReport", "evaluate_map", "ModelConfig", "MSCNet", "count_params",
    "load_weights", "save_weights", "TrainConfig", "evaluate", "infer", "train",
]
