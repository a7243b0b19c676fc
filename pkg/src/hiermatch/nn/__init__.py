"""Dense-network primitives, gradients, Adam and the pose losses."""
from .autograd import Tensor, concat, l2_normalize, param
from .layers import DenseStack, ParamView, maxpool, shared_mlp_forward, sigmoid, softmax
from .losses import LossConfig, loss_total, loss_total_grad, rotation_loss, translation_loss
from .optim import AdamState, adam_step, scheduled_lr
from .serialize import load_params, save_params

__all__ = [
    "Tensor", "concat", "l2_normalize", "param",
    "DenseStack", "ParamView", "maxpool", "shared_mlp_forward", "sigmoid", "softmax",
    "LossConfig", "loss_total", "loss_total_grad", "rotation_loss", "translation_loss",
    "AdamState", "adam_step", "scheduled_lr",
    "load_params", "save_params",
]
