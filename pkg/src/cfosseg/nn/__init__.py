from .io import WeightFormatError, load_params, save_params
from .layers import NumericError, check_finite
from .loss import bce_loss, bce_loss_grad
from .network import LayerSpec, Network
from .optim import AdamState, adam_init, adam_step

__all__ = [
    "AdamState",
    "LayerSpec",
    "Network",
    "NumericError",
    "WeightFormatError",
    "adam_init",
    "adam_step",
    "bce_loss",
    "bce_loss_grad",
    "check_finite",
    "load_params",
    "save_params",
]
