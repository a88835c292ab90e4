from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import grad_check, grad_check_layer
from .layers import layer_backward, layer_forward
from .losses import dice_loss, loss_hyp, loss_sub, softmax_channels
from .optim import adam_step
from .train import EarlyStopper, TrainConfig, TrainReport, train_hyp, train_sub
from .unet import Model, UNet, UNetConfig, build_unet

__all__ = [
    "EarlyStopper", "Model", "TrainConfig", "TrainReport", "UNet", "UNetConfig", "adam_step",
    "build_unet", "dice_loss", "grad_check", "grad_check_layer", "layer_backward", "layer_forward",
    "load_checkpoint", "loss_hyp", "loss_sub", "save_checkpoint", "softmax_channels",
    "train_hyp", "train_sub",
]
