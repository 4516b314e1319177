"""Desk-scale reference network, reverse-mode gradients and ADAM training."""

from .adam import AdamState, adam_step
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import arrange, arrange_backward
from .model import NetConfig, TinyNet, batch_arrays
from .train import ListSource, OnlineSource, TrainConfig, Trainer, net_config_for, train

__all__ = [
    "AdamState", "adam_step", "load_checkpoint", "save_checkpoint", "arrange", "arrange_backward",
    "NetConfig", "TinyNet", "batch_arrays", "ListSource", "OnlineSource", "TrainConfig", "Trainer",
    "net_config_for", "train",
]
