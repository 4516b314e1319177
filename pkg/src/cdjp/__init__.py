"""Damaged-jigsaw pretext task: sample generation, losses, a small network and evaluation."""

from . import kernels
from .codebook import ColorCodebook, SoftLabel, build_codebook, encode_ab, fit_rebalance
from .colorspace import LabImage, RgbImage, drop_channels, lab_to_rgb, rgb_to_lab
from .errors import CDJPError
from .losses import LossBundle, combined_loss, compose_final, jigsaw_loss, nine_patch_color_loss, rebalanced_color_loss
from .permutation import Permutation, PermutationSet, full_set, greedy_max_hamming_set
from .puzzlegen import TASK_MODES, GenConfig, PuzzleSample, make_sample

__version__ = "0.1.0"
BACKEND = kernels.BACKEND

__all__ = [
    "kernels", "ColorCodebook", "SoftLabel", "build_codebook", "encode_ab", "fit_rebalance", "LabImage", "RgbImage",
    "drop_channels", "lab_to_rgb", "rgb_to_lab", "CDJPError", "LossBundle", "combined_loss", "compose_final",
    "jigsaw_loss", "nine_patch_color_loss", "rebalanced_color_loss", "Permutation", "PermutationSet", "full_set",
    "greedy_max_hamming_set", "TASK_MODES", "GenConfig", "PuzzleSample", "make_sample", "BACKEND",
]
