"""Stroke-based scene text erasing."""

from ._core import (
    PSNR_CAP,
    Error,
    conv2d,
    dice_loss,
    erase_identity,
    gram,
    layer_shapes,
    mse,
    parameter_count,
    partial_conv2d,
    pixel_loss,
    psnr,
    run_cli,
    ssim,
    tv_loss,
    vgg_features,
)

__all__ = [
    "PSNR_CAP",
    "Error",
    "conv2d",
    "dice_loss",
    "erase_identity",
    "gram",
    "layer_shapes",
    "mse",
    "parameter_count",
    "partial_conv2d",
    "pixel_loss",
    "psnr",
    "run_cli",
    "ssim",
    "tv_loss",
    "vgg_features",
]
