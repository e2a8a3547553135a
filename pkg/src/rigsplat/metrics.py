"""PSNR / SSIM evaluation for rendered frames."""

import numpy as np

from .errors import ShapeError
from .losses import ssim

PSNR_CAP = 100.0


def psnr(a, b):
    """10 log10(1 / MSE) for unit-range images, capped at 100 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def psnr_ssim(render, gt):
    """Both quality metrics for one image pair."""
    return psnr(render, gt), ssim(render, gt)
