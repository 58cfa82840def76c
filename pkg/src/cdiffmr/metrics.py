"""PSNR and SSIM on magnitude images, data range taken from the reference."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from cdiffmr.errors import DegenerateReferenceError, ShapeError, SizeError

PSNR_CAP_DB = 99.0
SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _magnitudes(recon, truth) -> tuple[np.ndarray, np.ndarray]:
    r = np.abs(np.asarray(recon))
    g = np.abs(np.asarray(truth))
    if r.shape != g.shape or r.ndim != 2:
        raise ShapeError(f"shape mismatch: {r.shape} vs {g.shape}")
    return r, g


def psnr(recon, truth) -> float:
    """PSNR in dB, capped at ``PSNR_CAP_DB`` (which also stands in for +inf)."""
    r, g = _magnitudes(recon, truth)
    peak = g.max()
    if peak <= 0:
        raise DegenerateReferenceError("reference image is all zero")
    mse = np.mean((r - g) ** 2)
    if mse == 0:
        return PSNR_CAP_DB
    return float(min(PSNR_CAP_DB, 10.0 * np.log10(peak**2 / mse)))


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    k = np.exp(-(r**2) / (2 * sigma**2))
    return k / k.sum()


def _filter_valid(img: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Separable 'valid' correlation with a symmetric 1D kernel."""
    n = len(k)
    rows = sliding_window_view(img, n, axis=1) @ k
    return sliding_window_view(rows, n, axis=0) @ k


def ssim(recon, truth) -> float:
    """Mean local SSIM, 11x11 Gaussian window (sigma 1.5), valid region only."""
    r, g = _magnitudes(recon, truth)
    if min(r.shape) < SSIM_WIN:
        raise SizeError(f"image {r.shape} smaller than the {SSIM_WIN}x{SSIM_WIN} window")
    data_range = g.max()
    if data_range <= 0:
        raise DegenerateReferenceError("reference image is all zero")
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    k = gaussian_window()
    mu_r = _filter_valid(r, k)
    mu_g = _filter_valid(g, k)
    var_r = _filter_valid(r * r, k) - mu_r**2
    var_g = _filter_valid(g * g, k) - mu_g**2
    cov = _filter_valid(r * g, k) - mu_r * mu_g
    num = (2 * mu_r * mu_g + c1) * (2 * cov + c2)
    den = (mu_r**2 + mu_g**2 + c1) * (var_r + var_g + c2)
    return float(np.mean(num / den))
