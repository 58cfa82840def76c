"""Centered, unitary 2D Fourier transforms on complex images.

Images and spectra are plain 2D ``complex128`` arrays. The DC coefficient of a
spectrum sits at ``(H // 2, W // 2)`` and both directions are scaled by
``1 / sqrt(H * W)`` so that Parseval holds exactly.
"""

from __future__ import annotations

import numpy as np

from cdiffmr.errors import DegenerateReferenceError, InvalidInputError, ShapeError


def as_image(x, name: str = "image") -> np.ndarray:
    """Validate ``x`` as a finite 2D array and return it as complex128."""
    arr = np.asarray(x)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2D array, got shape {arr.shape}")
    arr = arr.astype(np.complex128, copy=False)
    if not np.isfinite(arr).all():
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")


def fft2c(img) -> np.ndarray:
    x = as_image(img)
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(x), norm="ortho"))


def ifft2c(kspace) -> np.ndarray:
    k = as_image(kspace, "kspace")
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(k), norm="ortho"))


def rel_l2_error(a, b) -> float:
    """Return ``||a - b|| / ||b||``."""
    a = np.asarray(a)
    b = np.asarray(b)
    check_same_shape(a, b)
    ref = np.linalg.norm(b)
    if ref == 0:
        raise DegenerateReferenceError("reference image has zero norm")
    return float(np.linalg.norm(a - b) / ref)
