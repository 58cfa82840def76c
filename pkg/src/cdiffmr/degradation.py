"""K-space undersampling degradation ``D(x, t) = F^-1 M_t F x``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cdiffmr.errors import ShapeError
from cdiffmr.fourier import as_image, fft2c, ifft2c
from cdiffmr.masks import ColumnMask, MaskFamily


def apply_column_mask(kspace: np.ndarray, selected: np.ndarray) -> np.ndarray:
    """Zero every unselected column; the mask is broadcast over rows."""
    return kspace * selected[np.newaxis, :]


def _check_width(x: np.ndarray, width: int) -> None:
    if x.shape[1] != width:
        raise ShapeError(f"image width {x.shape[1]} does not match mask width {width}")


def degrade_with_mask(x, mask: ColumnMask) -> np.ndarray:
    x = as_image(x)
    _check_width(x, mask.width)
    return ifft2c(apply_column_mask(fft2c(x), mask.selected))


def measure(x, mask: ColumnMask) -> np.ndarray:
    """Masked spectrum ``y = M F x`` (zeros off the mask)."""
    x = as_image(x)
    _check_width(x, mask.width)
    return apply_column_mask(fft2c(x), mask.selected)


@dataclass(frozen=True, eq=False)
class DegradationOp:
    """Forward process of the cold diffusion model over a fixed mask family."""

    family: MaskFamily

    @property
    def T(self) -> int:
        return self.family.T

    def degrade(self, x, t: int) -> np.ndarray:
        sel = self.family.selection(t)
        x = as_image(x)
        _check_width(x, self.family.width)
        if sel.all():
            return x.copy()
        return ifft2c(apply_column_mask(fft2c(x), sel))

    __call__ = degrade


def degrade_batch(op: DegradationOp, xs: np.ndarray, ts) -> np.ndarray:
    """Degrade a stack ``(N, H, W)`` with one step per image."""
    xs = np.asarray(xs, dtype=np.complex128)
    if xs.ndim != 3 or xs.shape[2] != op.family.width:
        raise ShapeError(f"expected (N, H, {op.family.width}) stack, got {xs.shape}")
    sel = np.stack([op.family.selection(int(t)) for t in ts])
    axes = (-2, -1)
    k = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(xs, axes=axes), norm="ortho"), axes=axes)
    k = k * sel[:, np.newaxis, :]
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(k, axes=axes), norm="ortho"), axes=axes)
