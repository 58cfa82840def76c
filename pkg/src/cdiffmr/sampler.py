"""Conditioned reverse process.

Starting at step ``T'`` (chosen from the task sampling rate), each step
restores an estimate of the clean image, optionally replaces its measured
k-space columns with the data, and then swaps the step-``t`` degradation of
that estimate for its step-``t-1`` degradation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from cdiffmr.degradation import DegradationOp, apply_column_mask, measure
from cdiffmr.errors import ConfigurationError, ShapeError, StepIndexError
from cdiffmr.fourier import as_image, check_same_shape, fft2c, ifft2c
from cdiffmr.masks import ColumnMask, MaskFamily, locate_start_step, snap_to_family
from cdiffmr.metrics import psnr, ssim
from cdiffmr.restorers import Restorer


class MaskMismatchWarning(UserWarning):
    """The family mask at the start step is not contained in the task mask."""


@dataclass(frozen=True, eq=False)
class ReverseRunConfig:
    task_mask: ColumnMask
    family: MaskFamily
    use_spc: bool = True
    use_dcc: bool = True
    start_override: int | None = None
    terminal_dc: bool = True
    record_trajectory: bool = False
    # project the zero-filled start onto the start-step family mask
    project_start: bool = True

    def __post_init__(self):
        if self.task_mask.width != self.family.width:
            raise ShapeError(
                f"task mask width {self.task_mask.width} != family width {self.family.width}")
        if self.start_override is not None and not 1 <= self.start_override <= self.family.T:
            raise StepIndexError(f"start_override {self.start_override} outside [1, {self.family.T}]")

    def replace(self, **changes) -> "ReverseRunConfig":
        return replace(self, **changes)


@dataclass
class ReverseTrace:
    start: int
    steps: list = field(default_factory=list)  # step indices, start..1
    dcc_correction: list = field(default_factory=list)  # ||x0_hat - x0_hat'||_2
    snapshots: list = field(default_factory=list)

    def __len__(self):
        return len(self.steps)

    def rows(self):
        return list(zip(self.steps, self.dcc_correction))


def zero_filled_init(y) -> np.ndarray:
    return ifft2c(y)


def dcc_project(x0_hat_prime, y, mask: ColumnMask) -> np.ndarray:
    """Keep the estimate's spectrum off the mask and the measurements on it."""
    x = as_image(x0_hat_prime)
    y = as_image(y, "y")
    check_same_shape(x, y)
    if x.shape[1] != mask.width:
        raise ShapeError(f"image width {x.shape[1]} != mask width {mask.width}")
    k = fft2c(x)
    k[:, mask.selected] = y[:, mask.selected]
    return ifft2c(k)


def reverse_step(x_t, x0_hat, t: int, op: DegradationOp) -> np.ndarray:
    """``x_{t-1} = x_t - D(x0_hat, t) + D(x0_hat, t - 1)``."""
    if not 1 <= t <= op.T:
        raise StepIndexError(f"reverse step needs 1 <= t <= {op.T}, got {t}")
    x_t = as_image(x_t)
    x0_hat = as_image(x0_hat)
    check_same_shape(x_t, x0_hat)
    # D(., t-1) - D(., t) is the projection onto the columns M_{t-1} \ M_t
    gained = op.family.selection(t - 1) & ~op.family.selection(t)
    return x_t + ifft2c(apply_column_mask(fft2c(x0_hat), gained))


def effective_start(cfg: ReverseRunConfig) -> int:
    if cfg.start_override is not None:
        return cfg.start_override
    if not cfg.use_spc:
        return cfg.family.T
    snapped = snap_to_family(cfg.task_mask, cfg.family)
    if snapped is not None:
        return snapped
    return locate_start_step(cfg.task_mask.sampling_rate, cfg.family.schedule)


def reconstruct(y, restorer: Restorer, cfg: ReverseRunConfig) -> tuple[np.ndarray, ReverseTrace]:
    """Run the reverse process on measured k-space ``y``.

    Returns the reconstruction ``x_0`` and a per-step trace.
    """
    y = as_image(y, "y")
    if y.shape[1] != cfg.family.width:
        raise ShapeError(f"k-space width {y.shape[1]} != family width {cfg.family.width}")
    mask = cfg.task_mask
    if np.any(y[:, ~mask.selected] != 0):
        raise ConfigurationError("measured k-space has energy outside the task mask")
    locate_start_step(mask.sampling_rate, cfg.family.schedule)  # rejects unsupported rates
    op = DegradationOp(cfg.family)
    start = effective_start(cfg)
    trace = ReverseTrace(start)

    x_zf = zero_filled_init(y)
    if start > 0 and not cfg.family.mask(start).issubset(mask):
        warnings.warn(
            f"family mask at step {start} is not contained in the task mask; "
            "exact recovery is not guaranteed", MaskMismatchWarning, stacklevel=2)
    if start > 0 and (cfg.project_start or not cfg.use_spc):
        x = op.degrade(x_zf, start)
    else:
        x = x_zf.copy()

    for t in range(start, 0, -1):
        x0_prime = restorer.restore(x, t)
        if cfg.use_dcc:
            x0 = dcc_project(x0_prime, y, mask)
            correction = float(np.linalg.norm(x0 - x0_prime))
        else:
            x0, correction = x0_prime, 0.0
        x = reverse_step(x, x0, t, op)
        trace.steps.append(t)
        trace.dcc_correction.append(correction)
        if cfg.record_trajectory:
            trace.snapshots.append(x.copy())

    if cfg.terminal_dc:
        x = dcc_project(x, y, mask)
    return x, trace


@dataclass(frozen=True)
class SweepRow:
    start: int
    psnr: float
    ssim: float


def ablate_start_point(y, restorer: Restorer, cfg: ReverseRunConfig, starts, truth) -> list[SweepRow]:
    """Reconstruct once per start override and score each result against ``truth``."""
    rows = []
    for s in starts:
        recon, _ = reconstruct(y, restorer, cfg.replace(start_override=int(s)))
        rows.append(SweepRow(int(s), psnr(recon, truth), ssim(recon, truth)))
    return rows


def synthesize(x, mask: ColumnMask) -> np.ndarray:
    """Measured k-space ``y = M F x`` for a ground-truth image."""
    return measure(x, mask)
