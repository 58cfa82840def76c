"""Cold-diffusion MRI reconstruction with k-space undersampling degradation."""

from cdiffmr.errors import (
    CDiffError,
    ConfigurationError,
    DegenerateReferenceError,
    DomainError,
    InvalidInputError,
    ShapeError,
    SizeError,
    StateError,
    StepIndexError,
    TrainingDivergedError,
    UnsupportedRateError,
)
from cdiffmr.fourier import fft2c, ifft2c, rel_l2_error
from cdiffmr.masks import (
    ColumnMask,
    MaskFamily,
    ScheduleSpec,
    build_mask_family,
    gen_task_mask,
    locate_start_step,
    sampling_rate,
    snap_to_family,
)
from cdiffmr.degradation import DegradationOp, degrade_with_mask
from cdiffmr.restorers import ConvRestorer, OracleRestorer, Restorer, ZeroFillRestorer
from cdiffmr.sampler import ReverseRunConfig, ReverseTrace, reconstruct


__version__ = "0.1.0"

__all__ = [
    "CDiffError",
    "ColumnMask",
    "ConfigurationError",
    "ConvRestorer",
    "DegenerateReferenceError",
    "DegradationOp",
    "DomainError",
    "InvalidInputError",
    "MaskFamily",
    "OracleRestorer",
    "Restorer",
    "ReverseRunConfig",
    "ReverseTrace",
    "ScheduleSpec",
    "ShapeError",
    "SizeError",
    "StateError",
    "StepIndexError",
    "TrainingDivergedError",
    "UnsupportedRateError",
    "ZeroFillRestorer",
    "build_mask_family",
    "degrade_with_mask",
    "fft2c",
    "gen_task_mask",
    "ifft2c",
    "locate_start_step",
    "reconstruct",
    "rel_l2_error",
    "sampling_rate",
    "snap_to_family",
]
