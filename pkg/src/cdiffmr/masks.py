"""Column-wise Cartesian masks, sampling-rate schedules and nested mask families.

A mask family holds one column mask per diffusion step ``t = 0..T``. Every
mask is a prefix of a single column priority list, so the selected sets are
nested: ``M_{t+1}`` is always a subset of ``M_t`` and ``M_0`` keeps every
column.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from cdiffmr.errors import (
    ConfigurationError,
    ShapeError,
    StepIndexError,
    UnsupportedRateError,
)

# relative slack when comparing a task rate with a schedule rate for equality
RATE_MATCH_RTOL = 1e-12


class ScheduleKind(str, enum.Enum):
    LIN = "lin"
    LOG = "log"

    @classmethod
    def parse(cls, value) -> "ScheduleKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"lin": cls.LIN, "linsr": cls.LIN, "linear": cls.LIN,
                   "log": cls.LOG, "logsr": cls.LOG}
        if key not in aliases:
            raise ConfigurationError(f"unknown schedule kind {value!r}")
        return aliases[key]

    @property
    def label(self) -> str:
        return "LinSR" if self is ScheduleKind.LIN else "LogSR"


@dataclass(frozen=True)
class ScheduleSpec:
    kind: ScheduleKind = ScheduleKind.LOG
    T: int = 100
    sr_min: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind.parse(self.kind))
        if int(self.T) != self.T or self.T < 1:
            raise ConfigurationError(f"T must be a positive integer, got {self.T}")
        object.__setattr__(self, "T", int(self.T))
        if not 0.0 < self.sr_min < 1.0:
            raise ConfigurationError(f"sr_min must lie in (0, 1), got {self.sr_min}")

    def rates(self) -> np.ndarray:
        return np.array([sampling_rate(self, t) for t in range(self.T + 1)])


def round_half_up(x: float) -> int:
    """Round half away from zero (for the nonnegative values used here)."""
    return int(math.floor(x + 0.5)) if x >= 0 else -int(math.floor(-x + 0.5))


def sampling_rate(spec: ScheduleSpec, t: int) -> float:
    """Fraction of k-space columns kept at step ``t``.

    LinSR decays linearly from 1 to ``sr_min``; LogSR decays geometrically,
    ``sr_min ** (t / T)``. Both endpoints are returned exactly.
    """
    if not 0 <= t <= spec.T:
        raise StepIndexError(f"step {t} outside [0, {spec.T}]")
    if t == 0:
        return 1.0
    if t == spec.T:
        return float(spec.sr_min)
    frac = t / spec.T
    if spec.kind is ScheduleKind.LIN:
        return 1.0 - (1.0 - spec.sr_min) * frac
    return float(spec.sr_min**frac)


def column_count(rate: float, width: int) -> int:
    return max(1, round_half_up(rate * width))


def center_block(width: int, center_fraction: float) -> np.ndarray:
    """Indices of the contiguous low-frequency block, fastMRI placement."""
    n = min(width, max(1, math.ceil(center_fraction * width - 1e-9)))
    pad = (width - n + 1) // 2
    return np.arange(pad, pad + n)


@dataclass(frozen=True)
class ColumnMask:
    width: int
    selected: np.ndarray
    center_fraction: float
    accel_factor: float

    def __post_init__(self):
        sel = np.asarray(self.selected, dtype=bool)
        if sel.shape != (self.width,):
            raise ShapeError(f"selection has shape {sel.shape}, expected ({self.width},)")
        if not sel.any():
            raise ConfigurationError("mask selects no columns")
        sel = sel.copy()
        sel.flags.writeable = False
        object.__setattr__(self, "selected", sel)

    @classmethod
    def from_selection(cls, selected, center_fraction: float | None = None) -> "ColumnMask":
        sel = np.asarray(selected, dtype=bool)
        width = sel.shape[0]
        if center_fraction is None:
            center_fraction = 1.0 / width
        return cls(width, sel, center_fraction, width / max(int(sel.sum()), 1))

    @property
    def n_selected(self) -> int:
        return int(self.selected.sum())

    @property
    def sampling_rate(self) -> float:
        return self.n_selected / self.width

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.selected)

    def issubset(self, other: "ColumnMask") -> bool:
        return bool(np.all(other.selected[self.selected]))

    def __eq__(self, other):
        if not isinstance(other, ColumnMask):
            return NotImplemented
        return self.width == other.width and np.array_equal(self.selected, other.selected)

    def __hash__(self):
        return hash((self.width, self.selected.tobytes()))


@dataclass(frozen=True, eq=False)
class MaskFamily:
    schedule: ScheduleSpec
    width: int
    center_fraction: float
    seed: int
    priority: np.ndarray
    counts: np.ndarray = field(repr=False)

    @property
    def T(self) -> int:
        return self.schedule.T

    @cached_property
    def _table(self) -> np.ndarray:
        rank = np.empty(self.width, dtype=np.int64)
        rank[self.priority] = np.arange(self.width)
        table = rank[np.newaxis, :] < np.asarray(self.counts)[:, np.newaxis]
        table.flags.writeable = False
        return table

    def selection(self, t: int) -> np.ndarray:
        if not 0 <= t <= self.T:
            raise StepIndexError(f"step {t} outside [0, {self.T}]")
        return self._table[t].copy()

    def mask(self, t: int) -> ColumnMask:
        sel = self.selection(t)
        return ColumnMask(self.width, sel, self.center_fraction, self.width / int(self.counts[t]))

    @property
    def masks(self) -> list[ColumnMask]:
        return [self.mask(t) for t in range(self.T + 1)]

    def selection_table(self) -> np.ndarray:
        """Boolean array of shape ``(T + 1, width)``."""
        return self._table.copy()

    def __eq__(self, other):
        if not isinstance(other, MaskFamily):
            return NotImplemented
        return (
            self.schedule == other.schedule
            and self.width == other.width
            and self.seed == other.seed
            and np.array_equal(self.selection_table(), other.selection_table())
        )


def column_priority(width: int, center_fraction: float, seed: int) -> np.ndarray:
    """Center block ordered center-out, then the remaining columns shuffled."""
    block = center_block(width, center_fraction)
    dc = width // 2
    block = sorted(block.tolist(), key=lambda c: (abs(c - dc), c))
    rest = np.setdiff1d(np.arange(width), block)
    rng = np.random.default_rng(seed)
    return np.concatenate([np.asarray(block, dtype=np.int64), rng.permutation(rest)])


def build_mask_family(
    spec: ScheduleSpec,
    width: int,
    center_fraction: float | None = None,
    seed: int = 0,
) -> MaskFamily:
    """Build the nested masks ``M_0 ... M_T`` for ``spec``.

    ``center_fraction`` defaults to a single DC column, the only block that
    fits the 1% budget at ``t = T`` for desk-scale widths.
    """
    if width < 4:
        raise ConfigurationError(f"width must be >= 4, got {width}")
    if center_fraction is None:
        center_fraction = 1.0 / width
    if not 0.0 < center_fraction < 1.0:
        raise ConfigurationError(f"center_fraction must lie in (0, 1), got {center_fraction}")
    counts = np.array([column_count(sampling_rate(spec, t), width) for t in range(spec.T + 1)])
    n_center = len(center_block(width, center_fraction))
    if n_center > counts[-1]:
        raise ConfigurationError(
            f"center block exceeds minimum budget: {n_center} center columns "
            f"but only {counts[-1]} kept at t={spec.T}"
        )
    priority = column_priority(width, center_fraction, seed)
    priority.flags.writeable = False
    counts.flags.writeable = False
    return MaskFamily(spec, width, float(center_fraction), int(seed), priority, counts)


def gen_task_mask(
    width: int,
    af: float,
    center_fraction: float = 0.04,
    seed: int = 0,
) -> ColumnMask:
    """Random Cartesian mask: full center block plus random columns.

    Exactly ``round(width / af)`` columns are selected.
    """
    if af < 1:
        raise ConfigurationError(f"acceleration factor must be >= 1, got {af}")
    target = round_half_up(width / af)
    block = center_block(width, center_fraction)
    if target < len(block):
        raise ConfigurationError(
            f"target of {target} columns is smaller than the {len(block)}-column center block"
        )
    sel = np.zeros(width, dtype=bool)
    sel[block] = True
    rest = np.flatnonzero(~sel)
    rng = np.random.default_rng(seed)
    sel[rng.choice(rest, size=target - len(block), replace=False)] = True
    return ColumnMask(width, sel, float(center_fraction), float(af))


def snap_to_family(mask: ColumnMask, family: MaskFamily) -> int | None:
    """Step whose family mask equals ``mask``, or ``None``.

    Several steps can share a mask at low widths; the smallest is returned,
    since it needs the fewest reverse steps.
    """
    if mask.width != family.width:
        raise ShapeError(f"mask width {mask.width} != family width {family.width}")
    n = mask.n_selected
    hits = np.flatnonzero(family.counts == n)
    if len(hits) == 0:
        return None
    if np.array_equal(mask.selected, family.selection(int(hits[0]))):
        return int(hits[0])
    return None


def locate_start_step(task_sr: float, spec: ScheduleSpec) -> int:
    """Starting step ``T'`` of the reverse process for a task sampling rate.

    Returns the smallest ``t`` whose schedule rate is below ``task_sr``; an
    exact rate match starts at the matching step instead.
    """
    if task_sr > 1.0 + RATE_MATCH_RTOL:
        raise ConfigurationError(f"task sampling rate {task_sr} exceeds 1")
    if task_sr < spec.sr_min * (1 - RATE_MATCH_RTOL):
        raise UnsupportedRateError(
            f"undersampling rate {task_sr:g} is larger than the preset degraded images "
            f"(minimum schedule rate {spec.sr_min:g})"
        )
    for t in range(spec.T + 1):
        sr = sampling_rate(spec, t)
        if sr < task_sr or math.isclose(sr, task_sr, rel_tol=RATE_MATCH_RTOL):
            return t
    return spec.T
