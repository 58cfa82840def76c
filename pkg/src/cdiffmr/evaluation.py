"""Grid evaluation of reconstructions: per-slice metrics and summaries."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from cdiffmr.degradation import measure
from cdiffmr.errors import ShapeError
from cdiffmr.metrics import psnr, ssim
from cdiffmr.restorers import Restorer
from cdiffmr.sampler import ReverseRunConfig, reconstruct

ROW_FIELDS = ("slice", "af", "schedule", "ssim", "psnr", "steps", "seconds")
METRICS = ("ssim", "psnr", "steps", "seconds")

# a fixed config, or one built per slice index (e.g. a fresh random mask)
ConfigSource = Union[ReverseRunConfig, Callable[[int], ReverseRunConfig]]
# a shared restorer, or one built from the slice's ground truth (oracle)
RestorerSource = Union[Restorer, Callable[[np.ndarray], Restorer]]


@dataclass(frozen=True)
class EvalRow:
    slice: str
    af: float
    schedule: str
    ssim: float
    psnr: float
    steps: int
    seconds: float

    def as_tuple(self):
        return tuple(getattr(self, f) for f in ROW_FIELDS)


@dataclass
class EvalReport:
    rows: list[EvalRow]
    summary: dict = field(default_factory=dict)  # (af, schedule) -> {metric: (mean, std)}

    @classmethod
    def from_rows(cls, rows) -> "EvalReport":
        return cls(list(rows), summarize(rows))

    def groups(self):
        return list(self.summary)

    def mean(self, metric: str, af=None, schedule=None) -> float:
        vals = [getattr(r, metric) for r in self.rows
                if (af is None or r.af == af) and (schedule is None or r.schedule == schedule)]
        return float(np.mean(vals))


def summarize(rows) -> dict:
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.af, r.schedule), []).append(r)
    out = {}
    for key, members in groups.items():
        out[key] = {
            m: (float(np.mean([getattr(r, m) for r in members])),
                float(np.std([getattr(r, m) for r in members])))
            for m in METRICS
        }
    return out


def _resolve(source, arg):
    return source(arg) if callable(source) and not isinstance(source, (Restorer, ReverseRunConfig)) else source


def evaluate_slice(slice_id: str, index: int, truth: np.ndarray, restorer: RestorerSource,
                   cfgs: list[ConfigSource]) -> list[EvalRow]:
    rows = []
    net = _resolve(restorer, truth)
    for source in cfgs:
        cfg = _resolve(source, index)
        if truth.shape[1] != cfg.family.width:
            raise ShapeError(f"slice {slice_id} width {truth.shape[1]} != family width {cfg.family.width}")
        y = measure(truth, cfg.task_mask)
        t0 = time.perf_counter()
        recon, trace = reconstruct(y, net, cfg)
        seconds = time.perf_counter() - t0
        rows.append(EvalRow(slice_id, float(cfg.task_mask.accel_factor), cfg.family.schedule.kind.label,
                            ssim(recon, truth), psnr(recon, truth), len(trace), seconds))
    return rows


def evaluate(dataset, restorer: RestorerSource, cfgs: list[ConfigSource], ids=None,
             jobs: int = 1, on_slice=None) -> EvalReport:
    """Reconstruct every slice under every config and score it.

    Rows are ordered by slice, then by config, whatever ``jobs`` is.
    ``on_slice`` is called with each slice's rows as soon as they are ready
    (in order), so callers can flush partial results.
    """
    images = list(dataset)
    if not images:
        raise ValueError("dataset is empty")
    ids = list(ids) if ids is not None else [f"{i:05d}" for i in range(len(images))]

    def work(i):
        return evaluate_slice(ids[i], i, np.asarray(images[i]), restorer, cfgs)

    rows = []
    if jobs <= 1:
        results = map(work, range(len(images)))
        for chunk in results:
            rows.extend(chunk)
            if on_slice:
                on_slice(chunk)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for chunk in pool.map(work, range(len(images))):
                rows.extend(chunk)
                if on_slice:
                    on_slice(chunk)
    return EvalReport.from_rows(rows)
