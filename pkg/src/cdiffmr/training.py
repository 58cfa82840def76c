"""Training of the conv restorer: loss, reverse-mode gradients, Adam, checkpoints."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np

from cdiffmr.degradation import DegradationOp, degrade_batch
from cdiffmr.errors import ConfigurationError, DomainError, ShapeError, StateError, TrainingDivergedError
from cdiffmr.fourier import as_image
from cdiffmr.masks import MaskFamily
from cdiffmr.restorers import ConvRestorer, ForwardCache, Restorer, param_count

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class LossNorm(str, enum.Enum):
    L1 = "L1"
    L2 = "L2"

    @classmethod
    def parse(cls, value) -> "LossNorm":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise ConfigurationError(f"unknown loss norm {value!r}") from None


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 8
    grad_steps: int = 2000
    loss_norm: LossNorm = LossNorm.L1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    channels: int = 16
    depth: int = 4

    def __post_init__(self):
        object.__setattr__(self, "loss_norm", LossNorm.parse(self.loss_norm))
        if self.learning_rate <= 0 or self.eps <= 0:
            raise ConfigurationError("learning_rate and eps must be positive")
        if self.batch_size < 1 or self.grad_steps < 0:
            raise ConfigurationError("batch_size must be positive and grad_steps nonnegative")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigurationError("Adam betas must lie in (0, 1)")


# -- loss and gradients ------------------------------------------------------


@dataclass
class LossGraph:
    """Record of one batched forward pass, consumed by :func:`backward`."""

    loss: float
    norm: LossNorm
    diff: np.ndarray  # (N, H, W, 2): restored minus truth, in the encoding
    cache: ForwardCache | None


def _encode_complex(xs: np.ndarray) -> np.ndarray:
    return np.stack([xs.real, xs.imag], axis=-1)


def loss_graph(restorer: ConvRestorer, x_true, ts, op: DegradationOp, norm=LossNorm.L1) -> LossGraph:
    """Forward pass of the training objective over a batch.

    The loss is averaged over every element of the 2-channel encoding and
    over the batch.
    """
    norm = LossNorm.parse(norm)
    xs = np.asarray(x_true, dtype=np.complex128)
    if xs.ndim == 2:
        xs = xs[np.newaxis]
    ts = np.atleast_1d(np.asarray(ts, dtype=np.int64))
    if ts.shape != (xs.shape[0],):
        raise ShapeError(f"need one step per image, got {ts.shape} for {xs.shape[0]} images")
    if np.any(ts < 1) or np.any(ts > op.T):
        raise DomainError(f"training steps must lie in [1, {op.T}]")
    degraded = degrade_batch(op, xs, ts)
    res, cache = restorer.residual(degraded, ts)
    pred_minus_true = (degraded - xs) + res
    diff = _encode_complex(pred_minus_true)
    if norm is LossNorm.L2:
        loss = float(np.mean(diff**2))
    else:
        loss = float(np.mean(np.abs(diff)))
    return LossGraph(loss, norm, diff, cache)


def training_loss(restorer: Restorer, x_true, t: int, op: DegradationOp, norm=LossNorm.L1) -> float:
    """``|| R(D(x_true, t), t) - x_true ||`` averaged per encoded element."""
    if t == 0:
        raise DomainError("the identity step t=0 is never trained")
    if isinstance(restorer, ConvRestorer):
        return loss_graph(restorer, x_true, [t], op, norm).loss
    norm = LossNorm.parse(norm)
    x = as_image(x_true)
    diff = _encode_complex(restorer.restore(op.degrade(x, t), t) - x)
    return float(np.mean(diff**2) if norm is LossNorm.L2 else np.mean(np.abs(diff)))


def backward(restorer: ConvRestorer, graph: LossGraph | None) -> list[np.ndarray]:
    """Exact gradients of ``graph.loss`` w.r.t. every restorer parameter."""
    if graph is None or graph.cache is None:
        raise StateError("backward called before a forward pass was recorded")
    count = graph.diff.size
    if graph.norm is LossNorm.L2:
        dout = 2.0 * graph.diff / count
    else:
        dout = np.sign(graph.diff) / count
    return restorer.backward(graph.cache, dout.astype(restorer.dtype))


# -- Adam --------------------------------------------------------------------


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, config: TrainConfig):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    if len(params) != len(grads):
        raise ShapeError("parameter and gradient lists differ in length")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.isfinite(g).all():
            raise TrainingDivergedError("non-finite gradient", step=state.step + 1)
    b1, b2 = config.beta1, config.beta2
    step = state.step + 1
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        update = config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.eps)
        new_p.append((p - update).astype(p.dtype))
        new_m.append(m.astype(p.dtype))
        new_v.append(v.astype(p.dtype))
    return new_p, AdamState(new_m, new_v, step)


# -- checkpoints and the training loop --------------------------------------


@dataclass
class ModelCheckpoint:
    channels: int
    depth: int
    payload: np.ndarray  # flat float32
    metadata: dict = field(default_factory=dict)
    version: int = CHECKPOINT_VERSION

    def __post_init__(self):
        self.payload = np.asarray(self.payload, dtype=np.float32).ravel()
        expected = param_count(self.channels, self.depth)
        if self.payload.size != expected:
            raise ShapeError(f"payload has {self.payload.size} values, architecture needs {expected}")

    @classmethod
    def from_restorer(cls, net: ConvRestorer, **metadata) -> "ModelCheckpoint":
        meta = {"T": net.T}
        if net.width is not None:
            meta["width"] = net.width
        meta.update(metadata)
        return cls(net.channels, net.depth, net.flat_params().astype(np.float32), meta)

    def to_restorer(self) -> ConvRestorer:
        T = int(self.metadata.get("T", 100))
        width = self.metadata.get("width")
        net = ConvRestorer(self.channels, self.depth, T, width=int(width) if width else None)
        net.set_flat_params(self.payload)
        return net


@dataclass
class TrainResult:
    checkpoint: ModelCheckpoint
    losses: list  # (step, loss)


def _stack_dataset(dataset) -> np.ndarray:
    xs = np.asarray([as_image(x) for x in dataset]) if not isinstance(dataset, np.ndarray) else dataset
    xs = np.asarray(xs, dtype=np.complex128)
    if xs.ndim != 3 or xs.shape[0] == 0:
        raise ShapeError("dataset must be a non-empty stack of 2D images")
    if not np.isfinite(xs).all():
        raise ShapeError("dataset contains non-finite values")
    return xs


def train(dataset, family: MaskFamily, config: TrainConfig | None = None,
          initial: ConvRestorer | None = None, log_every: int = 0) -> TrainResult:
    """Fit a :class:`ConvRestorer` with ``t ~ Uniform{1..T}`` per sample.

    Raises :class:`TrainingDivergedError` carrying the last finite checkpoint
    when the loss turns non-finite.
    """
    config = config or TrainConfig()
    xs = _stack_dataset(dataset)
    if xs.shape[2] != family.width:
        raise ShapeError(f"dataset width {xs.shape[2]} != family width {family.width}")
    op = DegradationOp(family)
    rng = np.random.default_rng(config.seed)
    net = initial.copy() if initial is not None else ConvRestorer.initialized(
        config.channels, config.depth, family.T, seed=config.seed, width=family.width)
    state = AdamState.zeros_like(net.params)
    losses = []

    def meta(steps, final_loss):
        return dict(
            steps=steps, final_loss=final_loss, schedule=family.schedule.kind.value,
            T=family.T, sr_min=family.schedule.sr_min, seed=config.seed,
            family_seed=family.seed, family_center_fraction=family.center_fraction,
            width=family.width, loss_norm=config.loss_norm.value,
            learning_rate=config.learning_rate, batch_size=config.batch_size,
        )

    for step in range(1, config.grad_steps + 1):
        idx = rng.integers(0, xs.shape[0], size=config.batch_size)
        ts = rng.integers(1, family.T + 1, size=config.batch_size)
        graph = loss_graph(net, xs[idx], ts, op, config.loss_norm)
        if not np.isfinite(graph.loss):
            last = losses[-1][1] if losses else float("nan")
            raise TrainingDivergedError(
                f"loss became non-finite at step {step}", step=step,
                checkpoint=ModelCheckpoint.from_restorer(net, **meta(step - 1, last)))
        grads = backward(net, graph)
        try:
            net.params, state = adam_step(net.params, grads, state, config)
        except TrainingDivergedError as exc:
            raise TrainingDivergedError(
                f"non-finite gradient at step {step}", step=step,
                checkpoint=ModelCheckpoint.from_restorer(net, **meta(step - 1, graph.loss))) from exc
        losses.append((step, graph.loss))
        if log_every and step % log_every == 0:
            logger.info("step %d loss %.6g", step, graph.loss)

    final = losses[-1][1] if losses else float("nan")
    return TrainResult(ModelCheckpoint.from_restorer(net, **meta(config.grad_steps, final)), losses)

