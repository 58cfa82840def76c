"""Synthetic complex-valued phantoms: random ellipses with a smooth phase."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cdiffmr.errors import ConfigurationError

# radians per unit polynomial coefficient; keeps the phase slowly varying
PHASE_SCALE = 0.5


@dataclass(frozen=True)
class PhantomSpec:
    size: int = 64
    n_ellipses: int = 6
    seed: int = 0
    phase_order: int = 2

    def __post_init__(self):
        if self.size < 16:
            raise ConfigurationError(f"phantom size must be >= 16, got {self.size}")
        if self.n_ellipses < 1:
            raise ConfigurationError("n_ellipses must be at least 1")
        if self.phase_order < 0:
            raise ConfigurationError("phase_order must be nonnegative")


@dataclass(frozen=True)
class Ellipse:
    cx: float
    cy: float
    a: float  # semi-axis along the rotated x direction, normalised units
    b: float
    angle: float
    intensity: float


def grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    """Pixel-centre coordinates in [-1, 1], ``(x, y)`` with ``y`` down the rows."""
    c = (np.arange(size) + 0.5) / size * 2.0 - 1.0
    return np.meshgrid(c, c, indexing="xy")


def ellipse_interior(e: Ellipse, size: int) -> np.ndarray:
    x, y = grid(size)
    ca, sa = np.cos(e.angle), np.sin(e.angle)
    u = (x - e.cx) * ca + (y - e.cy) * sa
    v = -(x - e.cx) * sa + (y - e.cy) * ca
    return (u / e.a) ** 2 + (v / e.b) ** 2 <= 1.0


def sample_ellipses(spec: PhantomSpec) -> list[Ellipse]:
    """A large body ellipse near the centre followed by smaller inclusions."""
    rng = np.random.default_rng(spec.seed)
    out = [Ellipse(
        cx=rng.uniform(-0.05, 0.05), cy=rng.uniform(-0.05, 0.05),
        a=rng.uniform(0.6, 0.85), b=rng.uniform(0.6, 0.85),
        angle=rng.uniform(0, np.pi), intensity=rng.uniform(0.4, 0.8),
    )]
    for _ in range(spec.n_ellipses - 1):
        out.append(Ellipse(
            cx=rng.uniform(-0.5, 0.5), cy=rng.uniform(-0.5, 0.5),
            a=rng.uniform(0.05, 0.35), b=rng.uniform(0.05, 0.35),
            angle=rng.uniform(0, np.pi), intensity=rng.uniform(-0.4, 0.5),
        ))
    return out


def smooth_phase(spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    x, y = grid(spec.size)
    phase = np.zeros_like(x)
    for i in range(spec.phase_order + 1):
        for j in range(spec.phase_order + 1 - i):
            phase += rng.uniform(-0.5, 0.5) * x**i * y**j
    return PHASE_SCALE * phase


def gen_phantom(spec: PhantomSpec) -> np.ndarray:
    ellipses = sample_ellipses(spec)
    mag = np.zeros((spec.size, spec.size))
    for e in ellipses:
        mag[ellipse_interior(e, spec.size)] += e.intensity
    mag = np.clip(mag, 0.0, 1.0)
    # phase coefficients use a stream independent of the ellipse draws
    rng = np.random.default_rng([spec.seed, 1])
    return mag * np.exp(1j * smooth_phase(spec, rng))


def phantom_stack(count: int, size: int = 64, seed: int = 0, n_ellipses: int = 6,
                  phase_order: int = 2) -> np.ndarray:
    """``count`` phantoms with per-slice seeds derived from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(count, dtype=np.uint32)
    return np.stack([
        gen_phantom(PhantomSpec(size, n_ellipses, int(s), phase_order)) for s in seeds
    ]) if count else np.zeros((0, size, size), dtype=np.complex128)
