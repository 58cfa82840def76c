"""De-aliasing restorers ``R(x_t, t) -> x0_hat``.

``ConvRestorer`` is a small residual stack of 3x3 convolutions written
directly in numpy, with a hand-derived backward pass. Feature maps are kept
channels-last, ``(N, H, W, C)``.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np

from cdiffmr.errors import ShapeError, StepIndexError
from cdiffmr.fourier import as_image, check_same_shape

KERNEL = 3
IN_CHANNELS = 3  # real, imag, t / T
OUT_CHANNELS = 2  # real, imag residual


class Restorer(ABC):
    """Estimate the clean image from a degraded image at step ``t``."""

    @abstractmethod
    def restore(self, x_t: np.ndarray, t: int) -> np.ndarray: ...

    def __call__(self, x_t, t):
        return self.restore(x_t, t)


class OracleRestorer(Restorer):
    """Returns the ground truth it was built with, whatever the input."""

    def __init__(self, truth):
        self.truth = as_image(truth, "truth").copy()
        self.truth.flags.writeable = False

    def restore(self, x_t, t):
        check_same_shape(as_image(x_t), self.truth)
        return self.truth.copy()


class ZeroFillRestorer(Restorer):
    """Passes the aliased input through unchanged."""

    def restore(self, x_t, t):
        return as_image(x_t).copy()


# -- conv primitives ---------------------------------------------------------


TAPS = [(i, j) for i in range(KERNEL) for j in range(KERNEL)]


def _im2col(x: np.ndarray) -> np.ndarray:
    """``(N, H, W, C)`` -> ``(N*H*W, 9*C)``, tap-major, zero 'same' padding."""
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    cols = np.concatenate([xp[:, i : i + h, j : j + w, :] for i, j in TAPS], axis=-1)
    return cols.reshape(n * h * w, len(TAPS) * c)


def _weight_matrix(weight: np.ndarray) -> np.ndarray:
    """``(out, in, 3, 3)`` -> ``(out, 9*in)`` matching the tap-major columns."""
    return weight.transpose(0, 2, 3, 1).reshape(weight.shape[0], -1)


def conv_forward(x, weight, bias):
    n, h, w, _ = x.shape
    cols = _im2col(x)
    out = cols @ _weight_matrix(weight).T + bias
    return out.reshape(n, h, w, weight.shape[0]), cols


def conv_backward(dout, cols, weight, in_shape, need_input_grad=True):
    """Gradients w.r.t. input, weight and bias of :func:`conv_forward`."""
    n, h, w, c = in_shape
    co = weight.shape[0]
    d2 = dout.reshape(-1, co)
    dweight = (d2.T @ cols).reshape(co, KERNEL, KERNEL, c).transpose(0, 3, 1, 2)
    dbias = d2.sum(axis=0)
    if not need_input_grad:
        return None, dweight, dbias
    dcols = (d2 @ _weight_matrix(weight)).reshape(n, h, w, len(TAPS), c)
    dxp = np.zeros((n, h + 2, w + 2, c), dtype=dout.dtype)
    for k, (i, j) in enumerate(TAPS):
        dxp[:, i : i + h, j : j + w, :] += dcols[:, :, :, k, :]
    return dxp[:, 1:-1, 1:-1, :], dweight, dbias


@dataclass
class ForwardCache:
    inputs: list
    cols: list
    pre_acts: list
    out: np.ndarray


class ConvRestorer(Restorer):
    """Residual conv stack: ``restore(x, t) = x + decode(net(encode(x, t)))``.

    Parameters
    ----------
    channels : int
        Hidden width ``C``.
    depth : int
        Number of conv layers ``D``; ReLU follows every layer but the last.
    T : int
        Total diffusion steps, used to normalise the time channel.
    params : list of arrays, optional
        ``[W0, b0, W1, b1, ...]`` with ``W_l`` shaped ``(out, in, 3, 3)``.
        Defaults to all zeros, which makes the restorer the identity map.
    width : int, optional
        Image width the model was trained for; inputs of another width are
        rejected when set.
    """

    def __init__(self, channels=16, depth=4, T=100, params=None, dtype=np.float32, width=None):
        if channels < 1 or depth < 1:
            raise ValueError("channels and depth must be positive")
        self.channels = int(channels)
        self.depth = int(depth)
        self.T = int(T)
        self.dtype = np.dtype(dtype)
        self.width = width
        shapes = self.param_shapes()
        if params is None:
            params = [np.zeros(s, dtype=self.dtype) for s in shapes]
        if len(params) != len(shapes):
            raise ShapeError(f"expected {len(shapes)} parameter arrays, got {len(params)}")
        for p, s in zip(params, shapes):
            if p.shape != s:
                raise ShapeError(f"parameter shape {p.shape} != {s}")
        self.params = [np.array(p, dtype=self.dtype) for p in params]

    @property
    def arch(self) -> tuple[int, int]:
        return self.channels, self.depth

    def layer_dims(self):
        dims = [IN_CHANNELS] + [self.channels] * (self.depth - 1) + [OUT_CHANNELS]
        return list(zip(dims[:-1], dims[1:]))

    def param_shapes(self):
        shapes = []
        for cin, cout in self.layer_dims():
            shapes += [(cout, cin, KERNEL, KERNEL), (cout,)]
        return shapes

    @property
    def n_params(self) -> int:
        return param_count(self.channels, self.depth)

    @classmethod
    def initialized(cls, channels=16, depth=4, T=100, seed=0, dtype=np.float32,
                    zero_last=True, width=None):
        """Kaiming-uniform weights scaled by fan-in, zero biases.

        With ``zero_last`` the output layer starts at zero so the untrained
        restorer is exactly the identity.
        """
        rng = np.random.default_rng(seed)
        net = cls(channels, depth, T, dtype=dtype, width=width)
        params = []
        for li, (cin, cout) in enumerate(net.layer_dims()):
            fan_in = cin * KERNEL * KERNEL
            bound = np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=(cout, cin, KERNEL, KERNEL))
            if zero_last and li == net.depth - 1:
                w = np.zeros_like(w)
            params += [w.astype(dtype), np.zeros(cout, dtype=dtype)]
        net.params = params
        return net

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat_params(self, flat) -> None:
        flat = np.asarray(flat)
        if flat.size != self.n_params:
            raise ShapeError(f"payload has {flat.size} values, architecture needs {self.n_params}")
        out, pos = [], 0
        for s in self.param_shapes():
            k = int(np.prod(s))
            out.append(flat[pos : pos + k].reshape(s).astype(self.dtype))
            pos += k
        self.params = out

    def copy(self, dtype=None) -> "ConvRestorer":
        return ConvRestorer(self.channels, self.depth, self.T,
                            params=[p.copy() for p in self.params],
                            dtype=dtype or self.dtype, width=self.width)

    # -- encoding -------------------------------------------------------

    def encode(self, xs: np.ndarray, ts) -> np.ndarray:
        """Complex batch ``(N, H, W)`` + steps -> ``(N, H, W, 3)`` features."""
        ts = np.broadcast_to(np.asarray(ts, dtype=np.float64), (xs.shape[0],))
        feat = np.empty(xs.shape + (IN_CHANNELS,), dtype=self.dtype)
        feat[..., 0] = xs.real
        feat[..., 1] = xs.imag
        feat[..., 2] = (ts / self.T)[:, None, None]
        return feat

    def forward(self, feat: np.ndarray) -> ForwardCache:
        inputs, cols, pre = [], [], []
        h = feat
        for li in range(self.depth):
            w, b = self.params[2 * li], self.params[2 * li + 1]
            inputs.append(h)
            z, c = conv_forward(h, w, b)
            cols.append(c)
            pre.append(z)
            h = np.maximum(z, 0) if li < self.depth - 1 else z
        return ForwardCache(inputs, cols, pre, h)

    def backward(self, cache: ForwardCache, dout: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients given ``dL/d(net output)``, ordered like ``params``."""
        grads = [None] * len(self.params)
        g = dout
        for li in reversed(range(self.depth)):
            if li < self.depth - 1:
                g = g * (cache.pre_acts[li] > 0)
            w = self.params[2 * li]
            g, dw, db = conv_backward(g, cache.cols[li], w, cache.inputs[li].shape, need_input_grad=li > 0)
            grads[2 * li], grads[2 * li + 1] = dw, db
        return grads

    def residual(self, xs: np.ndarray, ts) -> tuple[np.ndarray, ForwardCache]:
        cache = self.forward(self.encode(xs, ts))
        out = cache.out.astype(np.float64)
        return out[..., 0] + 1j * out[..., 1], cache

    def restore(self, x_t, t):
        x = as_image(x_t)
        if self.width is not None and x.shape[1] != self.width:
            raise ShapeError(f"restorer trained for width {self.width}, got {x.shape[1]}")
        if not 0 <= t <= self.T:
            raise StepIndexError(f"step {t} outside [0, {self.T}]")
        res, _ = self.residual(x[np.newaxis], t)
        return x + res[0]


def param_count(channels: int, depth: int) -> int:
    dims = [IN_CHANNELS] + [channels] * (depth - 1) + [OUT_CHANNELS]
    return sum(co * ci * KERNEL * KERNEL + co for ci, co in zip(dims[:-1], dims[1:]))
