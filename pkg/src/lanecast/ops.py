"""Dense numerical kernels: dilated 2D convolution, affine layers, activations
and the two training losses, each with its hand-written backward pass.

Tensors are numpy arrays. Convolutions take either a single sample shaped
``(channels, rows, cols)`` or a batch shaped ``(batch, channels, rows, cols)``
and return the same rank they were given. Computation happens in the dtype of
the inputs, so feeding float64 arrays gives a float64 build for gradient checks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

DEFAULT_SLOPE = 0.01


def effective_extent(kernel: int, dilation: int) -> int:
    """Extent covered by a kernel with ``dilation`` zeros between adjacent taps."""
    return kernel + (kernel - 1) * dilation


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_rows: int
    kernel_cols: int
    dilation_rows: int = 0
    dilation_cols: int = 0

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel_rows", "kernel_cols"):
            if getattr(self, name) < 1:
                raise ShapeError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.dilation_rows < 0 or self.dilation_cols < 0:
            raise ShapeError("dilation (inserted zeros) must be >= 0")

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        return (self.out_channels, self.in_channels, self.kernel_rows, self.kernel_cols)

    @property
    def extent(self) -> tuple[int, int]:
        return (
            effective_extent(self.kernel_rows, self.dilation_rows),
            effective_extent(self.kernel_cols, self.dilation_cols),
        )

    @property
    def n_params(self) -> int:
        return int(np.prod(self.weight_shape)) + self.out_channels

    def output_shape(self, in_shape: tuple[int, int, int]) -> tuple[int, int, int]:
        channels, rows, cols = in_shape
        if channels != self.in_channels:
            raise ShapeError(
                f"conv expects {self.in_channels} input channels, got {channels}"
            )
        er, ec = self.extent
        out_rows, out_cols = rows - er + 1, cols - ec + 1
        if out_rows < 1 or out_cols < 1:
            raise ShapeError(
                f"input {rows}x{cols} is smaller than the effective kernel extent {er}x{ec}"
            )
        return (self.out_channels, out_rows, out_cols)


def receptive_field(specs, in_channels: int | None = None) -> tuple[int, int, int]:
    """Receptive field ``(channels, rows, cols)`` of one output of a stride-1 stack."""
    specs = list(specs)
    rows = 1 + sum(s.extent[0] - 1 for s in specs)
    cols = 1 + sum(s.extent[1] - 1 for s in specs)
    if in_channels is None:
        in_channels = specs[0].in_channels
    return (in_channels, rows, cols)


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected a 3D or 4D tensor, got shape {x.shape}")


def _patches(x: np.ndarray, spec: ConvSpec) -> np.ndarray:
    """im2col: ``(batch*out_rows*out_cols, in_channels*kr*kc)`` for a batched input."""
    er, ec = spec.extent
    win = sliding_window_view(x, (er, ec), axis=(2, 3))
    win = win[..., :: spec.dilation_rows + 1, :: spec.dilation_cols + 1]
    # (N, C, Ho, Wo, kr, kc) -> (N, Ho, Wo, C, kr, kc)
    win = win.transpose(0, 2, 3, 1, 4, 5)
    n, ho, wo = win.shape[:3]
    return np.ascontiguousarray(win).reshape(n * ho * wo, -1)


def _check_conv(x: np.ndarray, spec: ConvSpec, weights: np.ndarray, bias=None):
    if weights.shape != spec.weight_shape:
        raise ShapeError(f"weights have shape {weights.shape}, expected {spec.weight_shape}")
    if bias is not None and bias.shape != (spec.out_channels,):
        raise ShapeError(f"bias has shape {bias.shape}, expected ({spec.out_channels},)")
    return spec.output_shape(x.shape[1:])


def conv2d_forward(x: np.ndarray, spec: ConvSpec, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Dilated cross-correlation, stride 1, no padding."""
    xb, single = _as_batch(x)
    out_c, ho, wo = _check_conv(xb, spec, weights, bias)
    cols = _patches(xb, spec)
    out = cols @ weights.reshape(out_c, -1).T + bias
    out = out.reshape(xb.shape[0], ho, wo, out_c).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    return out[0] if single else out


def conv2d_backward(x, spec: ConvSpec, weights, upstream, need_input_grad: bool = True):
    """Gradients ``(grad_input, grad_weights, grad_bias)`` of :func:`conv2d_forward`.

    ``grad_input`` is ``None`` when ``need_input_grad`` is false (first layer).
    """
    xb, single = _as_batch(x)
    out_shape = _check_conv(xb, spec, weights)
    gb = upstream[None] if single else upstream
    if gb.shape != (xb.shape[0], *out_shape):
        raise ShapeError(
            f"upstream gradient has shape {upstream.shape}, forward output is "
            f"{(xb.shape[0], *out_shape) if not single else out_shape}"
        )
    out_c, ho, wo = out_shape
    g = gb.transpose(0, 2, 3, 1).reshape(-1, out_c)
    cols = _patches(xb, spec)
    grad_w = (g.T @ cols).reshape(spec.weight_shape)
    grad_b = g.sum(axis=0)
    grad_x = None
    if need_input_grad:
        n = xb.shape[0]
        kr, kc = spec.kernel_rows, spec.kernel_cols
        gcols = (g @ weights.reshape(out_c, -1)).reshape(n, ho, wo, spec.in_channels, kr, kc)
        gcols = gcols.transpose(0, 3, 4, 5, 1, 2)
        grad_x = np.zeros_like(xb)
        sr, sc = spec.dilation_rows + 1, spec.dilation_cols + 1
        for i in range(kr):
            for j in range(kc):
                grad_x[:, :, i * sr : i * sr + ho, j * sc : j * sc + wo] += gcols[:, :, i, j]
        if single:
            grad_x = grad_x[0]
    return grad_x, grad_w, grad_b


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map ``x @ weights + bias``; ``weights`` is ``(in, out)``."""
    if x.shape[-1] != weights.shape[0]:
        raise ShapeError(f"dense layer expects {weights.shape[0]} inputs, got {x.shape[-1]}")
    if bias.shape != (weights.shape[1],):
        raise ShapeError(f"bias has shape {bias.shape}, expected ({weights.shape[1]},)")
    return x @ weights + bias


def dense_backward(x, weights, upstream):
    if x.shape[-1] != weights.shape[0] or upstream.shape[-1] != weights.shape[1]:
        raise ShapeError("dense backward: shapes of input/upstream do not match weights")
    x2 = x.reshape(-1, x.shape[-1])
    g2 = upstream.reshape(-1, upstream.shape[-1])
    return upstream @ weights.T, x2.T @ g2, g2.sum(axis=0)


def leaky_relu(x: np.ndarray, slope: float = DEFAULT_SLOPE) -> np.ndarray:
    return np.where(x >= 0, x, x * x.dtype.type(slope))


def leaky_relu_backward(x: np.ndarray, upstream: np.ndarray, slope: float = DEFAULT_SLOPE) -> np.ndarray:
    return np.where(x >= 0, upstream, upstream * upstream.dtype.type(slope))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _check_classes(logits, truth):
    truth = np.asarray(truth)
    if truth.shape != logits.shape[:-1]:
        raise ShapeError(f"truth shape {truth.shape} does not match logits {logits.shape}")
    n_cls = logits.shape[-1]
    if truth.size and (truth.min() < 0 or truth.max() >= n_cls):
        raise ValueError(f"class indices must lie in [0, {n_cls - 1}]")
    return truth.astype(np.intp)


def softmax_nll(logits: np.ndarray, truth) -> float:
    """Sum over prediction steps of -log p(true class), averaged over the batch.

    ``logits`` is ``(steps, classes)`` or ``(batch, steps, classes)``.
    """
    truth = _check_classes(logits, truth)
    logp = log_softmax(logits)
    picked = np.take_along_axis(logp, truth[..., None], axis=-1)[..., 0]
    per_sample = -picked.sum(axis=-1)
    return float(np.mean(per_sample))


def softmax_nll_backward(logits: np.ndarray, truth) -> np.ndarray:
    truth = _check_classes(logits, truth)
    grad = softmax(logits)
    np.put_along_axis(
        grad, truth[..., None], np.take_along_axis(grad, truth[..., None], axis=-1) - 1, axis=-1
    )
    if logits.ndim == 3:
        grad /= logits.shape[0]
    return grad


def rmse_loss(pred: np.ndarray, truth: np.ndarray) -> float:
    """Root of the mean squared Euclidean error over every (sample, step) pair.

    ``pred``/``truth`` are ``(steps, 2)`` or ``(batch, steps, 2)``; for a single
    sample this is sqrt(1/P * sum_t ||pred_t - truth_t||^2).
    """
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    if pred.size == 0:
        raise ValueError("rmse_loss of an empty prediction")
    n_points = pred.size // pred.shape[-1]
    return float(np.sqrt(np.sum((pred - truth) ** 2) / n_points))


def rmse_loss_backward(pred: np.ndarray, truth: np.ndarray) -> np.ndarray:
    loss = rmse_loss(pred, truth)
    if loss == 0.0:
        # subgradient at the cusp
        return np.zeros_like(pred)
    n_points = pred.size // pred.shape[-1]
    return (pred - truth) / (n_points * loss)
