"""
Network kernels with hand-written backward passes.

Spatial kernels take [N, C, H, W] batches; a single [C, H, W] sample is accepted and returned
without the batch axis. All kernels are 3x3 with one pixel of zero padding, so a stride-s
convolution maps H to ceil(H / s) and a stride-s transposed convolution maps H to s * H.
"""
from typing import Literal, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from acis.core.compute import ops
from acis.core.compute.tensor import Parameter, Tensor, as_tensor
from acis.core.exceptions import ContractViolation, ShapeMismatch

KERNEL = 3
BCE_CLAMP = 1e-7
LOG_VAR_RANGE = (-20.0, 2.0)
BN_MOMENTUM = 0.9
BN_EPS = 1e-5


def _as_batch(x: Tensor) -> Tuple[Tensor, bool]:
    if x.ndim == 3:
        return ops.reshape(x, (1,) + x.shape), True
    if x.ndim == 4:
        return x, False
    raise ShapeMismatch(f"spatial kernels need [C,H,W] or [N,C,H,W], got {x.shape}")


def _unbatch(out: Tensor, squeezed: bool) -> Tensor:
    if squeezed:
        return ops.reshape(out, out.shape[1:])
    return out


def _check_stride(stride: int):
    if stride not in (1, 2):
        raise ContractViolation(f"stride must be 1 or 2, got {stride}")


def _im2col(padded: np.ndarray, stride: int, out_h: int, out_w: int) -> np.ndarray:
    """[N, C, H+2, W+2] -> [N * out_h * out_w, C * 9] rows of 3x3 windows."""
    n, c = padded.shape[:2]
    windows = sliding_window_view(padded, (KERNEL, KERNEL), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    return np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(n * out_h * out_w, c * KERNEL * KERNEL)


def _col2im(cols: np.ndarray, shape: Tuple[int, int, int, int], stride: int, out_h: int, out_w: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add window rows back into a padded [N, C, H+2, W+2] array."""
    n, c, hp, wp = shape
    padded = np.zeros(shape)
    cols = cols.reshape(n, out_h, out_w, c, KERNEL, KERNEL)
    for i in range(KERNEL):
        for j in range(KERNEL):
            padded[:, :, i : i + stride * (out_h - 1) + 1 : stride, j : j + stride * (out_w - 1) + 1 : stride] += cols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    return padded


def conv2d(x: Tensor, kernels: Tensor, stride: int = 1, bias: Optional[Tensor] = None) -> Tensor:
    """Cross-correlation of x with kernels [O, C, 3, 3]; output spatial size ceil(H / stride)."""
    _check_stride(stride)
    x, squeezed = _as_batch(as_tensor(x))
    n, c, h, w = x.shape
    o = kernels.shape[0]
    if kernels.shape[1:] != (c, KERNEL, KERNEL):
        raise ShapeMismatch(f"conv2d kernels {kernels.shape} do not fit input with {c} channels")

    out_h, out_w = -(-h // stride), -(-w // stride)
    padded = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = _im2col(padded, stride, out_h, out_w)
    weights = kernels.data.reshape(o, -1)
    out = (cols @ weights.T).reshape(n, out_h, out_w, o).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)

    def backward(grad: np.ndarray):
        rows = grad.transpose(0, 2, 3, 1).reshape(-1, o)
        if kernels.requires_grad:
            kernels.accumulate((rows.T @ cols).reshape(kernels.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate(grad.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dpadded = _col2im(rows @ weights, padded.shape, stride, out_h, out_w)
            x.accumulate(dpadded[:, :, 1:-1, 1:-1])

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return _unbatch(Tensor.from_op(np.ascontiguousarray(out), parents, backward), squeezed)


def transposed_conv2d(x: Tensor, kernels: Tensor, stride: int = 1, bias: Optional[Tensor] = None) -> Tensor:
    """
    Gradient-of-convolution with kernels [C_in, C_out, 3, 3]; output spatial size stride * H.
    conv2d(y, K, stride) and transposed_conv2d(x, K, stride) are adjoint for the same K.
    """
    _check_stride(stride)
    x, squeezed = _as_batch(as_tensor(x))
    n, c_in, h, w = x.shape
    if kernels.shape[0] != c_in or kernels.shape[2:] != (KERNEL, KERNEL):
        raise ShapeMismatch(f"transposed_conv2d kernels {kernels.shape} do not fit input with {c_in} channels")

    c_out = kernels.shape[1]
    out_h, out_w = stride * h, stride * w
    padded_shape = (n, c_out, out_h + 2, out_w + 2)
    weights = kernels.data.reshape(c_in, -1)
    rows = x.data.transpose(0, 2, 3, 1).reshape(-1, c_in)
    out = _col2im(rows @ weights, padded_shape, stride, h, w)[:, :, 1:-1, 1:-1]
    if bias is not None:
        out = out + bias.data.reshape(1, c_out, 1, 1)

    def backward(grad: np.ndarray):
        cols = _im2col(np.pad(grad, ((0, 0), (0, 0), (1, 1), (1, 1))), stride, h, w)
        if kernels.requires_grad:
            kernels.accumulate((rows.T @ cols).reshape(kernels.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate(grad.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            x.accumulate((cols @ weights.T).reshape(n, h, w, c_in).transpose(0, 3, 1, 2))

    parents = (x, kernels) if bias is None else (x, kernels, bias)
    return _unbatch(Tensor.from_op(np.ascontiguousarray(out), parents, backward), squeezed)


def _pool_windows(data: np.ndarray) -> np.ndarray:
    n, c, h, w = data.shape
    if h % 2 or w % 2:
        raise ContractViolation(f"2x2 pooling needs even spatial dims, got {h}x{w}")
    # window elements in row-major order: (0,0), (0,1), (1,0), (1,1)
    return data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)


def _unpool(values: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    n, c, h, w = shape
    return values.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)


def maxpool2d(x: Tensor) -> Tensor:
    """2x2 window, stride 2. Ties go to the first window element in row-major order."""
    x, squeezed = _as_batch(as_tensor(x))
    windows = _pool_windows(x.data)
    winner = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, winner[..., None], axis=-1)[..., 0]

    def backward(grad: np.ndarray):
        routed = np.zeros(windows.shape)
        np.put_along_axis(routed, winner[..., None], grad[..., None], axis=-1)
        x.accumulate(_unpool(routed, x.shape))

    return _unbatch(Tensor.from_op(out, (x,), backward), squeezed)


def avg_pool2d(x: Tensor) -> Tensor:
    x, squeezed = _as_batch(as_tensor(x))
    out = _pool_windows(x.data).mean(axis=-1)

    def backward(grad: np.ndarray):
        x.accumulate(_unpool(np.repeat(grad[..., None] / 4.0, 4, axis=-1), x.shape))

    return _unbatch(Tensor.from_op(out, (x,), backward), squeezed)


def global_max_pool2d(x: Tensor) -> Tensor:
    """[N, C, H, W] -> [N, C]."""
    x, _ = _as_batch(as_tensor(x))
    n, c, h, w = x.shape
    flat = x.data.reshape(n, c, h * w)
    winner = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, winner[..., None], axis=-1)[..., 0]

    def backward(grad: np.ndarray):
        routed = np.zeros(flat.shape)
        np.put_along_axis(routed, winner[..., None], grad[..., None], axis=-1)
        x.accumulate(routed.reshape(x.shape))

    return Tensor.from_op(out, (x,), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """x [N, in] with weight [out, in] -> [N, out]."""
    out = ops.matmul(x, _transpose(weight))
    if bias is not None:
        out = ops.add(out, bias)
    return out


def _transpose(w: Tensor) -> Tensor:
    def backward(grad: np.ndarray):
        w.accumulate(grad.T)

    return Tensor.from_op(w.data.T, (w,), backward)


def lstm_cell(x: Tensor, h_prev: Tensor, c_prev: Tensor, weight: Tensor, bias: Tensor) -> Tuple[Tensor, Tensor]:
    """
    Vanilla LSTM step without peepholes.
    weight is [4H, X + H] acting on [x, h_prev]; gate blocks are ordered input, forget, cell, output.
    """
    hidden = h_prev.shape[-1]
    if weight.shape[0] != 4 * hidden or c_prev.shape != h_prev.shape:
        raise ShapeMismatch(
            f"lstm_cell hidden size mismatch: weight {weight.shape}, h {h_prev.shape}, c {c_prev.shape}"
        )
    if weight.shape[1] != x.shape[-1] + hidden:
        raise ShapeMismatch(f"lstm_cell weight {weight.shape} does not fit input {x.shape}")

    gates = linear(ops.concat([x, h_prev], axis=1), weight, bias)
    i = ops.sigmoid(gates[:, 0:hidden])
    f = ops.sigmoid(gates[:, hidden : 2 * hidden])
    g = ops.tanh(gates[:, 2 * hidden : 3 * hidden])
    o = ops.sigmoid(gates[:, 3 * hidden : 4 * hidden])
    c = f * c_prev + i * g
    h = o * ops.tanh(c)
    return h, c


def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Parameter,
    running_var: Parameter,
    mode: Literal["train", "eval"] = "train",
) -> Tensor:
    """
    Per-channel normalisation over every axis except axis 1.
    Train mode normalises with batch statistics and folds them into the running averages
    (momentum 0.9); eval mode uses the running averages.
    """
    if x.shape[0] == 0:
        raise ContractViolation("batchnorm needs a non-empty batch")

    axes = (0,) + tuple(range(2, x.ndim))
    shape = [1] * x.ndim
    shape[1] = x.shape[1]
    shape = tuple(shape)
    scale = gamma.data.reshape(shape)

    if mode == "eval":
        inv_std = 1.0 / np.sqrt(running_var.data.reshape(shape) + BN_EPS)
        x_hat = (x.data - running_mean.data.reshape(shape)) * inv_std

        def backward(grad: np.ndarray):
            if x.requires_grad:
                x.accumulate(grad * scale * inv_std)
            if gamma.requires_grad:
                gamma.accumulate((grad * x_hat).sum(axis=axes))
            if beta.requires_grad:
                beta.accumulate(grad.sum(axis=axes))

        return Tensor.from_op(x_hat * scale + beta.data.reshape(shape), (x, gamma, beta), backward)

    if mode != "train":
        raise ContractViolation(f"batchnorm mode must be 'train' or 'eval', got '{mode}'")

    count = x.data.size // x.shape[1]
    batch_mean = x.data.mean(axis=axes)
    batch_var = x.data.var(axis=axes)
    inv_std = 1.0 / np.sqrt(batch_var.reshape(shape) + BN_EPS)
    x_hat = (x.data - batch_mean.reshape(shape)) * inv_std

    running_mean.data[...] = BN_MOMENTUM * running_mean.data + (1.0 - BN_MOMENTUM) * batch_mean
    running_var.data[...] = BN_MOMENTUM * running_var.data + (1.0 - BN_MOMENTUM) * batch_var

    def backward(grad: np.ndarray):
        if gamma.requires_grad:
            gamma.accumulate((grad * x_hat).sum(axis=axes))
        if beta.requires_grad:
            beta.accumulate(grad.sum(axis=axes))
        if x.requires_grad:
            g_hat = grad * scale
            x.accumulate(
                inv_std
                / count
                * (
                    count * g_hat
                    - g_hat.sum(axis=axes, keepdims=True)
                    - x_hat * (g_hat * x_hat).sum(axis=axes, keepdims=True)
                )
            )

    return Tensor.from_op(x_hat * scale + beta.data.reshape(shape), (x, gamma, beta), backward)


def bce_loss(pred: Tensor, target) -> Tensor:
    """Mean binary cross-entropy; predictions are clamped to [1e-7, 1 - 1e-7]."""
    target = as_tensor(target).data
    if pred.shape != target.shape:
        raise ShapeMismatch(f"bce_loss shapes differ: {pred.shape} vs {target.shape}")

    p = ops.clip(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    losses = target * ops.log(p) + (1.0 - target) * ops.log(1.0 - p)
    return -ops.mean(losses)


def mse_loss(pred: Tensor, target) -> Tensor:
    target = as_tensor(target).data
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse_loss shapes differ: {pred.shape} vs {target.shape}")

    diff = pred - target
    return ops.mean(diff * diff)


def kl_diag_gaussian(mu: Tensor, log_var: Tensor) -> Tensor:
    """KL(N(mu, exp(log_var)) || N(0, I)) summed over latent dims, averaged over the batch."""
    if mu.shape != log_var.shape:
        raise ShapeMismatch(f"kl_diag_gaussian shapes differ: {mu.shape} vs {log_var.shape}")

    batch = mu.shape[0] if mu.ndim > 1 else 1
    terms = mu * mu + ops.exp(log_var) - 1.0 - log_var
    return ops.total(terms) * (0.5 / batch)


def reparameterize(mu: Tensor, log_var: Tensor, noise) -> Tensor:
    """a = mu + exp(0.5 * log_var) * noise; noise is a constant of the graph."""
    noise = as_tensor(noise).data
    if noise.shape != mu.shape:
        raise ShapeMismatch(f"noise shape {noise.shape} does not match mu {mu.shape}")

    std = ops.exp(ops.clip(log_var, *LOG_VAR_RANGE) * 0.5)
    return mu + std * noise
