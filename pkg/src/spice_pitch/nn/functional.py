"""Differentiable layer operations built on the kernel backend."""

import numpy as np

from .. import backend
from .tensor import Tensor, make, reshape


def _k():
    return backend.kernels


def _c(a):
    # compiled kernels take C-contiguous buffers
    return np.ascontiguousarray(a)


def conv1d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation of ``x [B, C_in, W]`` with ``weight [C_out, C_in, K]``."""
    B, C, W = x.shape
    O, C2, K = weight.shape
    if C != C2:
        raise ValueError(f"conv1d: input has {C} channels, weight expects {C2}")
    if W + 2 * padding < K:
        raise ValueError(f"conv1d: kernel {K} does not fit padded width {W + 2 * padding}")
    kern = _k()
    y = kern.conv1d_forward(_c(x.data), _c(weight.data), stride, padding)
    if bias is not None:
        y += bias.data[None, :, None]

    def backward(g):
        g = _c(g)
        gx = kern.conv1d_grad_input(g, _c(weight.data), stride, padding, W) if x.requires_grad else None
        gw = kern.conv1d_grad_weight(g, _c(x.data), stride, padding, K) if weight.requires_grad else None
        out = [gx, gw]
        if bias is not None:
            out.append(g.sum(axis=(0, 2)))
        return tuple(out)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make(y, parents, backward, "conv1d")


def conv_transpose1d(x, weight, bias=None, stride=1, padding=0, output_padding=0):
    """Adjoint of :func:`conv1d` as a layer.

    ``weight`` has shape ``[C_in, C_out, K]`` (the conv1d weight whose adjoint
    this is). Output width is ``(W - 1) * stride - 2 * padding + K + output_padding``.
    """
    B, C, W = x.shape
    C2, O, K = weight.shape
    if C != C2:
        raise ValueError(f"conv_transpose1d: input has {C} channels, weight expects {C2}")
    out_w = (W - 1) * stride - 2 * padding + K + output_padding
    if out_w <= 0 or (output_padding and output_padding >= stride):
        raise ValueError("conv_transpose1d: invalid output geometry")
    kern = _k()
    y = kern.conv1d_grad_input(_c(x.data), _c(weight.data), stride, padding, out_w)
    if bias is not None:
        y += bias.data[None, :, None]

    def backward(g):
        g = _c(g)
        gx = kern.conv1d_forward(g, _c(weight.data), stride, padding) if x.requires_grad else None
        gw = kern.conv1d_grad_weight(_c(x.data), g, stride, padding, K) if weight.requires_grad else None
        out = [gx, gw]
        if bias is not None:
            out.append(g.sum(axis=(0, 2)))
        return tuple(out)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make(y, parents, backward, "conv_transpose1d")


def maxpool1d(x, size=3, stride=2, ceil_mode=False):
    """Max pooling without padding.

    Floor mode gives ``floor((W - size) / stride) + 1`` outputs; ceil mode
    gives ``ceil((W - size) / stride) + 1`` with the last window clipped to the
    input. Gradient goes to the first argmax of each window.
    """
    B, C, W = x.shape
    if W < size and not ceil_mode:
        raise ValueError(f"maxpool1d: window {size} larger than input width {W}")
    if ceil_mode:
        out_w = max(-(-(W - size) // stride), 0) + 1
    else:
        out_w = (W - size) // stride + 1
    y, idx = _k().maxpool1d_forward(_c(x.data), size, stride, out_w)
    return make(y, (x,), lambda g: (_k().maxpool1d_backward(_c(g), idx, W),), "maxpool1d")


def batchnorm1d(x, gamma, beta, running_mean, running_var, training, momentum=0.99, eps=1e-5):
    """Per-channel normalization over batch and width.

    In training mode the batch statistics are used and the running buffers
    (numpy arrays) are updated in place as
    ``running = momentum * running + (1 - momentum) * batch``.
    """
    B, C, W = x.shape
    n = B * W
    if n == 0:
        raise ValueError("batchnorm1d: empty batch")
    if not training:
        scale = gamma.data / np.sqrt(running_var + eps)
        shift = beta.data - running_mean * scale
        y = x.data * scale[None, :, None].astype(x.dtype) + shift[None, :, None].astype(x.dtype)

        def backward_eval(g):
            gx = g * scale[None, :, None] if x.requires_grad else None
            xhat = (x.data - running_mean[None, :, None]) / np.sqrt(running_var + eps)[None, :, None]
            return gx, (g * xhat).sum(axis=(0, 2)), g.sum(axis=(0, 2))

        return make(y.astype(x.dtype), (x, gamma, beta), backward_eval, "batchnorm1d")

    mu = x.data.mean(axis=(0, 2), dtype=np.float64)
    xc = x.data - mu[None, :, None].astype(x.dtype)
    var = (xc.astype(np.float64) ** 2).mean(axis=(0, 2))
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv[None, :, None].astype(x.dtype)
    y = xhat * gamma.data[None, :, None] + beta.data[None, :, None]

    running_mean *= momentum
    running_mean += (1.0 - momentum) * mu
    running_var *= momentum
    running_var += (1.0 - momentum) * var * n / max(n - 1, 1)

    def backward(g):
        gbeta = g.sum(axis=(0, 2), dtype=np.float64)
        ggamma = (g * xhat).sum(axis=(0, 2), dtype=np.float64)
        gx = None
        if x.requires_grad:
            gxhat = g * gamma.data[None, :, None]
            m1 = gxhat.mean(axis=(0, 2), dtype=np.float64)
            m2 = (gxhat * xhat).mean(axis=(0, 2), dtype=np.float64)
            gx = (gxhat - m1[None, :, None] - xhat * m2[None, :, None]) * inv[None, :, None]
        return gx, ggamma, gbeta

    return make(y.astype(x.dtype), (x, gamma, beta), backward, "batchnorm1d")


def dense(x, weight, bias=None):
    """``x [B, N] @ weight [N, M] + bias [M]``."""
    if x.shape[1] != weight.shape[0]:
        raise ValueError(f"dense: input width {x.shape[1]} does not match weight {weight.shape}")
    y = x.data @ weight.data
    if bias is not None:
        y = y + bias.data

    def backward(g):
        gx = g @ weight.data.T if x.requires_grad else None
        gw = x.data.T @ g if weight.requires_grad else None
        out = [gx, gw]
        if bias is not None:
            out.append(g.sum(axis=0))
        return tuple(out)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make(y, parents, backward, "dense")


def flatten(x):
    return reshape(x, (x.shape[0], int(np.prod(x.shape[1:]))))


__all__ = ["Tensor", "conv1d", "conv_transpose1d", "maxpool1d", "batchnorm1d", "dense", "flatten"]
