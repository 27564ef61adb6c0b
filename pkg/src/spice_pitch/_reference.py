"""Pure-numpy implementations of the hot kernels.

These are the fallback used when the compiled ``_kernels`` extension is not
available, and the reference the extension is tested against. Every function
here has a twin with the same signature in ``_kernels.pyx``.

Layout conventions: activations are ``[batch, channels, width]``, conv
weights are ``[out_channels, in_channels, kernel]``.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _windows(xp, kernel, stride, out_w):
    B, C, _ = xp.shape
    sb, sc, sw = xp.strides
    # [B, out_w, C, K] view, no copy
    return as_strided(xp, shape=(B, out_w, C, kernel), strides=(sb, sw * stride, sc, sw), writeable=False)


def conv1d_forward(x, w, stride, pad):
    B, C, W = x.shape
    O, _, K = w.shape
    out_w = (W + 2 * pad - K) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad))) if pad else x
    cols = _windows(xp, K, stride, out_w).reshape(B * out_w, C * K)
    y = cols @ w.reshape(O, C * K).T
    return np.ascontiguousarray(y.reshape(B, out_w, O).transpose(0, 2, 1))


def conv1d_grad_weight(gy, x, stride, pad, kernel):
    B, C, W = x.shape
    _, O, out_w = gy.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad))) if pad else x
    cols = _windows(xp, kernel, stride, out_w).reshape(B * out_w, C * kernel)
    g2 = gy.transpose(0, 2, 1).reshape(B * out_w, O)
    return (g2.T @ cols).reshape(O, C, kernel)


def conv1d_grad_input(gy, w, stride, pad, width):
    """Adjoint of :func:`conv1d_forward` w.r.t. its input, for an input of ``width``."""
    B, O, out_w = gy.shape
    _, C, K = w.shape
    dcols = (gy.transpose(0, 2, 1).reshape(B * out_w, O) @ w.reshape(O, C * K)).reshape(B, out_w, C, K)
    padded_w = max(width + 2 * pad, (out_w - 1) * stride + K)
    gxp = np.zeros((B, C, padded_w), dtype=gy.dtype)
    span = stride * (out_w - 1) + 1
    for k in range(K):
        gxp[:, :, k:k + span:stride] += dcols[:, :, :, k].transpose(0, 2, 1)
    return np.ascontiguousarray(gxp[:, :, pad:pad + width])


def maxpool1d_forward(x, size, stride, out_w):
    """Max over windows ``[j*stride, j*stride+size)`` clipped to the input width.

    Returns the pooled values and the absolute argmax index of each window;
    ties resolve to the first index.
    """
    B, C, W = x.shape
    need = (out_w - 1) * stride + size
    if need > W:
        x = np.concatenate([x, np.full((B, C, need - W), -np.inf, dtype=x.dtype)], axis=2)
    sb, sc, sw = x.strides
    win = as_strided(x, shape=(B, C, out_w, size), strides=(sb, sc, sw * stride, sw), writeable=False)
    rel = win.argmax(axis=3)
    idx = rel + (np.arange(out_w) * stride)[None, None, :]
    y = np.take_along_axis(win, rel[..., None], axis=3)[..., 0]
    return np.ascontiguousarray(y), idx.astype(np.intp)


def maxpool1d_backward(gy, idx, width):
    B, C, out_w = gy.shape
    gx = np.zeros((B, C, width), dtype=gy.dtype)
    flat = (np.arange(B * C)[:, None] * width + idx.reshape(B * C, out_w)).ravel()
    np.add.at(gx.reshape(-1), flat, gy.reshape(-1))
    return gx


def cqt_magnitudes(padded, starts, lengths, atoms_re, atoms_im, centers):
    """Magnitude of each atom's inner product with each analysis frame.

    ``padded`` is the reflection-padded signal; frame ``t`` is centered at
    ``centers[t]`` (index into ``padded``). Atom ``k`` occupies
    ``atoms_re[k, :lengths[k]]`` and starts ``starts[k]`` samples before the
    frame center.
    """
    T = len(centers)
    F = len(lengths)
    out = np.empty((T, F), dtype=np.float64)
    for k in range(F):
        n = int(lengths[k])
        seg_idx = centers[:, None] - starts[k] + np.arange(n)[None, :]
        segs = padded[seg_idx]
        re = segs @ atoms_re[k, :n]
        im = segs @ atoms_im[k, :n]
        out[:, k] = np.hypot(re, im)
    return out
