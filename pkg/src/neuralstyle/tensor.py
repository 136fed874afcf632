"""Dense float32 NCHW tensor primitives: conv2d, relu, avg/max pooling.

Every op is a pure function. Forward variants take and return 4-D
``(n, c, h, w)`` float32 arrays; each backward variant returns the gradient
of a scalar objective with respect to the op's input, given the gradient
with respect to its output. Convolution is cross-correlation (no kernel
flip), accumulation stays in float32.
"""

from __future__ import annotations

import numpy as np

# The universal value type: (n, c, h, w) float32, C-contiguous, w fastest.
Tensor = np.ndarray

# 3x3 discrete approximation of the 2-D Laplacian operator.
LAPLACIAN_3X3 = np.array(
    [[0.0, -1.0, 0.0],
     [-1.0, 4.0, -1.0],
     [0.0, -1.0, 0.0]], dtype=np.float32)


def _require_4d(x: np.ndarray, what: str) -> None:
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        raise ValueError(f"{what} must be a 4-D (n,c,h,w) array, got shape "
                         f"{getattr(x, 'shape', None)}")


def conv_output_geometry(h: int, w: int, kh: int, kw: int,
                         padding: str, stride: int):
    """Output dims and per-side zero padding for a conv with the given rule.

    Returns (out_h, out_w, pad_top, pad_bottom, pad_left, pad_right).
    'valid' uses no padding; 'same' zero-pads so out = ceil(in / stride).
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if padding == "valid":
        oh = (h - kh) // stride + 1
        ow = (w - kw) // stride + 1
        pt = pb = pl = pr = 0
    elif padding == "same":
        oh = -(-h // stride)
        ow = -(-w // stride)
        ph = max((oh - 1) * stride + kh - h, 0)
        pw = max((ow - 1) * stride + kw - w, 0)
        pt, pb = ph // 2, ph - ph // 2
        pl, pr = pw // 2, pw - pw // 2
    else:
        raise ValueError(f"unknown padding {padding!r} (expected 'valid' or 'same')")
    if oh < 1 or ow < 1:
        raise ValueError(
            f"zero-sized conv output {oh}x{ow} for input {h}x{w}, "
            f"kernel {kh}x{kw}, padding={padding}, stride={stride}")
    return oh, ow, pt, pb, pl, pr


def _im2col(x: Tensor, kh: int, kw: int, stride: int,
            pads: tuple[int, int, int, int]) -> np.ndarray:
    """Unfold padded input into rows of receptive fields: (n*oh*ow, c*kh*kw)."""
    pt, pb, pl, pr = pads
    if pt or pb or pl or pr:
        x = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    n, c, oh, ow = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    return np.ascontiguousarray(cols, dtype=np.float32)


def conv2d_forward(x: Tensor, kernel: Tensor, bias: np.ndarray | None = None,
                   padding: str = "valid", stride: int = 1) -> Tensor:
    """Cross-correlate x (n,c,h,w) with kernel (out_c,in_c,kh,kw) plus bias."""
    _require_4d(x, "conv input")
    _require_4d(kernel, "conv kernel")
    n, c, h, w = x.shape
    oc, ic, kh, kw = kernel.shape
    if c != ic:
        raise ValueError(
            f"conv channel mismatch: input shape {x.shape} has {c} channels "
            f"but kernel shape {kernel.shape} expects {ic}")
    if bias is not None and bias.shape != (oc,):
        raise ValueError(f"bias shape {bias.shape} != ({oc},)")
    oh, ow, *pads = conv_output_geometry(h, w, kh, kw, padding, stride)
    cols = _im2col(x, kh, kw, stride, tuple(pads))
    out = cols @ kernel.reshape(oc, ic * kh * kw).T.astype(np.float32)
    if bias is not None:
        out += bias.astype(np.float32)
    return np.ascontiguousarray(out.reshape(n, oh, ow, oc).transpose(0, 3, 1, 2))


def conv2d_backward(grad_output: Tensor, x, kernel: Tensor,
                    padding: str = "valid", stride: int = 1) -> Tensor:
    """Gradient of sum(grad_output * conv2d_forward(x, ...)) wrt x.

    Convolution is linear in x, so only the input *shape* matters; `x` may
    be the input tensor itself or its (n,c,h,w) shape tuple.
    """
    shape = tuple(x.shape) if isinstance(x, np.ndarray) else tuple(x)
    n, c, h, w = shape
    oc, ic, kh, kw = kernel.shape
    if c != ic:
        raise ValueError(
            f"conv channel mismatch: input shape {shape} has {c} channels "
            f"but kernel shape {kernel.shape} expects {ic}")
    oh, ow, pt, pb, pl, pr = conv_output_geometry(h, w, kh, kw, padding, stride)
    _require_4d(grad_output, "conv grad_output")
    if grad_output.shape != (n, oc, oh, ow):
        raise ValueError(
            f"grad_output shape {grad_output.shape} != expected {(n, oc, oh, ow)}")
    g = grad_output.transpose(0, 2, 3, 1).reshape(n * oh * ow, oc)
    cols = (g @ kernel.reshape(oc, ic * kh * kw).astype(np.float32))
    cols = cols.reshape(n, oh, ow, c, kh, kw)
    gx = np.zeros((n, c, h + pt + pb, w + pl + pr), dtype=np.float32)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i:i + oh * stride:stride, j:j + ow * stride:stride] += \
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return np.ascontiguousarray(gx[:, :, pt:pt + h, pl:pl + w])


def relu_forward(x: Tensor) -> Tensor:
    return np.maximum(x, np.float32(0.0))


def relu_backward(grad: Tensor, x: Tensor) -> Tensor:
    # Gradient is 0 at exactly 0.
    return (grad * (x > 0)).astype(np.float32, copy=False)


def _pool_geometry(shape, p: int):
    if p < 1:
        raise ValueError(f"pool size must be >= 1, got {p}")
    n, c, h, w = shape
    oh, ow = h // p, w // p
    if oh < 1 or ow < 1:
        raise ValueError(f"zero-sized pool output for input {h}x{w} with p={p}")
    return n, c, oh, ow


def avgpool_forward(x: Tensor, p: int) -> Tensor:
    """Mean over p x p blocks, stride p; trailing remainder rows/cols dropped."""
    _require_4d(x, "avgpool input")
    n, c, oh, ow = _pool_geometry(x.shape, p)
    v = x[:, :, :oh * p, :ow * p].reshape(n, c, oh, p, ow, p)
    return v.mean(axis=(3, 5), dtype=np.float32)


def avgpool_backward(grad: Tensor, p: int, input_shape=None) -> Tensor:
    """Spread grad/p^2 uniformly into each block; dropped cells get zero grad."""
    _require_4d(grad, "avgpool grad")
    n, c, oh, ow = grad.shape
    block = np.repeat(np.repeat(grad, p, axis=2), p, axis=3)
    block = (block * np.float32(1.0 / (p * p))).astype(np.float32, copy=False)
    if input_shape is None or tuple(input_shape)[2:] == (oh * p, ow * p):
        return block
    h, w = input_shape[2], input_shape[3]
    gx = np.zeros((n, c, h, w), dtype=np.float32)
    gx[:, :, :oh * p, :ow * p] = block
    return gx


def maxpool_forward(x: Tensor, p: int):
    """Max over p x p blocks, stride p. Returns (output, argmax indices).

    Indices are within-block positions in row-major scan order; ties go to
    the first maximal cell, which makes the backward routing deterministic.
    """
    _require_4d(x, "maxpool input")
    n, c, oh, ow = _pool_geometry(x.shape, p)
    v = x[:, :, :oh * p, :ow * p].reshape(n, c, oh, p, ow, p)
    v = v.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, p * p)
    idx = v.argmax(axis=-1)
    out = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), idx


def maxpool_backward(grad: Tensor, indices: np.ndarray, p: int,
                     input_shape=None) -> Tensor:
    """Route each output grad to its argmax cell; everything else gets zero."""
    _require_4d(grad, "maxpool grad")
    n, c, oh, ow = grad.shape
    if indices.shape != (n, c, oh, ow):
        raise ValueError(f"indices shape {indices.shape} != grad shape {grad.shape}")
    buf = np.zeros((n, c, oh, ow, p * p), dtype=np.float32)
    np.put_along_axis(buf, indices[..., None], grad[..., None].astype(np.float32), axis=-1)
    block = buf.reshape(n, c, oh, ow, p, p).transpose(0, 1, 2, 4, 3, 5)
    block = block.reshape(n, c, oh * p, ow * p)
    if input_shape is None or tuple(input_shape)[2:] == (oh * p, ow * p):
        return np.ascontiguousarray(block)
    h, w = input_shape[2], input_shape[3]
    gx = np.zeros((n, c, h, w), dtype=np.float32)
    gx[:, :, :oh * p, :ow * p] = block
    return gx
