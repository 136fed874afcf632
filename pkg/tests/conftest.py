"""Shared fixtures and independent reference implementations (oracles).

The references here are deliberately written as plain nested loops in
float64, independent of the vectorized code paths they check.
"""

import numpy as np
import pytest

from neuralstyle import net
from neuralstyle.tensor import conv_output_geometry


def conv2d_reference(x, kernel, bias=None, padding="valid", stride=1):
    """Quadruple-nested-loop cross-correlation."""
    n, c, h, w = x.shape
    oc, ic, kh, kw = kernel.shape
    assert c == ic
    oh, ow, pt, pb, pl, pr = conv_output_geometry(h, w, kh, kw, padding, stride)
    xp = np.zeros((n, c, h + pt + pb, w + pl + pr), dtype=np.float64)
    xp[:, :, pt:pt + h, pl:pl + w] = x
    out = np.zeros((n, oc, oh, ow), dtype=np.float64)
    for b in range(n):
        for o in range(oc):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(ic):
                        for ki in range(kh):
                            for kj in range(kw):
                                acc += (xp[b, ci, i * stride + ki, j * stride + kj]
                                        * float(kernel[o, ci, ki, kj]))
                    out[b, o, i, j] = acc + (float(bias[o]) if bias is not None else 0.0)
    return out


def avgpool_reference(x, p):
    n, c, h, w = x.shape
    oh, ow = h // p, w // p
    out = np.zeros((n, c, oh, ow), dtype=np.float64)
    for b in range(n):
        for ci in range(c):
            for i in range(oh):
                for j in range(ow):
                    block = x[b, ci, i * p:(i + 1) * p, j * p:(j + 1) * p]
                    out[b, ci, i, j] = float(np.asarray(block, dtype=np.float64).mean())
    return out


def maxpool_reference(x, p):
    """Forward values plus the backward routing for an all-ones output grad."""
    n, c, h, w = x.shape
    oh, ow = h // p, w // p
    out = np.zeros((n, c, oh, ow), dtype=np.float64)
    route = np.zeros((n, c, h, w), dtype=np.float64)
    for b in range(n):
        for ci in range(c):
            for i in range(oh):
                for j in range(ow):
                    best = None
                    for bi in range(p):
                        for bj in range(p):
                            v = float(x[b, ci, i * p + bi, j * p + bj])
                            if best is None or v > best[0]:
                                best = (v, i * p + bi, j * p + bj)
                    out[b, ci, i, j] = best[0]
                    route[b, ci, best[1], best[2]] += 1.0
    return out, route


def gram_reference(features):
    _, c, h, w = features.shape
    m = h * w
    g = np.zeros((c, c), dtype=np.float64)
    for i in range(c):
        for j in range(c):
            acc = 0.0
            for y in range(h):
                for x_ in range(w):
                    acc += float(features[0, i, y, x_]) * float(features[0, j, y, x_])
            g[i, j] = acc / m
    return g


def forward_f64_taps(graph, image):
    """Independent float64 forward pass for finite-difference oracles.

    Same architecture walk as the engine but computed as an offset sum in
    float64 (vs the engine's float32 im2col + GEMM), so finite differences
    are not drowned in float32 evaluation noise. Returns (taps, kink_margin)
    where kink_margin is the smallest |pre-activation| reaching any relu;
    finite differences are only trustworthy when the probe epsilon cannot
    flip a relu, i.e. for inputs with a comfortable margin.
    """
    x = np.asarray(image, dtype=np.float64)
    taps = {}
    margin = np.inf
    for spec in graph.layers:
        if spec.kind == "conv":
            kernel, bias = graph.weights[spec.weight]
            k = np.asarray(kernel, dtype=np.float64)
            n, _, h, w = x.shape
            xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
            out = np.zeros((n, k.shape[0], h, w), dtype=np.float64)
            for di in range(3):
                for dj in range(3):
                    out += np.einsum("nchw,oc->nohw",
                                     xp[:, :, di:di + h, dj:dj + w],
                                     k[:, :, di, dj])
            x = out + np.asarray(bias, dtype=np.float64)[None, :, None, None]
        elif spec.kind == "relu":
            margin = min(margin, float(np.min(np.abs(x))))
            x = np.maximum(x, 0.0)
        elif spec.kind == "maxpool":
            n, c, h, w = x.shape
            p = spec.pool
            v = x[:, :, :h // p * p, :w // p * p].reshape(n, c, h // p, p, w // p, p)
            x = v.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // p, w // p, p * p).max(-1)
        elif spec.kind == "avgpool":
            n, c, h, w = x.shape
            p = spec.pool
            v = x[:, :, :h // p * p, :w // p * p].reshape(n, c, h // p, p, w // p, p)
            x = v.mean(axis=(3, 5))
        if spec.name in graph.taps:
            taps[spec.name] = x
    return taps, margin


def kink_safe_image(graph, shape, seed, eps, lo=-110.0, hi=140.0, tries=60):
    """First seeded image (scanning seeds upward) whose relu pre-activations
    all clear the finite-difference probe by a safe factor."""
    for attempt in range(tries):
        x = seeded_image(shape, seed + 1000 * attempt, lo, hi)
        _, margin = forward_f64_taps(graph, x)
        if margin > 10.0 * eps:
            return x
    raise AssertionError(f"no kink-safe seed found near {seed}")


def finite_difference(f, x, coords, eps):
    """Central finite differences of scalar f at the given flat coordinates."""
    out = np.zeros(len(coords))
    for k, idx in enumerate(coords):
        xp = x.copy()
        xp.flat[idx] += eps
        xm = x.copy()
        xm.flat[idx] -= eps
        out[k] = (f(xp) - f(xm)) / (2.0 * eps)
    return out


def fraction_close(analytic, reference, rtol):
    """Fraction of entries whose relative error is below rtol."""
    a = np.asarray(analytic, dtype=np.float64).ravel()
    b = np.asarray(reference, dtype=np.float64).ravel()
    scale = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-30)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-9 * scale)
    return float(np.mean(np.abs(a - b) / denom < rtol))


def assert_grad_close(analytic, reference, rtol=1e-3, min_fraction=1.0):
    frac = fraction_close(analytic, reference, rtol)
    assert frac >= min_fraction, \
        f"only {frac:.1%} of gradient entries within rtol={rtol}"


@pytest.fixture(scope="session")
def tiny_store():
    return net.tiny_weight_store(seed=0)


@pytest.fixture(scope="session")
def tiny_graph(tiny_store):
    return net.build_vgg19(tiny_store, taps=net.DEFAULT_TAPS, prune=True)


def seeded_image(shape, seed, lo=-110.0, hi=140.0):
    rng = np.random.default_rng(seed)
    return rng.uniform(lo, hi, size=shape).astype(np.float32)
