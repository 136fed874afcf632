"""Loss terms for edge-preserving neural style transfer, with analytic gradients.

Terms:
  * content: mean-squared feature distance at one deep tap layer.
  * style: weighted squared Gram-matrix distances over several tap layers.
  * laplacian: squared distance between image Laplacians taken after p x p
    average pooling; the 3x3 Laplacian filter is applied to all channels in
    one convolution, which computes the sum of the per-channel Laplacians.
  * log5: ablation variant using a fixed 5x5 Laplacian-of-Gaussian filter,
    no pooling.

The weighted objective is
    total = alpha * content + beta * style + sum_k gamma_k * lap_k
where the Laplacian terms differentiate directly in pixel space, bypassing
the feature network. Loss scalars are float64; gradients are float32.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import net, tensor

# Textbook 5x5 discrete Laplacian of Gaussian; coefficients sum to zero.
LOG_5X5 = np.array(
    [[0, 0, 1, 0, 0],
     [0, 1, 2, 1, 0],
     [1, 2, -16, 2, 1],
     [0, 1, 2, 1, 0],
     [0, 0, 1, 0, 0]], dtype=np.float32)

LAP_FILTER_POOL = "pool"
LAP_FILTER_LOG5 = "log5"


@dataclass(frozen=True)
class LossConfig:
    """Weights and layer choices for the combined objective."""
    alpha: float = 5.0
    beta: float = 100.0
    content_layer: str = net.DEFAULT_CONTENT_TAP
    style_layers: tuple[tuple[str, float], ...] = tuple(
        (name, 1.0 / len(net.DEFAULT_STYLE_TAPS)) for name in net.DEFAULT_STYLE_TAPS)
    lap_terms: tuple[tuple[int, float], ...] = ((4, 100.0),)
    lap_filter: str = LAP_FILTER_POOL

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("content/style weights must be >= 0")
        for name, w in self.style_layers:
            if w <= 0:
                raise ValueError(f"style layer {name!r} weight must be > 0, got {w}")
        for p, gamma in self.lap_terms:
            if p < 1:
                raise ValueError(f"pooling size must be >= 1, got {p}")
            if gamma < 0:
                raise ValueError(f"laplacian weight must be >= 0, got {gamma}")
        if self.lap_filter not in (LAP_FILTER_POOL, LAP_FILTER_LOG5):
            raise ValueError(f"unknown lap_filter {self.lap_filter!r}")

    def tap_names(self) -> tuple[str, ...]:
        names = [self.content_layer] + [n for n, _ in self.style_layers]
        return tuple(dict.fromkeys(names))


@dataclass(frozen=True)
class LossReport:
    """Per-evaluation loss scalars. content/style/lap are raw (unweighted)."""
    total: float
    content: float
    style: float
    lap: tuple[float, ...]

    def weighted_total(self, config: LossConfig) -> float:
        return (config.alpha * self.content + config.beta * self.style
                + sum(g * v for (_, g), v in zip(config.lap_terms, self.lap)))


@dataclass(frozen=True)
class LossTargets:
    """Precomputed targets: content features, style Grams, content Laplacians."""
    content_features: np.ndarray
    style_grams: dict[str, np.ndarray]
    lap: tuple[np.ndarray, ...]


def gram(features: np.ndarray) -> np.ndarray:
    """Channel correlation matrix (N x N), normalized by the pixel count."""
    n, c, h, w = features.shape
    flat = features.reshape(n * c, h * w).astype(np.float32, copy=False)
    return (flat @ flat.T) * np.float32(1.0 / (h * w))


def content_loss(f_hat: np.ndarray, f_target: np.ndarray):
    """Mean-squared feature distance and its gradient wrt f_hat."""
    if f_hat.shape != f_target.shape:
        raise ValueError(
            f"content feature shape {f_hat.shape} != target {f_target.shape}")
    _, c, h, w = f_hat.shape
    scale = 1.0 / (c * h * w)
    diff = f_hat - f_target
    value = float(np.sum(np.square(diff), dtype=np.float64) * scale)
    grad = (diff * np.float32(2.0 * scale)).astype(np.float32, copy=False)
    return value, grad


def style_loss(taps: dict[str, np.ndarray], gram_targets: dict[str, np.ndarray],
               style_layers):
    """Weighted Gram-distance loss over layers and per-layer feature grads.

    Returns (value, grads) with grads[name] already multiplied by that
    layer's weight, so the caller only applies the global style weight.
    """
    value = 0.0
    grads: dict[str, np.ndarray] = {}
    for name, w in style_layers:
        if name not in taps:
            raise ValueError(f"style layer {name!r} missing from activation cache")
        if name not in gram_targets:
            raise ValueError(f"style layer {name!r} missing from gram targets")
        feats = taps[name]
        n, c, h, w_px = feats.shape
        m = h * w_px
        diff = gram(feats) - gram_targets[name]
        value += w * float(np.sum(np.square(diff), dtype=np.float64) / (4.0 * c * c))
        flat = feats.reshape(c, m)
        dflat = (diff.astype(np.float32) @ flat) * np.float32(1.0 / (m * c * c))
        grads[name] = (dflat.reshape(feats.shape) * np.float32(w)).astype(
            np.float32, copy=False)
    return value, grads


def _lap_kernel(channels: int, base: np.ndarray) -> np.ndarray:
    # One (1, channels, k, k) filter: convolving all channels together sums
    # the per-channel responses in a single pass.
    return np.broadcast_to(base, (1, channels) + base.shape).astype(np.float32)


def laplacian(image: np.ndarray, p: int) -> np.ndarray:
    """Channel-summed Laplacian of the p x p average-pooled image (valid conv)."""
    tensor._require_4d(image, "laplacian input")
    pooled = tensor.avgpool_forward(image, p) if p > 1 else image
    if pooled.shape[2] < 3 or pooled.shape[3] < 3:
        raise ValueError(
            f"image too small for laplacian: pooled dims {pooled.shape[2]}x"
            f"{pooled.shape[3]} with p={p}, need at least 3x3")
    kernel = _lap_kernel(image.shape[1], tensor.LAPLACIAN_3X3)
    return tensor.conv2d_forward(pooled, kernel, padding="valid", stride=1)


def log_laplacian(image: np.ndarray) -> np.ndarray:
    """Channel-summed 5x5 Laplacian-of-Gaussian response, no pooling."""
    tensor._require_4d(image, "log input")
    if image.shape[2] < 5 or image.shape[3] < 5:
        raise ValueError(f"image smaller than 5x5: {image.shape}")
    kernel = _lap_kernel(image.shape[1], LOG_5X5)
    return tensor.conv2d_forward(image, kernel, padding="valid", stride=1)


def lap_response(image: np.ndarray, p: int, lap_filter: str = LAP_FILTER_POOL):
    if lap_filter == LAP_FILTER_LOG5:
        return log_laplacian(image)
    return laplacian(image, p)


def laplacian_loss(image: np.ndarray, lap_target: np.ndarray, p: int,
                   lap_filter: str = LAP_FILTER_POOL):
    """Plain sum of squared Laplacian differences and its pixel-space gradient."""
    tensor._require_4d(image, "laplacian_loss input")
    if lap_filter == LAP_FILTER_LOG5:
        pooled = image
        base = LOG_5X5
    else:
        pooled = tensor.avgpool_forward(image, p) if p > 1 else image
        base = tensor.LAPLACIAN_3X3
    if pooled.shape[2] < base.shape[0] or pooled.shape[3] < base.shape[1]:
        raise ValueError(
            f"image too small for laplacian: pooled dims "
            f"{pooled.shape[2]}x{pooled.shape[3]} with p={p}")
    kernel = _lap_kernel(image.shape[1], base)
    response = tensor.conv2d_forward(pooled, kernel, padding="valid", stride=1)
    if response.shape != lap_target.shape:
        raise ValueError(
            f"pooled laplacian shape {response.shape} != cached target "
            f"{lap_target.shape} (p={p})")
    diff = response - lap_target
    value = float(np.sum(np.square(diff), dtype=np.float64))
    g = tensor.conv2d_backward(2.0 * diff, pooled.shape, kernel,
                               padding="valid", stride=1)
    if lap_filter != LAP_FILTER_LOG5 and p > 1:
        g = tensor.avgpool_backward(g, p, image.shape)
    return value, g.astype(np.float32, copy=False)


def total_loss(image: np.ndarray, graph: net.NetworkGraph, config: LossConfig,
               targets: LossTargets):
    """Evaluate the weighted objective and its gradient wrt image pixels.

    Content and style gradients are pulled back through the feature network;
    Laplacian gradients are added directly in pixel space.
    """
    cache = net.forward(graph, image)
    if config.content_layer not in cache.taps:
        raise ValueError(
            f"content term: layer {config.content_layer!r} missing from activation cache")
    try:
        c_value, c_grad = content_loss(cache.taps[config.content_layer],
                                       targets.content_features)
    except ValueError as e:
        raise ValueError(f"content term: {e}") from e
    try:
        s_value, s_grads = style_loss(cache.taps, targets.style_grams,
                                      config.style_layers)
    except ValueError as e:
        raise ValueError(f"style term: {e}") from e

    tap_grads: dict[str, np.ndarray] = {}
    if config.alpha > 0:
        tap_grads[config.content_layer] = c_grad * np.float32(config.alpha)
    if config.beta > 0:
        for name, g in s_grads.items():
            g = g * np.float32(config.beta)
            tap_grads[name] = tap_grads[name] + g if name in tap_grads else g
    if tap_grads:
        pixel_grad = net.backward_to_input(graph, cache, tap_grads)
    else:
        pixel_grad = np.zeros(image.shape, dtype=np.float32)

    lap_values = []
    for k, (p, gamma) in enumerate(config.lap_terms):
        try:
            l_value, l_grad = laplacian_loss(image, targets.lap[k], p,
                                             config.lap_filter)
        except ValueError as e:
            raise ValueError(f"laplacian term {k} (p={p}): {e}") from e
        lap_values.append(l_value)
        if gamma > 0:
            pixel_grad = pixel_grad + l_grad * np.float32(gamma)

    total = (config.alpha * c_value + config.beta * s_value
             + sum(g * v for (_, g), v in zip(config.lap_terms, lap_values)))
    report = LossReport(total=float(total), content=c_value, style=s_value,
                        lap=tuple(lap_values))
    return report, pixel_grad.astype(np.float32, copy=False)
