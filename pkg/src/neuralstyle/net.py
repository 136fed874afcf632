"""VGG-19-style feature extractor as an explicit layer chain with named taps.

The graph is a plain list of layer specs (conv -> relu per stage, pooling
between blocks). forward() retains the activations of requested tap layers
plus the minimal per-layer context (relu masks, pool argmax indices, input
shapes) needed by backward_to_input(), which accumulates arbitrary tap
gradients back to the input image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor
from .weights import WeightEntry, WeightStore

# Convs per block in VGG-19; each conv is 3x3 stride 1 with same padding,
# each block ends in a 2x2 stride-2 pool.
VGG19_BLOCKS = (2, 2, 4, 4, 4)

CONV_NAMES = tuple(
    f"conv{b}_{i}"
    for b, n in enumerate(VGG19_BLOCKS, start=1)
    for i in range(1, n + 1))

# Standard out-channel widths of the public VGG-19 architecture.
VGG19_WIDTHS = {
    "conv1_1": 64, "conv1_2": 64,
    "conv2_1": 128, "conv2_2": 128,
    "conv3_1": 256, "conv3_2": 256, "conv3_3": 256, "conv3_4": 256,
    "conv4_1": 512, "conv4_2": 512, "conv4_3": 512, "conv4_4": 512,
    "conv5_1": 512, "conv5_2": 512, "conv5_3": 512, "conv5_4": 512,
}

DEFAULT_STYLE_TAPS = ("relu1_1", "relu2_1", "relu3_1", "relu4_1", "relu5_1")
DEFAULT_CONTENT_TAP = "relu4_2"
DEFAULT_TAPS = tuple(sorted(set(DEFAULT_STYLE_TAPS) | {DEFAULT_CONTENT_TAP}))


def as_tap_name(name: str) -> str:
    """Map the 'convX_Y' spelling onto the relu tap actually used."""
    if name.startswith("conv"):
        return "relu" + name[len("conv"):]
    return name


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str                 # 'conv' | 'relu' | 'maxpool' | 'avgpool'
    weight: str | None = None  # weight entry name for conv layers
    pool: int = 0              # pool size for pool layers


@dataclass
class NetworkGraph:
    layers: list[LayerSpec]
    taps: tuple[str, ...]
    weights: WeightStore

    def layer_names(self) -> list[str]:
        return [spec.name for spec in self.layers]


@dataclass
class ActivationCache:
    taps: dict[str, np.ndarray]
    aux: dict[str, object] = field(default_factory=dict)
    input_shape: tuple[int, ...] = ()


def build_vgg19(weights: WeightStore, pooling_mode: str = "max",
                taps: tuple[str, ...] = DEFAULT_TAPS,
                prune: bool = False) -> NetworkGraph:
    """Assemble the conv/relu/pool chain from a weight store.

    Channel widths are taken from the weights, so a reduced-width store
    (tiny test mode) builds the same topology. With prune=True, layers
    after the deepest tap are dropped.
    """
    if pooling_mode not in ("max", "avg"):
        raise ValueError(f"pooling_mode must be 'max' or 'avg', got {pooling_mode!r}")
    layers: list[LayerSpec] = []
    prev_channels = 3
    for block, n_convs in enumerate(VGG19_BLOCKS, start=1):
        for i in range(1, n_convs + 1):
            name = f"conv{block}_{i}"
            if name not in weights:
                raise ValueError(f"weight store is missing entry for layer {name!r}")
            kernel, bias = weights[name]
            if kernel.ndim != 4 or kernel.shape[2:] != (3, 3):
                raise ValueError(
                    f"layer {name!r}: kernel shape {kernel.shape} is not (out_c,in_c,3,3)")
            if kernel.shape[1] != prev_channels:
                raise ValueError(
                    f"layer {name!r}: kernel shape {kernel.shape} expects "
                    f"{kernel.shape[1]} input channels but previous layer "
                    f"produces {prev_channels}")
            if bias.shape != (kernel.shape[0],):
                raise ValueError(
                    f"layer {name!r}: bias shape {bias.shape} != ({kernel.shape[0]},)")
            layers.append(LayerSpec(name, "conv", weight=name))
            layers.append(LayerSpec(f"relu{block}_{i}", "relu"))
            prev_channels = kernel.shape[0]
        layers.append(LayerSpec(f"pool{block}", f"{pooling_mode}pool", pool=2))
    names = {spec.name for spec in layers}
    for t in taps:
        if t not in names:
            raise ValueError(f"requested tap {t!r} is not a layer of this graph")
    if prune:
        deepest = max(i for i, spec in enumerate(layers) if spec.name in taps)
        layers = layers[:deepest + 1]
    return NetworkGraph(layers=layers, taps=tuple(taps), weights=weights)


def forward(graph: NetworkGraph, image: np.ndarray) -> ActivationCache:
    """Run the chain on a preprocessed image, retaining taps and backward context."""
    tensor._require_4d(image, "network input")
    cache = ActivationCache(taps={}, aux={}, input_shape=image.shape)
    x = image
    for spec in graph.layers:
        try:
            if spec.kind == "conv":
                kernel, bias = graph.weights[spec.weight]
                cache.aux[spec.name] = x.shape
                x = tensor.conv2d_forward(x, kernel, bias, padding="same", stride=1)
            elif spec.kind == "relu":
                mask = x > 0
                cache.aux[spec.name] = mask
                x = tensor.relu_forward(x)
            elif spec.kind == "maxpool":
                shape = x.shape
                x, idx = tensor.maxpool_forward(x, spec.pool)
                cache.aux[spec.name] = (idx, shape)
            elif spec.kind == "avgpool":
                cache.aux[spec.name] = x.shape
                x = tensor.avgpool_forward(x, spec.pool)
            else:
                raise ValueError(f"unknown layer kind {spec.kind!r}")
        except ValueError as e:
            raise ValueError(f"layer {spec.name!r}: {e}") from e
        if spec.name in graph.taps:
            cache.taps[spec.name] = x
    return cache


def backward_to_input(graph: NetworkGraph, cache: ActivationCache,
                      tap_grads: dict[str, np.ndarray]) -> np.ndarray:
    """Accumulate gradients injected at tap outputs back to the input image.

    Linear in tap_grads: the result is the sum over taps of the pullback of
    each tap gradient.
    """
    for name, g in tap_grads.items():
        if name not in graph.taps:
            raise ValueError(f"unknown tap {name!r}")
        if name not in cache.taps:
            raise ValueError(f"tap {name!r} missing from cache")
        if g.shape != cache.taps[name].shape:
            raise ValueError(
                f"tap {name!r}: grad shape {g.shape} != activation shape "
                f"{cache.taps[name].shape}")
    touched = [i for i, spec in enumerate(graph.layers) if spec.name in tap_grads]
    if not touched:
        return np.zeros(cache.input_shape, dtype=np.float32)
    g = None
    for spec in reversed(graph.layers[:max(touched) + 1]):
        if spec.name in tap_grads:
            inj = tap_grads[spec.name].astype(np.float32, copy=False)
            g = inj if g is None else g + inj
        if spec.kind == "conv":
            kernel, _ = graph.weights[spec.weight]
            g = tensor.conv2d_backward(g, cache.aux[spec.name], kernel,
                                       padding="same", stride=1)
        elif spec.kind == "relu":
            g = (g * cache.aux[spec.name]).astype(np.float32, copy=False)
        elif spec.kind == "maxpool":
            idx, shape = cache.aux[spec.name]
            g = tensor.maxpool_backward(g, idx, spec.pool, shape)
        elif spec.kind == "avgpool":
            g = tensor.avgpool_backward(g, spec.pool, cache.aux[spec.name])
    return g


def tiny_weight_store(seed: int = 0, widths=(4, 8, 8, 8, 8)) -> WeightStore:
    """Seeded random weights with VGG-19 topology at reduced channel counts.

    Gives every gradient and pipeline test a full network path without the
    large pretrained weight file. Biases are zero, kernels He-scaled.
    """
    rng = np.random.default_rng(seed)
    store: WeightStore = {}
    prev = 3
    for block, n_convs in enumerate(VGG19_BLOCKS, start=1):
        out_c = widths[block - 1]
        for i in range(1, n_convs + 1):
            std = np.sqrt(2.0 / (prev * 9))
            kernel = (rng.standard_normal((out_c, prev, 3, 3)) * std).astype(np.float32)
            bias = np.zeros(out_c, dtype=np.float32)
            store[f"conv{block}_{i}"] = WeightEntry(kernel, bias)
            prev = out_c
    return store
