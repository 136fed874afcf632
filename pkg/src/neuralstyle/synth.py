"""Synthesis loop: precompute targets once, then iterate an optimizer over pixels.

Targets (content features, style Gram matrices, content Laplacians) are
computed exactly once before iteration 0. Per-iteration loss scalars are
recorded for the whole run; the pixels are optimized unconstrained and only
clamped when the image is encoded.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import imgio, loss, net, optim
from .loss import LossConfig, LossReport, LossTargets

INIT_CONTENT = "content"
INIT_RANDOM = "random"


class SynthesisError(RuntimeError):
    """Raised when a run aborts; carries the loss history recorded so far."""

    def __init__(self, message: str, history: list[LossReport]):
        super().__init__(message)
        self.history = history


class NormalizationError(ValueError):
    pass


@dataclass
class SynthesisConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    optimizer: str = "lbfgs"
    iterations: int = 1000
    init: str = INIT_CONTENT
    seed: int = 0
    size: int | None = None  # working size used by the CLI; recorded here
    adam_lr: float = 10.0
    lbfgs_memory: int = 10

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.optimizer not in ("lbfgs", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.init not in (INIT_CONTENT, INIT_RANDOM):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class SynthesisResult:
    image: np.ndarray
    history: list[LossReport]
    wall_time: float
    stalled: bool
    init_mode: str


def precompute_targets(graph: net.NetworkGraph, content: np.ndarray,
                       style: np.ndarray, config: LossConfig) -> LossTargets:
    """Content features, style Grams, and content Laplacians, computed once."""
    content_cache = net.forward(graph, content)
    if config.content_layer not in content_cache.taps:
        raise ValueError(f"content layer {config.content_layer!r} is not a tap")
    style_cache = net.forward(graph, style)
    grams = {}
    for name, _ in config.style_layers:
        if name not in style_cache.taps:
            raise ValueError(f"style layer {name!r} is not a tap")
        grams[name] = loss.gram(style_cache.taps[name])
    laps = tuple(
        loss.lap_response(content, p, config.lap_filter)
        for p, _ in config.lap_terms)
    return LossTargets(content_features=content_cache.taps[config.content_layer],
                       style_grams=grams, lap=laps)


def init_image(content: np.ndarray, init: str, seed: int) -> np.ndarray:
    if init == INIT_CONTENT:
        return content.copy()
    rng = np.random.default_rng(seed)
    pixels = rng.uniform(0.0, 255.0, size=content.shape).astype(np.float32)
    means = np.asarray(imgio.CHANNEL_MEANS, dtype=np.float32)
    return pixels - means[None, :, None, None]


def synthesize(graph: net.NetworkGraph, content: np.ndarray, style: np.ndarray,
               config: SynthesisConfig, on_iteration=None) -> SynthesisResult:
    """Run the full procedure; deterministic for a fixed seed and optimizer.

    on_iteration(i, report), when given, is called after each iteration's
    loss is recorded. A stalled L-BFGS line search ends the run early; the
    history holds one report per iteration actually run.
    """
    if content.shape[1] != style.shape[1]:
        raise ValueError(
            f"content/style channel mismatch: {content.shape} vs {style.shape}")
    t0 = time.perf_counter()
    history: list[LossReport] = []
    stalled = False
    try:
        targets = precompute_targets(graph, content, style, config.loss)
        x = init_image(content, config.init, config.seed)
        shape = x.shape
        reports_this_eval: list[LossReport] = []

        def eval_at(flat: np.ndarray):
            img = flat.astype(np.float32).reshape(shape)
            report, grad = loss.total_loss(img, graph, config.loss, targets)
            reports_this_eval.append(report)
            return report.total, grad.ravel().astype(np.float64)

        flat = x.ravel().astype(np.float64)
        if config.optimizer == "lbfgs":
            state = optim.LbfgsState(memory=config.lbfgs_memory)
            for i in range(config.iterations):
                reports_this_eval.clear()
                flat = optim.lbfgs_step(state, flat, eval_at)
                history.append(reports_this_eval[0])  # report at iteration start
                if on_iteration is not None:
                    on_iteration(i, history[-1])
                if state.stalled:
                    stalled = True
                    break
        else:
            state = optim.AdamState.create(flat.size, lr=config.adam_lr)
            for i in range(config.iterations):
                _, grad = eval_at(flat)
                history.append(reports_this_eval.pop())
                if on_iteration is not None:
                    on_iteration(i, history[-1])
                flat = optim.adam_step(state, flat, grad)
    except SynthesisError:
        raise
    except Exception as e:
        raise SynthesisError(str(e), history) from e
    image = flat.astype(np.float32).reshape(shape)
    return SynthesisResult(image=image, history=history,
                           wall_time=time.perf_counter() - t0,
                           stalled=stalled, init_mode=config.init)


def normalized_report(history: list[LossReport]) -> dict:
    """Loss table normalized by the initial Laplacian loss.

    Raw per-term losses are divided by the summed iteration-0 Laplacian
    loss; the table's total is the sum of the normalized content, style and
    Laplacian values. Also reports each final term as a fraction of the
    final total and the final/initial ratio per column.
    """
    if not history:
        raise ValueError("empty history")
    lap0 = float(sum(history[0].lap))
    if lap0 <= 0.0:
        raise NormalizationError(
            "initial Laplacian loss is zero; normalization undefined "
            "(use random init)")

    def row(r: LossReport) -> dict:
        lap = [v / lap0 for v in r.lap]
        content = r.content / lap0
        style = r.style / lap0
        lap_total = sum(lap)
        return {"total": content + style + lap_total, "content": content,
                "style": style, "lap": lap, "lap_total": lap_total}

    init = row(history[0])
    final = row(history[-1])
    frac = {k: (final[k] / final["total"] if final["total"] > 0 else float("nan"))
            for k in ("content", "style", "lap_total")}
    ratio = {k: (final[k] / init[k] if init[k] > 0 else float("nan"))
             for k in ("total", "content", "style", "lap_total")}
    return {"normalizer": lap0, "init": init, "final": final,
            "frac_of_total": frac, "ratio_to_init": ratio}
