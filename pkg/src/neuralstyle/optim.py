"""Pixel-space optimizers: Adam and L-BFGS with Armijo backtracking.

Both operate on flat float64 parameter vectors (the image is raveled by the
synthesis loop). States are single-owner and mutated in place; step
functions return the updated parameter vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 10.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, size: int, lr: float = 10.0, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(m=np.zeros(size), v=np.zeros(size), lr=lr,
                   beta1=beta1, beta2=beta2, eps=eps)


def adam_step(state: AdamState, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update."""
    grad = np.asarray(grad, dtype=np.float64).ravel()
    if grad.shape != state.m.shape or params.shape != state.m.shape:
        raise ValueError(
            f"param/grad size {params.shape}/{grad.shape} != state size {state.m.shape}")
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient passed to adam_step")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class LbfgsState:
    memory: int = 10
    c1: float = 1e-4
    shrink: float = 0.5
    max_trials: int = 20
    pairs: list[tuple[np.ndarray, np.ndarray, float]] = field(default_factory=list)
    prev_x: np.ndarray | None = None
    prev_g: np.ndarray | None = None
    stalled: bool = False


def _two_loop(g: np.ndarray, pairs) -> np.ndarray:
    """Apply the implicit inverse-Hessian estimate to g."""
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * np.dot(s, q)
        q -= a * y
        alphas.append(a)
    s, y, _ = pairs[-1]
    q *= np.dot(s, y) / np.dot(y, y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * np.dot(y, q)
        q += s * (a - b)
    return q


def lbfgs_step(state: LbfgsState, params: np.ndarray, loss_fn) -> np.ndarray:
    """One L-BFGS iteration: update pair history, pick a direction via the
    two-loop recursion, then backtrack until the Armijo condition holds.

    loss_fn maps a parameter vector to (loss, grad) and must be
    deterministic within the step. On line-search failure the state's
    stalled flag is set and params are returned unchanged (step 0).
    """
    params = np.asarray(params, dtype=np.float64)
    f0, g0 = loss_fn(params)
    g0 = np.asarray(g0, dtype=np.float64).ravel()
    if not np.isfinite(f0) or not np.all(np.isfinite(g0)):
        raise ValueError("non-finite loss or gradient in lbfgs_step")

    if state.prev_x is not None:
        s = params - state.prev_x
        y = g0 - state.prev_g
        sy = float(np.dot(s, y))
        if sy > 0:  # curvature condition; pairs violating it are skipped
            state.pairs.append((s, y, 1.0 / sy))
            if len(state.pairs) > state.memory:
                state.pairs.pop(0)

    if state.pairs:
        d = -_two_loop(g0, state.pairs)
        alpha = 1.0
    else:
        d = -g0
        gnorm1 = float(np.sum(np.abs(g0)))
        alpha = min(1.0, 1.0 / gnorm1) if gnorm1 > 0 else 1.0
    gd = float(np.dot(g0, d))
    if gd >= 0.0:
        # Not a descent direction; fall back to steepest descent.
        d = -g0
        gd = -float(np.dot(g0, g0))
    if gd >= 0.0:  # gradient is exactly zero
        state.stalled = True
        return params

    for _ in range(state.max_trials):
        x_new = params + alpha * d
        f_new, _ = loss_fn(x_new)
        if f_new <= f0 + state.c1 * alpha * gd:
            state.prev_x = params.copy()
            state.prev_g = g0
            state.stalled = False
            return x_new
        alpha *= state.shrink
    state.stalled = True
    return params
