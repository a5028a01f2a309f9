"""Minimal dense numeric kit: layers with hand-written backward passes.

Everything runs in float64 on numpy arrays. Layers are pure functions that
return the forward value plus whatever the matching backward function needs.
Randomness goes through a counter-based generator so identical seeds give
identical streams; :func:`grad_check` verifies any analytic gradient against
central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class NNError(Exception):
    pass


class ShapeMismatch(NNError):
    pass


class IndexOutOfRange(NNError):
    pass


class NonFiniteLoss(NNError):
    pass


def seeded_rng(seed: int) -> np.random.Generator:
    """Counter-based (Philox) generator; same seed, same stream, any platform."""
    return np.random.Generator(np.random.Philox(seed))


def xavier_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in = shape[0] if len(shape) > 1 else shape[0]
    fan_out = shape[-1]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ParamSet:
    """Named parameter tensors with paired gradient buffers."""

    def __init__(self) -> None:
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.values:
            raise KeyError(f"parameter {name!r} already registered")
        arr = np.asarray(value, dtype=np.float64)
        self.values[name] = arr
        self.grads[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def grad(self, name: str) -> np.ndarray:
        return self.grads[name]

    def names(self) -> list[str]:
        return sorted(self.values)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def grad_global_norm(self) -> float:
        total = 0.0
        for g in self.grads.values():
            total += float(np.sum(g * g))
        return math.sqrt(total)

    def num_elements(self) -> int:
        return sum(v.size for v in self.values.values())


# ---------------------------------------------------------------------------
# layers


def embed_forward(ids: np.ndarray, table: np.ndarray) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.intp)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexOutOfRange(f"token id outside embedding table of size {table.shape[0]}")
    return table[ids]


def embed_backward(ids: np.ndarray, grad_out: np.ndarray, grad_table: np.ndarray) -> None:
    """Scatter-add: gradients of repeated ids accumulate."""
    np.add.at(grad_table, np.asarray(ids, dtype=np.intp), grad_out)


def linear_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    if x.shape[-1] != w.shape[0]:
        raise ShapeMismatch(f"linear: input width {x.shape[-1]} != weight rows {w.shape[0]}")
    return x @ w + b


def linear_backward(
    x: np.ndarray, w: np.ndarray, grad_y: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    grad_x = grad_y @ w.T
    if x.ndim == 1:
        grad_w = np.outer(x, grad_y)
        grad_b = grad_y.copy()
    else:
        grad_w = x.T @ grad_y
        grad_b = grad_y.sum(axis=0)
    return grad_x, grad_w, grad_b


def sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    """Numerically stable sigmoid via the sign-split formulation."""
    arr = np.asarray(x, dtype=np.float64)
    out = np.empty_like(arr)
    pos = arr >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-arr[pos]))
    ex = np.exp(arr[~pos])
    out[~pos] = ex / (1.0 + ex)
    if np.isscalar(x) or getattr(x, "ndim", 1) == 0:
        return float(out)
    return out


def sigmoid_backward(y: np.ndarray | float, grad_y: np.ndarray | float):
    return grad_y * y * (1.0 - y)


def mean_pool_forward(x: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeMismatch("mean_pool expects a nonempty (n, d) matrix")
    return x.mean(axis=0)


def mean_pool_backward(n: int, grad_y: np.ndarray) -> np.ndarray:
    return np.tile(grad_y / n, (n, 1))


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def softmax_rows_backward(probs: np.ndarray, grad_p: np.ndarray) -> np.ndarray:
    inner = (grad_p * probs).sum(axis=-1, keepdims=True)
    return probs * (grad_p - inner)


_MASK_BIAS = -1e30


@dataclass
class AttentionCache:
    x: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    probs: np.ndarray
    ctx: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray


def self_attention_forward(
    x: np.ndarray,
    wq: np.ndarray,
    wk: np.ndarray,
    wv: np.ndarray,
    wo: np.ndarray,
    mask: np.ndarray | None = None,
) -> tuple[np.ndarray, AttentionCache]:
    """Single-head scaled dot-product self-attention with output projection.

    ``mask`` is an (n, n) boolean matrix; entry [i, j] allows token i to
    attend to token j. Disallowed positions get a large negative bias before
    the softmax, so their weights come out as exactly 0.
    """
    if x.ndim != 2:
        raise ShapeMismatch("attention expects an (n, d) matrix")
    d = x.shape[1]
    for name, w in (("wq", wq), ("wk", wk), ("wv", wv), ("wo", wo)):
        if w.shape != (d, d):
            raise ShapeMismatch(f"attention weight {name} must be ({d}, {d}), got {w.shape}")
    q = x @ wq
    k = x @ wk
    v = x @ wv
    scores = (q @ k.T) / math.sqrt(d)
    if mask is not None:
        if mask.shape != scores.shape:
            raise ShapeMismatch(f"mask shape {mask.shape} != scores shape {scores.shape}")
        scores = np.where(mask, scores, _MASK_BIAS)
    probs = softmax_rows(scores)
    ctx = probs @ v
    out = ctx @ wo
    return out, AttentionCache(x=x, q=q, k=k, v=v, probs=probs, ctx=ctx, wq=wq, wk=wk, wv=wv, wo=wo)


def self_attention_backward(
    cache: AttentionCache, grad_out: np.ndarray
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Gradients w.r.t. the input and the four projection matrices.

    Returns ``(grad_x, {"wq": ..., "wk": ..., "wv": ..., "wo": ...})``.
    """
    x = cache.x
    d = x.shape[1]
    grad_wo = cache.ctx.T @ grad_out
    grad_ctx = grad_out @ cache.wo.T
    grad_probs = grad_ctx @ cache.v.T
    grad_v = cache.probs.T @ grad_ctx
    grad_scores = softmax_rows_backward(cache.probs, grad_probs) / math.sqrt(d)
    grad_q = grad_scores @ cache.k
    grad_k = grad_scores.T @ cache.q
    grad_wq = x.T @ grad_q
    grad_wk = x.T @ grad_k
    grad_wv = x.T @ grad_v
    grad_x = grad_q @ cache.wq.T + grad_k @ cache.wk.T + grad_v @ cache.wv.T
    return grad_x, {"wq": grad_wq, "wk": grad_wk, "wv": grad_wv, "wo": grad_wo}


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    """Fixed sin/cos position table, one row per position."""
    pe = np.zeros((n, d))
    if n == 0 or d == 0:
        return pe
    position = np.arange(n)[:, None].astype(np.float64)
    div = np.exp(np.arange(0, d, 2) * (-math.log(10000.0) / d))
    pe[:, 0::2] = np.sin(position * div)
    pe[:, 1::2] = np.cos(position * div[: d // 2])
    return pe


# ---------------------------------------------------------------------------
# optimization


@dataclass
class AdamState:
    """Adam moments plus the gradient-clip setting. One instance per ParamSet."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: ParamSet, state: AdamState) -> None:
    """Global-norm clip at ``clip_norm``, bias-corrected Adam update, zero grads."""
    norm = params.grad_global_norm()
    scale = state.clip_norm / norm if norm > state.clip_norm else 1.0
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name in params.names():
        grad = params.grads[name]
        if scale != 1.0:
            grad = grad * scale
        if name not in state.m:
            state.m[name] = np.zeros_like(grad)
            state.v[name] = np.zeros_like(grad)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * grad * grad
        params.values[name] -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    params.zero_grads()


# ---------------------------------------------------------------------------
# verification


def grad_check(params: ParamSet, loss_fn, h: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    ``loss_fn(want_grads)`` must return the scalar loss for the current
    parameter values; when ``want_grads`` is true it must also fill
    ``params.grads``. Relative error per element is
    ``|a - n| / max(1, |a|, |n|)``.
    """
    params.zero_grads()
    base = loss_fn(True)
    if not math.isfinite(base):
        raise NonFiniteLoss(f"loss is {base}")
    analytic = {name: params.grads[name].copy() for name in params.names()}
    max_rel = 0.0
    for name in params.names():
        flat = params.values[name].ravel()
        grads = analytic[name].ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            plus = loss_fn(False)
            flat[i] = orig - h
            minus = loss_fn(False)
            flat[i] = orig
            if not (math.isfinite(plus) and math.isfinite(minus)):
                raise NonFiniteLoss("loss not finite during finite differencing")
            numeric = (plus - minus) / (2.0 * h)
            rel = abs(grads[i] - numeric) / max(1.0, abs(grads[i]), abs(numeric))
            if rel > max_rel:
                max_rel = rel
    params.zero_grads()
    return max_rel
