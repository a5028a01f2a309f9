"""Residual self-attention encoder stack shared by the scoring architectures.

Each layer applies single-head attention with a residual connection:
``h <- h + attention(h)``. Parameters are registered under a prefix so one
ParamSet can hold several stacks (context encoder, evidence layer, heads).
"""

from __future__ import annotations

import numpy as np

from ..nnkit import (
    AttentionCache,
    ParamSet,
    self_attention_backward,
    self_attention_forward,
    xavier_uniform,
)


def init_encoder(params: ParamSet, prefix: str, depth: int, dim: int, rng) -> None:
    for layer in range(depth):
        for name in ("wq", "wk", "wv", "wo"):
            params.add(f"{prefix}.l{layer}.{name}", xavier_uniform(rng, (dim, dim)))


def encoder_forward(
    params: ParamSet,
    prefix: str,
    depth: int,
    x: np.ndarray,
    mask: np.ndarray | None = None,
) -> tuple[np.ndarray, list[AttentionCache]]:
    h = x
    tapes: list[AttentionCache] = []
    for layer in range(depth):
        out, cache = self_attention_forward(
            h,
            params[f"{prefix}.l{layer}.wq"],
            params[f"{prefix}.l{layer}.wk"],
            params[f"{prefix}.l{layer}.wv"],
            params[f"{prefix}.l{layer}.wo"],
            mask=mask,
        )
        h = h + out
        tapes.append(cache)
    return h, tapes


def encoder_backward(
    params: ParamSet,
    prefix: str,
    tapes: list[AttentionCache],
    grad_h: np.ndarray,
) -> np.ndarray:
    """Accumulates weight gradients into ``params.grads``; returns grad of input."""
    for layer in reversed(range(len(tapes))):
        grad_attn_in, grads = self_attention_backward(tapes[layer], grad_h)
        for name, g in grads.items():
            params.grads[f"{prefix}.l{layer}.{name}"] += g
        grad_h = grad_h + grad_attn_in
    return grad_h
