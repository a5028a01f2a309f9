"""Per-document losses: binary cross-entropy, pairwise ranking, interpolation.

Both losses are means over a document's scored instances. The ranking loss
pushes relevant scores above irrelevant ones; it equals the negated mean
score margin over all (relevant, irrelevant) pairs and is defined as 0 when a
document has no such pair. Training uses the logit-space BCE for numerical
safety; it is the same function as :func:`bce_loss` on interior scores.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ..nnkit import sigmoid


def bce_loss(scores: Sequence[float], labels: Sequence[int]) -> float:
    """-(1/n) sum of [y log p + (1-y) log(1-p)] over one document's instances."""
    if len(scores) != len(labels):
        raise ValueError("scores and labels must align")
    if not scores:
        return 0.0
    total = 0.0
    for p, y in zip(scores, labels):
        if not (0.0 < p < 1.0):
            raise ValueError(f"score {p} outside the open interval (0, 1)")
        total += math.log(p) if y else math.log(1.0 - p)
    return -total / len(scores)


def bce_loss_from_logits(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Stable BCE and its gradient w.r.t. the logits.

    Identical to ``bce_loss(sigmoid(z), y)`` but finite for any float logit.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.size == 0:
        return 0.0, np.zeros_like(z)
    per_item = np.maximum(z, 0.0) - y * z + np.log1p(np.exp(-np.abs(z)))
    grad = (sigmoid(z) - y) / z.size
    return float(per_item.mean()), grad


def ranking_loss(scores: Sequence[float], labels: Sequence[int]) -> float:
    """-(1/s) sum over (relevant, irrelevant) pairs of their score difference.

    ``s`` is the pair count; documents with no relevant or no irrelevant
    instance contribute 0.
    """
    if len(scores) != len(labels):
        raise ValueError("scores and labels must align")
    rel = [p for p, y in zip(scores, labels) if y]
    irr = [p for p, y in zip(scores, labels) if not y]
    if not rel or not irr:
        return 0.0
    # The double sum factorizes: mean over pairs = mean(rel) - mean(irr).
    return -(sum(rel) / len(rel) - sum(irr) / len(irr))


def ranking_grad(scores: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of :func:`ranking_loss` w.r.t. each score."""
    y = np.asarray(labels, dtype=bool)
    grad = np.zeros(len(scores), dtype=np.float64)
    n_rel = int(y.sum())
    n_irr = len(scores) - n_rel
    if n_rel == 0 or n_irr == 0:
        return grad
    grad[y] = -1.0 / n_rel
    grad[~y] = 1.0 / n_irr
    return grad


def total_loss(bce: float, rank: float, lam: float) -> float:
    """Per-document convex interpolation ``(1 - lam) * bce + lam * rank``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    return (1.0 - lam) * bce + lam * rank


def document_loss_and_score_grads(
    logits: np.ndarray, labels: Sequence[int], lam: float
) -> tuple[float, np.ndarray]:
    """Interpolated per-document loss and its gradient w.r.t. the logits."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    bce, grad_z_bce = bce_loss_from_logits(z, y)
    probs = np.asarray(sigmoid(z), dtype=np.float64).reshape(z.shape)
    rank = ranking_loss(probs.tolist(), [int(v) for v in y])
    grad_z_rank = ranking_grad(probs, y) * probs * (1.0 - probs)
    loss = total_loss(bce, rank, lam)
    grad_z = (1.0 - lam) * grad_z_bce + lam * grad_z_rank
    return loss, grad_z
