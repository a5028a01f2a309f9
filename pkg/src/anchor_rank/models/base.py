"""Context-window scorer: encode one candidate's anchored input, score its CLS.

One instance per (code, entity) candidate pair. The encoder is a residual
self-attention stack over embeddings plus sinusoidal positions; the head is a
linear layer and a sigmoid on the leading CLS position.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..anchor import AnchorConfig, Vocab, anchor, assemble_base_input
from ..corpus import Candidate, Document
from ..nnkit import (
    ParamSet,
    embed_backward,
    embed_forward,
    seeded_rng,
    sigmoid,
    sinusoidal_positions,
    xavier_uniform,
)
from ..ontology import IcdCode, IcdTable
from .encoder import encoder_backward, encoder_forward, init_encoder
from .losses import document_loss_and_score_grads

_SCORE_FLOOR = np.nextafter(0.0, 1.0)
_SCORE_CEIL = np.nextafter(1.0, 0.0)


def clamp_score(value: float) -> float:
    """Keep sigmoid outputs inside the open interval (0, 1)."""
    return min(max(value, _SCORE_FLOOR), _SCORE_CEIL)


@dataclass(frozen=True)
class Prediction:
    """A relevance score for a candidate code (optionally tied to one entity)."""

    code: IcdCode
    entity_id: Optional[str]
    score: float


class BaseModel:
    kind = "base"

    def __init__(self, vocab_size: int, dim: int = 64, depth: int = 2, seed: int = 0):
        self.vocab_size = vocab_size
        self.dim = dim
        self.depth = depth
        self.params = ParamSet()
        rng = seeded_rng(seed)
        self.params.add("emb", xavier_uniform(rng, (vocab_size, dim)))
        init_encoder(self.params, "enc", depth, dim, rng)
        self.params.add("head.w", xavier_uniform(rng, (dim, 1)))
        self.params.add("head.b", np.zeros(1))
        self._pos_cache: np.ndarray | None = None

    def hyper(self) -> dict:
        return {"vocab_size": self.vocab_size, "dim": self.dim, "depth": self.depth}

    def _positions(self, n: int) -> np.ndarray:
        if self._pos_cache is None or self._pos_cache.shape[0] < n:
            self._pos_cache = sinusoidal_positions(max(n, 64), self.dim)
        return self._pos_cache[:n]

    def _logit(self, ids: list[int]):
        idx = np.asarray(ids, dtype=np.intp)
        x = embed_forward(idx, self.params["emb"]) + self._positions(len(ids))
        h, tapes = encoder_forward(self.params, "enc", self.depth, x)
        cls = h[0]
        z = float(cls @ self.params["head.w"][:, 0] + self.params["head.b"][0])
        return z, (idx, tapes, h, cls)

    def _logit_backward(self, tape, grad_z: float) -> None:
        idx, tapes, h, cls = tape
        self.params.grads["head.w"][:, 0] += grad_z * cls
        self.params.grads["head.b"][0] += grad_z
        grad_h = np.zeros_like(h)
        grad_h[0] = grad_z * self.params["head.w"][:, 0]
        grad_x = encoder_backward(self.params, "enc", tapes, grad_h)
        embed_backward(idx, grad_x, self.params.grads["emb"])

    def _instances(
        self, document: Document, vocab: Vocab, table: IcdTable, config: AnchorConfig
    ) -> list[tuple[Candidate, list[int], int]]:
        out = []
        for cand in document.candidates:
            ctx = anchor(document, cand, config, vocab, table)
            ids = assemble_base_input(ctx, config)
            out.append((cand, ids, int(cand.relevant)))
        return out

    def score_document(
        self, document: Document, vocab: Vocab, table: IcdTable, config: AnchorConfig
    ) -> list[Prediction]:
        preds = []
        for cand, ids, _ in self._instances(document, vocab, table, config):
            z, _tape = self._logit(ids)
            preds.append(
                Prediction(code=cand.code, entity_id=cand.entity_id, score=clamp_score(sigmoid(z)))
            )
        return preds

    def document_loss(
        self,
        document: Document,
        vocab: Vocab,
        table: IcdTable,
        config: AnchorConfig,
        lam: float = 0.0,
        want_grads: bool = False,
    ) -> float:
        instances = self._instances(document, vocab, table, config)
        if not instances:
            return 0.0
        logits = []
        tapes = []
        for _, ids, _ in instances:
            z, tape = self._logit(ids)
            logits.append(z)
            tapes.append(tape)
        labels = [label for _, _, label in instances]
        loss, grad_z = document_loss_and_score_grads(np.array(logits), labels, lam)
        if want_grads:
            for tape, gz in zip(tapes, grad_z):
                self._logit_backward(tape, float(gz))
        return loss
