"""Evidence-aggregating scorer: one prediction per unique candidate code.

Every mention of a code is encoded independently with the base context
encoder; the CLS vectors are then mixed by a position-free self-attention
layer, mean-pooled, and scored. Because the evidence layer has no positional
signal and pooling is a mean, the score is invariant under any permutation of
a code's evidence contexts.
"""

from __future__ import annotations

import numpy as np

from ..anchor import AnchorConfig, Vocab, anchor, assemble_base_input
from ..corpus import Document, group_by_code
from ..nnkit import (
    ParamSet,
    embed_backward,
    embed_forward,
    mean_pool_backward,
    mean_pool_forward,
    seeded_rng,
    sigmoid,
    sinusoidal_positions,
    xavier_uniform,
)
from ..ontology import IcdTable, parse_code
from .encoder import encoder_backward, encoder_forward, init_encoder
from .base import Prediction, clamp_score
from .losses import document_loss_and_score_grads


class AggregationModel:
    kind = "aggregation"

    def __init__(self, vocab_size: int, dim: int = 64, depth: int = 2, seed: int = 0):
        self.vocab_size = vocab_size
        self.dim = dim
        self.depth = depth
        self.params = ParamSet()
        rng = seeded_rng(seed)
        self.params.add("emb", xavier_uniform(rng, (vocab_size, dim)))
        init_encoder(self.params, "enc", depth, dim, rng)
        init_encoder(self.params, "ev", 1, dim, rng)
        self.params.add("head.w", xavier_uniform(rng, (dim, 1)))
        self.params.add("head.b", np.zeros(1))
        self._pos_cache: np.ndarray | None = None

    def hyper(self) -> dict:
        return {"vocab_size": self.vocab_size, "dim": self.dim, "depth": self.depth}

    def _positions(self, n: int) -> np.ndarray:
        if self._pos_cache is None or self._pos_cache.shape[0] < n:
            self._pos_cache = sinusoidal_positions(max(n, 64), self.dim)
        return self._pos_cache[:n]

    def _encode_evidence(self, ids: list[int]):
        idx = np.asarray(ids, dtype=np.intp)
        x = embed_forward(idx, self.params["emb"]) + self._positions(len(ids))
        h, tapes = encoder_forward(self.params, "enc", self.depth, x)
        return idx, h, tapes

    def _code_logit(self, id_lists: list[list[int]]):
        """Encode each evidence context, aggregate CLS vectors, score."""
        enc_tapes = []
        cls_rows = []
        for ids in id_lists:
            idx, h, tapes = self._encode_evidence(ids)
            enc_tapes.append((idx, h, tapes))
            cls_rows.append(h[0])
        stack = np.vstack(cls_rows)
        mixed, ev_tapes = encoder_forward(self.params, "ev", 1, stack)
        pooled = mean_pool_forward(mixed)
        z = float(pooled @ self.params["head.w"][:, 0] + self.params["head.b"][0])
        return z, (enc_tapes, stack, ev_tapes, pooled)

    def _code_logit_backward(self, tape, grad_z: float) -> None:
        enc_tapes, stack, ev_tapes, pooled = tape
        self.params.grads["head.w"][:, 0] += grad_z * pooled
        self.params.grads["head.b"][0] += grad_z
        grad_pooled = grad_z * self.params["head.w"][:, 0]
        grad_mixed = mean_pool_backward(stack.shape[0], grad_pooled)
        grad_stack = encoder_backward(self.params, "ev", ev_tapes, grad_mixed)
        for row, (idx, h, tapes) in enumerate(enc_tapes):
            grad_h = np.zeros_like(h)
            grad_h[0] = grad_stack[row]
            grad_x = encoder_backward(self.params, "enc", tapes, grad_h)
            embed_backward(idx, grad_x, self.params.grads["emb"])

    def _code_groups(
        self, document: Document, vocab: Vocab, table: IcdTable, config: AnchorConfig
    ) -> list[tuple[str, list[list[int]], int]]:
        groups = group_by_code(document)
        out = []
        for code, members in groups.items():
            id_lists = [
                assemble_base_input(anchor(document, cand, config, vocab, table), config)
                for cand in members
            ]
            out.append((code, id_lists, int(members[0].relevant)))
        return out

    def score_document(
        self, document: Document, vocab: Vocab, table: IcdTable, config: AnchorConfig
    ) -> list[Prediction]:
        preds = []
        for code, id_lists, _ in self._code_groups(document, vocab, table, config):
            z, _tape = self._code_logit(id_lists)
            preds.append(
                Prediction(code=parse_code(code), entity_id=None, score=clamp_score(sigmoid(z)))
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
        groups = self._code_groups(document, vocab, table, config)
        if not groups:
            return 0.0
        logits = []
        tapes = []
        for _, id_lists, _ in groups:
            z, tape = self._code_logit(id_lists)
            logits.append(z)
            tapes.append(tape)
        labels = [label for _, _, label in groups]
        loss, grad_z = document_loss_and_score_grads(np.array(logits), labels, lam)
        if want_grads:
            for tape, gz in zip(tapes, grad_z):
                self._code_logit_backward(tape, float(gz))
        return loss
