"""Document-level scorers with a global/local attention pattern.

The whole document plus one ``[CLS] description`` block per unique candidate
code is encoded once. Anchor tokens (each code's CLS and each entity's first
token) attend globally; every other token attends within a local radius.
The code variant scores each code anchor; the entity variant scores each
entity anchor and carries the entity's linked code.
"""

from __future__ import annotations

import numpy as np

from ..anchor import AnchorConfig, DocumentAssembly, Vocab, assemble_document_input
from ..corpus import Document
from ..nnkit import (
    ParamSet,
    embed_backward,
    embed_forward,
    seeded_rng,
    sigmoid,
    sinusoidal_positions,
    xavier_uniform,
)
from ..ontology import IcdTable, parse_code
from .base import Prediction, clamp_score
from .encoder import encoder_backward, encoder_forward, init_encoder
from .losses import document_loss_and_score_grads


class NoEntities(Exception):
    """No entity anchor survived assembly; the entity variant cannot score."""


def global_local_mask(n: int, global_set: frozenset[int], radius: int) -> np.ndarray:
    """Boolean (n, n) mask: local band of +-radius, full rows/columns for anchors."""
    idx = np.arange(n)
    mask = np.abs(idx[:, None] - idx[None, :]) <= radius
    if global_set:
        g = np.fromiter(global_set, dtype=np.intp)
        mask[g, :] = True
        mask[:, g] = True
    return mask


class _DocumentModel:
    def __init__(
        self,
        vocab_size: int,
        dim: int = 64,
        depth: int = 2,
        local_radius: int = 32,
        seed: int = 0,
    ):
        self.vocab_size = vocab_size
        self.dim = dim
        self.depth = depth
        self.local_radius = local_radius
        self.params = ParamSet()
        rng = seeded_rng(seed)
        self.params.add("emb", xavier_uniform(rng, (vocab_size, dim)))
        init_encoder(self.params, "enc", depth, dim, rng)
        self.params.add("head.w", xavier_uniform(rng, (dim, 1)))
        self.params.add("head.b", np.zeros(1))

    def hyper(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "dim": self.dim,
            "depth": self.depth,
            "local_radius": self.local_radius,
        }

    def _encode(self, assembly: DocumentAssembly):
        idx = np.asarray(assembly.ids, dtype=np.intp)
        n = len(idx)
        x = embed_forward(idx, self.params["emb"]) + sinusoidal_positions(n, self.dim)
        mask = global_local_mask(n, assembly.global_attention_set, self.local_radius)
        h, tapes = encoder_forward(self.params, "enc", self.depth, x, mask=mask)
        return idx, h, tapes

    def _anchor_logits(self, h: np.ndarray, positions: list[int]) -> np.ndarray:
        w = self.params["head.w"][:, 0]
        b = self.params["head.b"][0]
        return h[positions] @ w + b

    def _backward(self, idx, h, tapes, positions: list[int], grad_z: np.ndarray) -> None:
        w = self.params["head.w"][:, 0]
        grad_h = np.zeros_like(h)
        for pos, gz in zip(positions, grad_z):
            self.params.grads["head.w"][:, 0] += gz * h[pos]
            self.params.grads["head.b"][0] += gz
            grad_h[pos] += gz * w
        grad_x = encoder_backward(self.params, "enc", tapes, grad_h)
        embed_backward(idx, grad_x, self.params.grads["emb"])

    # subclasses define the anchor universe per document
    def _targets(self, document: Document, assembly: DocumentAssembly):
        raise NotImplementedError

    def score_document(
        self, document: Document, vocab: Vocab, table: IcdTable, config: AnchorConfig
    ) -> list[Prediction]:
        assembly = assemble_document_input(document, config, vocab, table)
        targets = self._targets(document, assembly)
        idx, h, tapes = self._encode(assembly)
        logits = self._anchor_logits(h, [pos for pos, _, _, _ in targets])
        return [
            Prediction(code=code, entity_id=entity_id, score=clamp_score(sigmoid(float(z))))
            for z, (_, code, entity_id, _) in zip(logits, targets)
        ]

    def document_loss(
        self,
        document: Document,
        vocab: Vocab,
        table: IcdTable,
        config: AnchorConfig,
        lam: float = 0.0,
        want_grads: bool = False,
    ) -> float:
        assembly = assemble_document_input(document, config, vocab, table)
        targets = self._targets(document, assembly)
        if not targets:
            return 0.0
        idx, h, tapes = self._encode(assembly)
        positions = [pos for pos, _, _, _ in targets]
        logits = self._anchor_logits(h, positions)
        labels = [label for _, _, _, label in targets]
        loss, grad_z = document_loss_and_score_grads(logits, labels, lam)
        if want_grads:
            self._backward(idx, h, tapes, positions, grad_z)
        return loss


class DocCodesModel(_DocumentModel):
    """One prediction per unique candidate code, read at the code's CLS anchor."""

    kind = "doc_codes"

    def _targets(self, document: Document, assembly: DocumentAssembly):
        ranks = document.code_gold_ranks()
        out = []
        for code in sorted(assembly.code_anchor_positions):
            pos = assembly.code_anchor_positions[code]
            out.append((pos, parse_code(code), None, int(ranks.get(code) is not None)))
        return out


class DocEntitiesModel(_DocumentModel):
    """One prediction per candidate, read at its entity's first-token anchor.

    Candidates whose entity was truncated out of the sequence are dropped.
    The per-code ranking score downstream is the max over the code's entities.
    """

    kind = "doc_entities"

    def _targets(self, document: Document, assembly: DocumentAssembly):
        out = []
        for cand in document.candidates:
            pos = assembly.entity_anchor_positions.get(cand.entity_id)
            if pos is None:
                continue
            out.append((pos, cand.code, cand.entity_id, int(cand.relevant)))
        if not out:
            raise NoEntities(f"document {document.id!r} has no surviving entity anchors")
        return out
