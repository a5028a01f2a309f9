"""Convolutional label-attention baseline over a fixed train-time label set.

The document is embedded, passed through a 1-D convolution, and each label
attends over the convolved positions with its own attention vector before a
per-label linear score. Codes outside the frozen label set simply have no
score: the model is structurally unable to predict them.
"""

from __future__ import annotations

import numpy as np

from ..anchor import PAD_ID, AnchorConfig, Vocab, tokenize
from ..corpus import Document
from ..nnkit import (
    ParamSet,
    embed_backward,
    embed_forward,
    seeded_rng,
    sigmoid,
    softmax_rows,
    softmax_rows_backward,
    xavier_uniform,
)
from ..ontology import IcdTable, parse_code
from .base import Prediction, clamp_score
from .losses import document_loss_and_score_grads


class CamlModel:
    kind = "caml"

    def __init__(
        self,
        vocab_size: int,
        label_codes: list[str],
        embed_dim: int = 100,
        kernel_width: int = 10,
        num_filters: int = 50,
        seed: int = 0,
    ):
        if not label_codes:
            raise ValueError("label set must be nonempty")
        self.vocab_size = vocab_size
        self.label_codes = sorted(label_codes)
        self.embed_dim = embed_dim
        self.kernel_width = kernel_width
        self.num_filters = num_filters
        self.params = ParamSet()
        rng = seeded_rng(seed)
        num_labels = len(self.label_codes)
        self.params.add("emb", xavier_uniform(rng, (vocab_size, embed_dim)))
        self.params.add("conv.w", xavier_uniform(rng, (kernel_width * embed_dim, num_filters)))
        self.params.add("conv.b", np.zeros(num_filters))
        self.params.add("att.u", xavier_uniform(rng, (num_labels, num_filters)))
        self.params.add("head.w", xavier_uniform(rng, (num_labels, num_filters)))
        self.params.add("head.b", np.zeros(num_labels))

    def hyper(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "label_codes": self.label_codes,
            "embed_dim": self.embed_dim,
            "kernel_width": self.kernel_width,
            "num_filters": self.num_filters,
        }

    def _doc_ids(self, document: Document, vocab: Vocab) -> list[int]:
        ids = vocab.encode(tokenize(document.text))
        # Documents shorter than the kernel are padded, never rejected.
        if len(ids) < self.kernel_width:
            ids = ids + [PAD_ID] * (self.kernel_width - len(ids))
        return ids

    def _logits(self, ids: list[int]):
        idx = np.asarray(ids, dtype=np.intp)
        x = embed_forward(idx, self.params["emb"])
        n = x.shape[0]
        kw = self.kernel_width
        n_out = n - kw + 1
        cols = np.concatenate([x[i : i + n_out] for i in range(kw)], axis=1)
        conv = cols @ self.params["conv.w"] + self.params["conv.b"]
        att_scores = self.params["att.u"] @ conv.T  # (labels, positions)
        att = softmax_rows(att_scores)
        pooled = att @ conv  # (labels, filters)
        z = (pooled * self.params["head.w"]).sum(axis=1) + self.params["head.b"]
        return z, (idx, x, cols, conv, att, pooled)

    def _logits_backward(self, tape, grad_z: np.ndarray) -> None:
        idx, x, cols, conv, att, pooled = tape
        self.params.grads["head.w"] += grad_z[:, None] * pooled
        self.params.grads["head.b"] += grad_z
        grad_pooled = grad_z[:, None] * self.params["head.w"]
        grad_att = grad_pooled @ conv.T
        grad_conv = att.T @ grad_pooled
        grad_att_scores = softmax_rows_backward(att, grad_att)
        self.params.grads["att.u"] += grad_att_scores @ conv
        grad_conv += grad_att_scores.T @ self.params["att.u"]
        self.params.grads["conv.w"] += cols.T @ grad_conv
        self.params.grads["conv.b"] += grad_conv.sum(axis=0)
        grad_cols = grad_conv @ self.params["conv.w"].T
        grad_x = np.zeros_like(x)
        n_out = conv.shape[0]
        d = self.embed_dim
        for i in range(self.kernel_width):
            grad_x[i : i + n_out] += grad_cols[:, i * d : (i + 1) * d]
        embed_backward(idx, grad_x, self.params.grads["emb"])

    def forward(self, ids: list[int]) -> np.ndarray:
        """Scores over the fixed label set (sigmoid of each label logit)."""
        z, _ = self._logits(ids)
        return np.asarray(sigmoid(z), dtype=np.float64)

    def score_document(
        self, document: Document, vocab: Vocab, table: IcdTable, config: AnchorConfig
    ) -> list[Prediction]:
        """Predictions for the document's candidate codes that are in the label set.

        Out-of-label candidates get no prediction at all.
        """
        scores = self.forward(self._doc_ids(document, vocab))
        by_code = {code: scores[i] for i, code in enumerate(self.label_codes)}
        preds = []
        for code in sorted({c.code.normalized for c in document.candidates}):
            if code in by_code:
                preds.append(
                    Prediction(
                        code=parse_code(code),
                        entity_id=None,
                        score=clamp_score(float(by_code[code])),
                    )
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
        relevant = document.relevant_codes()
        labels = [int(code in relevant) for code in self.label_codes]
        z, tape = self._logits(self._doc_ids(document, vocab))
        loss, grad_z = document_loss_and_score_grads(z, labels, lam)
        if want_grads:
            self._logits_backward(tape, grad_z)
        return loss
