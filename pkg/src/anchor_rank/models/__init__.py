"""Scoring architectures, the CAML baseline, and the loss functions."""

from .aggregation import AggregationModel
from .base import BaseModel, Prediction, clamp_score
from .caml import CamlModel
from .doclevel import DocCodesModel, DocEntitiesModel, NoEntities, global_local_mask
from .losses import (
    bce_loss,
    bce_loss_from_logits,
    document_loss_and_score_grads,
    ranking_grad,
    ranking_loss,
    total_loss,
)

MODEL_KINDS = ("base", "doc_codes", "doc_entities", "aggregation", "caml")


def predictions_to_code_scores(predictions) -> dict[str, float]:
    """Per-code score: max over the code's entity-level predictions."""
    out: dict[str, float] = {}
    for pred in predictions:
        key = pred.code.normalized
        if key not in out or pred.score > out[key]:
            out[key] = pred.score
    return out

__all__ = [
    "AggregationModel",
    "BaseModel",
    "CamlModel",
    "DocCodesModel",
    "DocEntitiesModel",
    "MODEL_KINDS",
    "NoEntities",
    "Prediction",
    "bce_loss",
    "bce_loss_from_logits",
    "clamp_score",
    "document_loss_and_score_grads",
    "global_local_mask",
    "predictions_to_code_scores",
    "ranking_grad",
    "ranking_loss",
    "total_loss",
]
