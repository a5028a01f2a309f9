"""Training loop, hyperparameter grid search, and threshold selection.

One optimization step per document (the losses are defined per document).
Runs are deterministic given (seed, config, corpus): the document order per
epoch comes from a counter-based generator and parameter updates are
sequential. Prediction thresholds are picked to maximize micro-F1 on the
validation split.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .anchor import AnchorConfig, Vocab, build_vocab
from .corpus import Corpus, Document
from .metrics import DocumentEval, ndcg_at_12
from .models import (
    AggregationModel,
    BaseModel,
    CamlModel,
    DocCodesModel,
    DocEntitiesModel,
    MODEL_KINDS,
    predictions_to_code_scores,
)
from .nnkit import AdamState, NonFiniteLoss, adam_step, seeded_rng
from .ontology import IcdTable


class TrainError(Exception):
    pass


class EmptySplit(TrainError):
    pass


class EmptyGrid(TrainError):
    pass


class ChecksumMismatch(TrainError):
    """Checkpoint vocabulary does not match its recorded hash."""


@dataclass(frozen=True)
class TrainConfig:
    kind: str = "base"
    lr: float = 1e-3
    lam: float = 0.0
    epochs: int = 5
    seed: int = 0
    dim: int = 64
    depth: int = 2
    local_radius: int = 32
    window: int = 64
    max_len: int = 256
    doc_max_len: int = 2048
    min_freq: int = 1
    caml_embed_dim: int = 100
    caml_kernel_width: int = 10
    caml_num_filters: int = 50

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")

    @property
    def anchor_config(self) -> AnchorConfig:
        return AnchorConfig(window=self.window, max_len=self.max_len, doc_max_len=self.doc_max_len)


# Published per-model defaults: (epochs, lr) without the ranking loss and
# (epochs, lr, lambda) with it.
_DEFAULTS = {
    ("base", False): (20, 1e-6, 0.0),
    ("base", True): (20, 1e-6, 0.5),
    ("doc_entities", False): (5, 1e-5, 0.0),
    ("doc_entities", True): (10, 1e-5, 0.5),
    ("doc_codes", False): (10, 1e-5, 0.0),
    ("doc_codes", True): (10, 1e-5, 0.5),
    ("aggregation", False): (5, 1e-5, 0.0),
    ("aggregation", True): (5, 5e-5, 0.5),
    ("caml", False): (1553, 1e-4, 0.0),
    ("caml", True): (1553, 1e-4, 0.5),
}


def default_train_config(kind: str, ranking: bool = False, **overrides) -> TrainConfig:
    if (kind, ranking) not in _DEFAULTS:
        raise ValueError(f"unknown model kind {kind!r}")
    epochs, lr, lam = _DEFAULTS[(kind, ranking)]
    config = TrainConfig(kind=kind, epochs=epochs, lr=lr, lam=lam)
    return replace(config, **overrides) if overrides else config


def train_gold_code_freq(corpus: Corpus) -> dict[str, int]:
    """Per-code count of train documents in which the code is gold-relevant."""
    freq: dict[str, int] = {}
    for doc in corpus.split("train"):
        for code in doc.relevant_codes():
            freq[code] = freq.get(code, 0) + 1
    return freq


def build_model(kind: str, vocab_size: int, config: TrainConfig, label_codes=None):
    if kind == "base":
        return BaseModel(vocab_size, dim=config.dim, depth=config.depth, seed=config.seed)
    if kind == "doc_codes":
        return DocCodesModel(
            vocab_size,
            dim=config.dim,
            depth=config.depth,
            local_radius=config.local_radius,
            seed=config.seed,
        )
    if kind == "doc_entities":
        return DocEntitiesModel(
            vocab_size,
            dim=config.dim,
            depth=config.depth,
            local_radius=config.local_radius,
            seed=config.seed,
        )
    if kind == "aggregation":
        return AggregationModel(vocab_size, dim=config.dim, depth=config.depth, seed=config.seed)
    if kind == "caml":
        if not label_codes:
            raise EmptySplit("CAML needs a nonempty train gold code set for its label space")
        return CamlModel(
            vocab_size,
            label_codes=label_codes,
            embed_dim=config.caml_embed_dim,
            kernel_width=config.caml_kernel_width,
            num_filters=config.caml_num_filters,
            seed=config.seed,
        )
    raise ValueError(f"unknown model kind {kind!r}")


def select_threshold(scores, labels, extra_false_negatives: int = 0) -> float:
    """Threshold maximizing micro-F1; candidates are midpoints of adjacent
    unique scores plus {0, 1}.

    Ties go to the smallest threshold. When no threshold achieves F1 > 0
    (e.g. no positive labels at all), returns 1.0: predict nothing.
    """
    if len(scores) != len(labels):
        raise ValueError("scores and labels must align")
    if not scores:
        return 1.0
    uniq = sorted(set(scores))
    candidates = [0.0]
    candidates += [(a + b) / 2.0 for a, b in zip(uniq, uniq[1:])]
    candidates.append(1.0)

    best_tau = 1.0
    best_f1 = 0.0
    for tau in candidates:
        tp = fp = fn = 0
        for s, y in zip(scores, labels):
            if s >= tau:
                if y:
                    tp += 1
                else:
                    fp += 1
            elif y:
                fn += 1
        fn += extra_false_negatives
        f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0
        if f1 > best_f1:
            best_f1 = f1
            best_tau = tau
    return best_tau


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_ndcg: Optional[float]
    val_micro_f1: float
    threshold: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: object
    vocab: Vocab
    config: TrainConfig
    history: list[EpochStats]
    threshold: float
    train_code_freq: dict[str, int] = field(default_factory=dict)


def document_eval(document: Document, code_scores: dict[str, float], tau: float) -> DocumentEval:
    return DocumentEval(
        doc_id=document.id,
        code_scores=dict(code_scores),
        decisions={c for c, s in code_scores.items() if s >= tau},
        gold_ranks=document.code_gold_ranks(),
    )


def _validation_pass(model, docs, vocab, table, config) -> tuple[Optional[float], float, float]:
    """Validation NDCG@12, best-threshold micro-F1, and that threshold."""
    per_doc: list[tuple[Document, dict[str, float]]] = []
    scores: list[float] = []
    labels: list[int] = []
    extra_fn = 0
    ndcg_values = []
    for doc in docs:
        preds = model.score_document(doc, vocab, table, config.anchor_config)
        code_scores = predictions_to_code_scores(preds)
        per_doc.append((doc, code_scores))
        gold = doc.relevant_codes()
        for code in sorted(code_scores):
            scores.append(code_scores[code])
            labels.append(int(code in gold))
        extra_fn += len(gold - set(code_scores))
        value = ndcg_at_12(code_scores, doc.code_gold_ranks())
        if value is not None:
            ndcg_values.append(value)
    tau = select_threshold(scores, labels, extra_false_negatives=extra_fn)
    tp = fp = 0
    fn = extra_fn
    for s, y in zip(scores, labels):
        if s >= tau:
            if y:
                tp += 1
            else:
                fp += 1
        elif y:
            fn += 1
    micro_f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 0.0
    mean_ndcg = sum(ndcg_values) / len(ndcg_values) if ndcg_values else None
    return mean_ndcg, micro_f1, tau


def train(corpus: Corpus, table: IcdTable, config: TrainConfig) -> TrainResult:
    """Train one model; deterministic given (seed, config, corpus).

    Only the train and validation splits are ever consulted. Raises
    :class:`EmptySplit` when either is empty and :class:`NonFiniteLoss`
    (tagged with epoch and document id) if the loss diverges.
    """
    train_docs = corpus.split("train")
    val_docs = corpus.split("validation")
    if not train_docs:
        raise EmptySplit("train split is empty")
    if not val_docs:
        raise EmptySplit("validation split is empty (needed for threshold selection)")

    vocab = build_vocab(corpus, table, min_freq=config.min_freq)
    freq = train_gold_code_freq(corpus)
    label_codes = sorted(freq) if config.kind == "caml" else None
    model = build_model(config.kind, len(vocab), config, label_codes=label_codes)
    adam = AdamState(lr=config.lr)
    shuffle_rng = seeded_rng(config.seed + 0x9E3779B9)

    history: list[EpochStats] = []
    threshold = 1.0
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(len(train_docs))
        losses = []
        for pos in order:
            doc = train_docs[int(pos)]
            loss = model.document_loss(
                doc, vocab, table, config.anchor_config, lam=config.lam, want_grads=True
            )
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"epoch {epoch}, document {doc.id!r}: loss is {loss}")
            losses.append(loss)
            adam_step(model.params, adam)
        val_ndcg, val_f1, threshold = _validation_pass(model, val_docs, vocab, table, config)
        history.append(
            EpochStats(
                epoch=epoch,
                train_loss=sum(losses) / len(losses),
                val_ndcg=val_ndcg,
                val_micro_f1=val_f1,
                threshold=threshold,
            )
        )
    return TrainResult(
        model=model,
        vocab=vocab,
        config=config,
        history=history,
        threshold=threshold,
        train_code_freq=freq,
    )


def grid_search(corpus: Corpus, table: IcdTable, base: TrainConfig, grid: dict) -> TrainConfig:
    """Exhaustive search over {lr, lam, epochs}; returns the winning config.

    Ranking models select on validation NDCG@12, CAML on validation micro-F1.
    Ties prefer smaller lr, then smaller lambda, then fewer epochs.
    """
    if not corpus.split("validation"):
        raise EmptySplit("validation split is empty")
    axes = {}
    for key in ("lr", "lam", "epochs"):
        values = grid.get(key, [getattr(base, key)])
        values = list(values)
        if not values:
            raise EmptyGrid(f"grid axis {key!r} is empty")
        axes[key] = sorted(set(values))

    best: tuple | None = None
    best_config: TrainConfig | None = None
    for lr in axes["lr"]:
        for lam in axes["lam"]:
            for epochs in axes["epochs"]:
                config = replace(base, lr=lr, lam=lam, epochs=epochs)
                result = train(corpus, table, config)
                last = result.history[-1]
                if config.kind == "caml":
                    criterion = last.val_micro_f1
                else:
                    criterion = last.val_ndcg if last.val_ndcg is not None else -1.0
                key = (-criterion, lr, lam, epochs)
                if best is None or key < best:
                    best = key
                    best_config = config
    assert best_config is not None
    return best_config


# ---------------------------------------------------------------------------
# checkpoint container

CHECKPOINT_SCHEMA_VERSION = 1


def save_checkpoint(path: str | Path, result: TrainResult) -> None:
    model = result.model
    descriptor = {
        "kind": model.kind,
        "config": asdict(result.config),
        "hyper": model.hyper(),
        "vocab_hash": result.vocab.content_hash(),
    }
    payload = {
        "schema_version": CHECKPOINT_SCHEMA_VERSION,
        "descriptor": descriptor,
        "threshold": result.threshold,
        "train_code_freq": {k: result.train_code_freq[k] for k in sorted(result.train_code_freq)},
        "vocab": result.vocab.items(),
        "params": {
            name: {
                "shape": list(model.params.values[name].shape),
                "values": model.params.values[name].ravel().tolist(),
            }
            for name in model.params.names()
        },
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, sort_keys=True)
        handle.write("\n")


@dataclass
class Checkpoint:
    model: object
    vocab: Vocab
    config: TrainConfig
    threshold: float
    train_code_freq: dict[str, int]


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "r", encoding="utf-8") as handle:
        payload = json.load(handle)
    if payload.get("schema_version") != CHECKPOINT_SCHEMA_VERSION:
        raise TrainError(f"unsupported checkpoint schema {payload.get('schema_version')!r}")
    descriptor = payload["descriptor"]
    vocab = Vocab.from_tokens({token: idx for token, idx in payload["vocab"]})
    if vocab.content_hash() != descriptor["vocab_hash"]:
        raise ChecksumMismatch("checkpoint vocabulary does not match its recorded hash")
    config = TrainConfig(**descriptor["config"])
    label_codes = descriptor["hyper"].get("label_codes")
    model = build_model(descriptor["kind"], len(vocab), config, label_codes=label_codes)
    for name in model.params.names():
        entry = payload["params"].get(name)
        if entry is None:
            raise TrainError(f"checkpoint missing parameter {name!r}")
        arr = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        if arr.shape != model.params.values[name].shape:
            raise TrainError(f"checkpoint parameter {name!r} has shape {arr.shape}")
        model.params.values[name][...] = arr
    return Checkpoint(
        model=model,
        vocab=vocab,
        config=config,
        threshold=payload["threshold"],
        train_code_freq=dict(payload.get("train_code_freq", {})),
    )
