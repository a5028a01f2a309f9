"""Ranking and classification metrics with graded-gain NDCG@12.

Gains are 7 for the primary code (rank 1), 1 for secondary codes (ranks
2-12), and -1 for irrelevant codes, so surfacing irrelevant codes near the
top costs score. Classification metrics are reported micro (flattened),
per-document, and per-code, plus a micro ROC AUC and a common/rare/unseen
breakdown against the training code frequencies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence


class MetricsError(Exception):
    pass


class DegenerateLabels(MetricsError):
    """ROC AUC is undefined when only one class is present."""


@dataclass(frozen=True)
class GainMap:
    """Graded gains; override only deliberately."""

    primary: float = 7.0
    secondary: float = 1.0
    irrelevant: float = -1.0

    def for_rank(self, rank: Optional[int]) -> float:
        if rank is None:
            return self.irrelevant
        return self.primary if rank == 1 else self.secondary


DEFAULT_GAINS = GainMap()
RANK_CUTOFF = 12


def dcg(gains: Sequence[float], k: int = RANK_CUTOFF) -> float:
    """Sum of gain_i / log2(i + 1) over the first min(k, len) positions."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return sum(g / math.log2(i + 1) for i, g in enumerate(gains[:k], start=1))


def ranked_list(code_scores: Mapping[str, float], k: int = RANK_CUTOFF) -> list[str]:
    """Codes by (score desc, code asc), truncated at k."""
    ordered = sorted(code_scores, key=lambda c: (-code_scores[c], c))
    return ordered[:k]


def ndcg_at_12(
    code_scores: Mapping[str, float],
    gold_ranks: Mapping[str, Optional[int]],
    gains: GainMap = DEFAULT_GAINS,
    k: int = RANK_CUTOFF,
) -> Optional[float]:
    """DCG of the model order over the ideal (gain-sorted) DCG.

    Returns None when the ideal DCG is not positive (typically: the document
    has no relevant code), in which case the document is excluded from the
    corpus mean.
    """
    all_codes = set(code_scores) | set(gold_ranks)
    if not all_codes:
        return None
    # Unscored codes rank after every scored one, ties by code ascending.
    floor = min(code_scores.values()) - 1.0 if code_scores else 0.0
    scores = {c: code_scores.get(c, floor) for c in all_codes}
    model_gains = [gains.for_rank(gold_ranks.get(c)) for c in ranked_list(scores, k)]
    ideal_gains = sorted((gains.for_rank(gold_ranks.get(c)) for c in all_codes), reverse=True)
    ideal = dcg(ideal_gains, k)
    if ideal <= 0.0:
        return None
    return dcg(model_gains, k) / ideal


def hit_at_1(code_scores: Mapping[str, float], gold_ranks: Mapping[str, Optional[int]]) -> bool:
    """True iff the top-ranked code is the document's primary (rank 1) code."""
    if not code_scores:
        return False
    head = ranked_list(code_scores, 1)[0]
    return gold_ranks.get(head) == 1


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def roc_auc_micro(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney AUC with midrank tie correction over flattened pairs."""
    if len(scores) != len(labels):
        raise ValueError("scores and labels must align")
    n_pos = sum(1 for y in labels if y)
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("need at least one positive and one negative")
    order = sorted(range(len(scores)), key=lambda i: scores[i])
    ranks = [0.0] * len(scores)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        midrank = (i + j) / 2.0 + 1.0
        for t in range(i, j + 1):
            ranks[order[t]] = midrank
        i = j + 1
    rank_sum = sum(r for r, y in zip(ranks, labels) if y)
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass
class DocumentEval:
    """One document's evaluation inputs at the code level (already deduplicated)."""

    doc_id: str
    code_scores: dict[str, float]
    decisions: set[str]
    gold_ranks: dict[str, Optional[int]]


@dataclass
class MetricsReport:
    ndcg_at_12: Optional[float]
    p_at_1: float
    micro: tuple[float, float, float]
    doc: tuple[float, float, float]
    code: tuple[float, float, float]
    roc_auc_micro: Optional[float]
    breakdown: dict[str, Optional[float]]
    document_count: int
    skipped_documents: int
    per_code_f1: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "ndcg_at_12": self.ndcg_at_12,
            "p_at_1": self.p_at_1,
            "micro": {"precision": self.micro[0], "recall": self.micro[1], "f1": self.micro[2]},
            "doc": {"precision": self.doc[0], "recall": self.doc[1], "f1": self.doc[2]},
            "code": {"precision": self.code[0], "recall": self.code[1], "f1": self.code[2]},
            "roc_auc_micro": self.roc_auc_micro,
            "breakdown": dict(self.breakdown),
            "document_count": self.document_count,
            "skipped_documents": self.skipped_documents,
        }


def prevalence_buckets(
    evaluated_codes: Iterable[str], train_code_freq: Mapping[str, int], top: int = 50
) -> dict[str, list[str]]:
    """Partition evaluated codes into common / rare / unseen w.r.t. training.

    Common is the ``top`` most frequent training codes (ties by code asc);
    rare is every other training code; unseen is everything else.
    """
    by_freq = sorted(train_code_freq, key=lambda c: (-train_code_freq[c], c))
    common = set(by_freq[:top])
    train = set(train_code_freq)
    buckets: dict[str, list[str]] = {"common": [], "rare": [], "unseen": []}
    for code in sorted(set(evaluated_codes)):
        if code in common:
            buckets["common"].append(code)
        elif code in train:
            buckets["rare"].append(code)
        else:
            buckets["unseen"].append(code)
    return buckets


def prevalence_breakdown(
    per_code_f1: Mapping[str, float], train_code_freq: Mapping[str, int], top: int = 50
) -> dict[str, Optional[float]]:
    """Mean per-code F1 inside each bucket; empty buckets report None."""
    buckets = prevalence_buckets(per_code_f1.keys(), train_code_freq, top)
    out: dict[str, Optional[float]] = {}
    for name, codes in buckets.items():
        out[name] = sum(per_code_f1[c] for c in codes) / len(codes) if codes else None
    return out


def evaluate_documents(
    docs: Sequence[DocumentEval],
    train_code_freq: Mapping[str, int],
    gains: GainMap = DEFAULT_GAINS,
) -> MetricsReport:
    """Full report over per-document code scores, decisions, and gold ranks."""
    ndcg_values = []
    skipped = 0
    hits = 0
    micro_tp = micro_fp = micro_fn = 0
    doc_prf = []
    code_tp: dict[str, int] = {}
    code_fp: dict[str, int] = {}
    code_fn: dict[str, int] = {}
    auc_scores: list[float] = []
    auc_labels: list[int] = []

    for doc in docs:
        value = ndcg_at_12(doc.code_scores, doc.gold_ranks, gains)
        if value is None:
            skipped += 1
        else:
            ndcg_values.append(value)
        if hit_at_1(doc.code_scores, doc.gold_ranks):
            hits += 1

        gold = {c for c, r in doc.gold_ranks.items() if r is not None}
        predicted = set(doc.decisions)
        tp = len(gold & predicted)
        fp = len(predicted - gold)
        fn = len(gold - predicted)
        micro_tp += tp
        micro_fp += fp
        micro_fn += fn
        doc_prf.append(_prf(tp, fp, fn))
        for code in gold | predicted:
            if code in gold and code in predicted:
                code_tp[code] = code_tp.get(code, 0) + 1
            elif code in predicted:
                code_fp[code] = code_fp.get(code, 0) + 1
            else:
                code_fn[code] = code_fn.get(code, 0) + 1
        for code in sorted(doc.code_scores):
            auc_scores.append(doc.code_scores[code])
            auc_labels.append(int(code in gold))

    n_docs = len(docs)
    micro = _prf(micro_tp, micro_fp, micro_fn)
    if doc_prf:
        doc_avg = tuple(sum(vals[i] for vals in doc_prf) / n_docs for i in range(3))
    else:
        doc_avg = (0.0, 0.0, 0.0)

    code_set = sorted(set(code_tp) | set(code_fp) | set(code_fn))
    per_code_prf = {
        c: _prf(code_tp.get(c, 0), code_fp.get(c, 0), code_fn.get(c, 0)) for c in code_set
    }
    if code_set:
        code_avg = tuple(sum(per_code_prf[c][i] for c in code_set) / len(code_set) for i in range(3))
    else:
        code_avg = (0.0, 0.0, 0.0)
    per_code_f1 = {c: per_code_prf[c][2] for c in code_set}

    try:
        auc = roc_auc_micro(auc_scores, auc_labels)
    except DegenerateLabels:
        auc = None

    return MetricsReport(
        ndcg_at_12=sum(ndcg_values) / len(ndcg_values) if ndcg_values else None,
        p_at_1=hits / n_docs if n_docs else 0.0,
        micro=micro,
        doc=doc_avg,  # type: ignore[arg-type]
        code=code_avg,  # type: ignore[arg-type]
        roc_auc_micro=auc,
        breakdown=prevalence_breakdown(per_code_f1, train_code_freq),
        document_count=n_docs,
        skipped_documents=skipped,
        per_code_f1=per_code_f1,
    )


def render_report_text(report: MetricsReport) -> str:
    """Human-readable table mirroring the usual results layout."""
    def fmt(x: Optional[float]) -> str:
        return "-" if x is None else f"{x:.4f}"

    lines = [
        f"documents evaluated : {report.document_count} "
        f"(skipped for NDCG: {report.skipped_documents})",
        f"NDCG@12             : {fmt(report.ndcg_at_12)}",
        f"P@1                 : {fmt(report.p_at_1)}",
        f"Micro  P/R/F1       : {fmt(report.micro[0])} / {fmt(report.micro[1])} / {fmt(report.micro[2])}",
        f"Doc    P/R/F1       : {fmt(report.doc[0])} / {fmt(report.doc[1])} / {fmt(report.doc[2])}",
        f"Code   P/R/F1       : {fmt(report.code[0])} / {fmt(report.code[1])} / {fmt(report.code[2])}",
        f"ROC_AUC (micro)     : {fmt(report.roc_auc_micro)}",
        "breakdown (mean code F1):",
        f"  common : {fmt(report.breakdown.get('common'))}",
        f"  rare   : {fmt(report.breakdown.get('rare'))}",
        f"  unseen : {fmt(report.breakdown.get('unseen'))}",
    ]
    return "\n".join(lines)
