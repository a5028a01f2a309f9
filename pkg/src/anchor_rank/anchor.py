"""Tokenization, vocabulary, and model-input assembly around entity anchors.

Model inputs are built from a candidate's code description plus a token
window of at most ``window`` tokens on each side of the entity mention.
Document-level inputs concatenate one ``[CLS] <description>`` block per
unique candidate code in front of the document tokens and record the anchor
positions that receive global attention.
"""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

from .ontology import IcdTable

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, types only
    from .corpus import Candidate, Corpus, Document


class AnchorError(Exception):
    """Base class for context-assembly errors."""


class MissingDescription(AnchorError):
    """Raised when a candidate's code has no description in the table."""


class EntityTooLong(AnchorError):
    """Raised when description + entity + markers alone exceed max_len."""


class NoCandidates(AnchorError):
    """Raised when a document-level input cannot hold any code anchor."""


# Reserved vocabulary slots. These ids are fixed across every Vocab.
PAD_ID, UNK_ID, CLS_ID, SEP_ID, ENT_OPEN_ID, ENT_CLOSE_ID = range(6)
RESERVED_TOKENS = ("<pad>", "<unk>", "<cls>", "<sep>", "<ent>", "</ent>")

_TOKEN_RE = re.compile(r"[a-z0-9]+|[^a-z0-9\s]")


def tokenize(text: str) -> list[str]:
    """Lowercase, whitespace-split, punctuation isolated as single-char tokens."""
    return _TOKEN_RE.findall(text.lower())


def tokenize_with_spans(text: str) -> list[tuple[str, int, int]]:
    """Like :func:`tokenize` but keeps (start, end) character offsets."""
    return [(m.group(0), m.start(), m.end()) for m in _TOKEN_RE.finditer(text.lower())]


@dataclass(frozen=True)
class AnchorConfig:
    """Window and length limits for input assembly."""

    window: int = 64
    max_len: int = 256
    doc_max_len: int = 2048

    def __post_init__(self) -> None:
        if self.window < 0:
            raise ValueError("window must be >= 0")
        if self.max_len < 8:
            raise ValueError("max_len must be >= 8")
        if self.doc_max_len < 1:
            raise ValueError("doc_max_len must be >= 1")


class Vocab:
    """Token -> id map with fixed reserved ids, built from train text + descriptions."""

    def __init__(self, tokens: Iterable[str], min_freq: int = 1):
        self.min_freq = min_freq
        self._token_to_id: dict[str, int] = {t: i for i, t in enumerate(RESERVED_TOKENS)}
        for token in sorted(set(tokens) - set(RESERVED_TOKENS)):
            self._token_to_id[token] = len(self._token_to_id)

    def __len__(self) -> int:
        return len(self._token_to_id)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        get = self._token_to_id.get
        return [get(t, UNK_ID) for t in tokens]

    def items(self) -> list[tuple[str, int]]:
        return sorted(self._token_to_id.items(), key=lambda kv: kv[1])

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        for token, idx in self.items():
            digest.update(f"{token}\t{idx}\n".encode("utf-8"))
        return digest.hexdigest()

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            for token, idx in self.items():
                handle.write(f"{token}\t{idx}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        vocab = cls([], min_freq=1)
        mapping: dict[str, int] = {}
        with open(path, "r", encoding="utf-8") as handle:
            for line in handle:
                line = line.rstrip("\n")
                if not line:
                    continue
                token, _, idx = line.rpartition("\t")
                mapping[token] = int(idx)
        for i, reserved in enumerate(RESERVED_TOKENS):
            if mapping.get(reserved) != i:
                raise ValueError(f"vocab file missing reserved token {reserved!r} at id {i}")
        vocab._token_to_id = mapping
        return vocab

    @classmethod
    def from_tokens(cls, mapping: dict[str, int]) -> "Vocab":
        vocab = cls([], min_freq=1)
        vocab._token_to_id = dict(mapping)
        return vocab


def build_vocab(corpus: "Corpus", table: IcdTable, min_freq: int = 1) -> Vocab:
    """Vocabulary over train-split tokens (freq >= min_freq) plus all description tokens.

    Description tokens are always included so that codes absent from training
    can still be encoded meaningfully at prediction time.
    """
    counts: Counter[str] = Counter()
    for doc in corpus.documents:
        if doc.split == "train":
            counts.update(tokenize(doc.text))
    keep = {t for t, c in counts.items() if c >= min_freq}
    for entry in table.entries():
        keep.update(tokenize(entry.description))
    return Vocab(keep, min_freq=min_freq)


@dataclass
class AnchoredContext:
    """One candidate's model input: description plus entity window token ids."""

    candidate: "Candidate"
    desc_ids: list[int]
    left_ids: list[int]
    entity_ids: list[int]
    right_ids: list[int]


def anchor(
    document: "Document",
    candidate: "Candidate",
    config: AnchorConfig,
    vocab: Vocab,
    table: IcdTable,
) -> AnchoredContext:
    """Build the anchored context for one candidate.

    The window is clipped at document boundaries and never exceeds
    ``config.window`` tokens per side.
    """
    desc = table.description(candidate.code)
    if desc is None:
        raise MissingDescription(f"no description for {candidate.code.display}")
    span = document.entity(candidate.entity_id)
    spans = tokenize_with_spans(document.text)
    hit = [i for i, (_, s, e) in enumerate(spans) if s < span.end and e > span.start]
    if not hit:
        raise AnchorError(f"entity {span.id!r} covers no tokens")
    first, last = hit[0], hit[-1]
    w = config.window
    tokens = [t for t, _, _ in spans]
    return AnchoredContext(
        candidate=candidate,
        desc_ids=vocab.encode(tokenize(desc)),
        left_ids=vocab.encode(tokens[max(0, first - w) : first]),
        entity_ids=vocab.encode(tokens[first : last + 1]),
        right_ids=vocab.encode(tokens[last + 1 : last + 1 + w]),
    )


def assemble_base_input(ctx: AnchoredContext, config: AnchorConfig) -> list[int]:
    """Layout ``[CLS] desc [SEP] left <ent> entity </ent> right [SEP]``.

    When the sequence exceeds ``max_len`` the window tokens are trimmed
    symmetrically (always from the far ends); description and entity tokens
    are never dropped.
    """
    fixed = 1 + len(ctx.desc_ids) + 1 + 1 + len(ctx.entity_ids) + 1 + 1
    budget = config.max_len - fixed
    if budget < 0:
        raise EntityTooLong(
            f"description and entity need {fixed} tokens, max_len is {config.max_len}"
        )
    left = list(ctx.left_ids)
    right = list(ctx.right_ids)
    while len(left) + len(right) > budget:
        if len(left) >= len(right):
            left.pop(0)
        else:
            right.pop()
    return (
        [CLS_ID]
        + ctx.desc_ids
        + [SEP_ID]
        + left
        + [ENT_OPEN_ID]
        + ctx.entity_ids
        + [ENT_CLOSE_ID]
        + right
        + [SEP_ID]
    )


@dataclass
class DocumentAssembly:
    """Document-level input with code/entity anchor positions.

    ``global_attention_set`` is exactly the union of code anchors and entity
    anchors. Entities whose first token falls beyond ``doc_max_len`` are
    recorded in ``dropped_entities`` and get no anchor.
    """

    ids: list[int]
    code_anchor_positions: dict[str, int]
    entity_anchor_positions: dict[str, int]
    global_attention_set: frozenset[int]
    dropped_entities: list[str] = field(default_factory=list)


def assemble_document_input(
    document: "Document",
    config: AnchorConfig,
    vocab: Vocab,
    table: IcdTable,
) -> DocumentAssembly:
    """Concatenate per-code ``[CLS] desc`` blocks, a separator, and the document.

    Codes are deduplicated and ordered lexicographically so the layout is
    reproducible. The document is truncated to fit ``doc_max_len``; the code
    prefix never is (an overflowing prefix raises :class:`NoCandidates`).
    """
    codes = sorted({c.code.normalized for c in document.candidates})
    if not codes:
        raise NoCandidates(f"document {document.id!r} has no candidates")

    ids: list[int] = []
    code_anchors: dict[str, int] = {}
    for code in codes:
        desc = table.description(code)
        if desc is None:
            raise MissingDescription(f"no description for {code}")
        code_anchors[code] = len(ids)
        ids.append(CLS_ID)
        ids.extend(vocab.encode(tokenize(desc)))
    ids.append(SEP_ID)
    prefix_len = len(ids)
    if prefix_len > config.doc_max_len:
        raise NoCandidates(
            f"code prefix needs {prefix_len} tokens, doc_max_len is {config.doc_max_len}"
        )

    spans = tokenize_with_spans(document.text)
    room = config.doc_max_len - prefix_len
    ids.extend(vocab.encode([t for t, _, _ in spans[:room]]))

    entity_anchors: dict[str, int] = {}
    dropped: list[str] = []
    for ent in document.entities:
        hit = [i for i, (_, s, e) in enumerate(spans) if s < ent.end and e > ent.start]
        if not hit:
            dropped.append(ent.id)
            continue
        first = hit[0]
        if first < room:
            entity_anchors[ent.id] = prefix_len + first
        else:
            dropped.append(ent.id)

    global_set = frozenset(code_anchors.values()) | frozenset(entity_anchors.values())
    return DocumentAssembly(
        ids=ids,
        code_anchor_positions=code_anchors,
        entity_anchor_positions=entity_anchors,
        global_attention_set=global_set,
        dropped_entities=dropped,
    )
