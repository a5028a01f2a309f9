"""Corpus data model, JSONL ingestion, statistics, and the mock entity linker.

A document carries tagged entity spans and entity-linked candidate codes.
Ground-truth billing relevance lives at the code level: a candidate whose
code has a ``gold_rank`` (1 = primary, 2-12 = secondary) is relevant, a
candidate without one is irrelevant. The dictionary linker stands in for the
external entity-linking service with deterministic longest-match lookup.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .anchor import tokenize
from .ontology import IcdCode, IcdTable, parse_code

SPLITS = ("train", "validation", "test")

MIN_RANK = 1
MAX_RANK = 12


class CorpusError(Exception):
    """Base class for corpus validation errors."""


class SchemaError(CorpusError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class RankOutOfRange(CorpusError):
    pass


class DanglingEntityRef(CorpusError):
    pass


class SpanOutOfBounds(CorpusError):
    pass


class InconsistentCodeRank(CorpusError):
    pass


class MultiplePrimaryCodes(CorpusError):
    pass


class UnknownCodeInLexicon(CorpusError):
    pass


@dataclass(frozen=True)
class EntitySpan:
    id: str
    start: int
    end: int
    surface: str


@dataclass(frozen=True)
class Candidate:
    entity_id: str
    code: IcdCode
    gold_rank: Optional[int] = None

    @property
    def relevant(self) -> bool:
        return self.gold_rank is not None


@dataclass
class Document:
    id: str
    text: str
    split: str
    entities: list[EntitySpan]
    candidates: list[Candidate]
    _entity_index: dict[str, EntitySpan] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._entity_index = {e.id: e for e in self.entities}

    def entity(self, entity_id: str) -> EntitySpan:
        return self._entity_index[entity_id]

    def code_gold_ranks(self) -> dict[str, Optional[int]]:
        """Normalized code -> gold rank (or None) for every candidate code."""
        ranks: dict[str, Optional[int]] = {}
        for cand in self.candidates:
            ranks[cand.code.normalized] = cand.gold_rank
        return ranks

    def relevant_codes(self) -> set[str]:
        return {c.code.normalized for c in self.candidates if c.relevant}


@dataclass
class Corpus:
    documents: list[Document]
    provenance: str = ""

    def split(self, name: str) -> list[Document]:
        return [d for d in self.documents if d.split == name]


def _validate_document(doc: Document) -> None:
    for ent in doc.entities:
        if not (0 <= ent.start < ent.end <= len(doc.text)):
            raise SpanOutOfBounds(
                f"document {doc.id!r}: entity {ent.id!r} span "
                f"[{ent.start},{ent.end}) outside text of length {len(doc.text)}"
            )
    ranks: dict[str, Optional[int]] = {}
    for cand in doc.candidates:
        if cand.entity_id not in doc._entity_index:
            raise DanglingEntityRef(
                f"document {doc.id!r}: candidate references unknown entity {cand.entity_id!r}"
            )
        if cand.gold_rank is not None and not (MIN_RANK <= cand.gold_rank <= MAX_RANK):
            raise RankOutOfRange(
                f"document {doc.id!r}: gold_rank {cand.gold_rank} outside [{MIN_RANK},{MAX_RANK}]"
            )
        key = cand.code.normalized
        if key in ranks and ranks[key] != cand.gold_rank:
            raise InconsistentCodeRank(
                f"document {doc.id!r}: code {key} carries ranks {ranks[key]} and {cand.gold_rank}"
            )
        ranks[key] = cand.gold_rank
    primaries = [code for code, rank in ranks.items() if rank == 1]
    if len(primaries) > 1:
        raise MultiplePrimaryCodes(
            f"document {doc.id!r}: multiple primary codes {sorted(primaries)}"
        )


def _parse_document(obj: dict, lineno: int) -> Document:
    def need(key: str, kind: type):
        if key not in obj:
            raise SchemaError(lineno, f"missing field {key!r}")
        value = obj[key]
        if not isinstance(value, kind):
            raise SchemaError(lineno, f"field {key!r} must be {kind.__name__}")
        return value

    doc_id = need("id", str)
    split = need("split", str)
    if split not in SPLITS:
        raise SchemaError(lineno, f"split must be one of {SPLITS}, got {split!r}")
    text = need("text", str)

    entities: list[EntitySpan] = []
    seen_ids: set[str] = set()
    for raw in need("entities", list):
        if not isinstance(raw, dict):
            raise SchemaError(lineno, "entity entries must be objects")
        try:
            ent_id, start, end = raw["id"], raw["start"], raw["end"]
        except KeyError as exc:
            raise SchemaError(lineno, f"entity missing field {exc.args[0]!r}") from exc
        if not isinstance(ent_id, str) or not isinstance(start, int) or not isinstance(end, int):
            raise SchemaError(lineno, "entity fields have wrong types")
        if ent_id in seen_ids:
            raise SchemaError(lineno, f"duplicate entity id {ent_id!r}")
        seen_ids.add(ent_id)
        if not (0 <= start < end <= len(text)):
            raise SpanOutOfBounds(
                f"line {lineno}: entity {ent_id!r} span [{start},{end}) "
                f"outside text of length {len(text)}"
            )
        entities.append(EntitySpan(id=ent_id, start=start, end=end, surface=text[start:end]))

    candidates: list[Candidate] = []
    for raw in need("candidates", list):
        if not isinstance(raw, dict):
            raise SchemaError(lineno, "candidate entries must be objects")
        try:
            entity_id, code_text = raw["entity_id"], raw["code"]
        except KeyError as exc:
            raise SchemaError(lineno, f"candidate missing field {exc.args[0]!r}") from exc
        gold_rank = raw.get("gold_rank")
        if gold_rank is not None and not isinstance(gold_rank, int):
            raise SchemaError(lineno, "gold_rank must be an integer or null")
        if gold_rank is not None and not (MIN_RANK <= gold_rank <= MAX_RANK):
            raise RankOutOfRange(
                f"line {lineno}: gold_rank {gold_rank} outside [{MIN_RANK},{MAX_RANK}]"
            )
        candidates.append(
            Candidate(entity_id=entity_id, code=parse_code(code_text), gold_rank=gold_rank)
        )

    doc = Document(id=doc_id, text=text, split=split, entities=entities, candidates=candidates)
    _validate_document(doc)
    return doc


def load_jsonl(path: str | Path) -> Corpus:
    """Load and validate a JSONL corpus (one document object per line)."""
    documents: list[Document] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(lineno, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise SchemaError(lineno, "each line must hold a JSON object")
            doc = _parse_document(obj, lineno)
            if doc.id in seen:
                raise SchemaError(lineno, f"duplicate document id {doc.id!r}")
            seen.add(doc.id)
            documents.append(doc)
    return Corpus(documents=documents, provenance=str(path))


def document_to_obj(doc: Document) -> dict:
    return {
        "id": doc.id,
        "split": doc.split,
        "text": doc.text,
        "entities": [{"id": e.id, "start": e.start, "end": e.end} for e in doc.entities],
        "candidates": [
            {"entity_id": c.entity_id, "code": c.code.normalized, "gold_rank": c.gold_rank}
            for c in doc.candidates
        ],
    }


def save_jsonl(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for doc in corpus.documents:
            handle.write(json.dumps(document_to_obj(doc)) + "\n")


_SENTENCE_SPLIT_RE = re.compile(r"(?<=[.!?])\s+")


def sentence_count(text: str) -> int:
    """Sentences delimited by ``. ! ?`` followed by whitespace."""
    stripped = text.strip()
    if not stripped:
        return 0
    return sum(1 for part in _SENTENCE_SPLIT_RE.split(stripped) if part.strip())


@dataclass(frozen=True)
class SplitStats:
    documents: int
    code_sum: int
    entities: int
    word_mean: float
    word_std: float
    sentence_mean: float
    sentence_std: float


def _mean_std(values: list[int]) -> tuple[float, float]:
    if not values:
        return 0.0, 0.0
    mean = sum(values) / len(values)
    var = sum((v - mean) ** 2 for v in values) / len(values)
    return mean, math.sqrt(var)


def split_stats(corpus: Corpus) -> dict[str, SplitStats]:
    """Per-split document/code/entity counts and word/sentence length stats.

    ``code_sum`` is the sum over documents of each document's unique candidate
    codes; words are tokenizer tokens, std is the population deviation.
    """
    out: dict[str, SplitStats] = {}
    for split in SPLITS:
        docs = corpus.split(split)
        words = [len(tokenize(d.text)) for d in docs]
        sentences = [sentence_count(d.text) for d in docs]
        word_mean, word_std = _mean_std(words)
        sent_mean, sent_std = _mean_std(sentences)
        out[split] = SplitStats(
            documents=len(docs),
            code_sum=sum(len({c.code.normalized for c in d.candidates}) for d in docs),
            entities=sum(len(d.entities) for d in docs),
            word_mean=word_mean,
            word_std=word_std,
            sentence_mean=sent_mean,
            sentence_std=sent_std,
        )
    return out


@dataclass(frozen=True)
class MismatchStats:
    unique_codes: int
    unseen: int
    unseen_pct: float


def gold_codes_of_split(corpus: Corpus, split: str) -> set[str]:
    codes: set[str] = set()
    for doc in corpus.split(split):
        codes.update(doc.relevant_codes())
    return codes


def code_mismatch_stats(corpus: Corpus) -> dict[str, MismatchStats]:
    """Per-split unique gold codes and how many never occur as train gold codes.

    Percentages are rounded to one decimal, mirroring how out-of-domain code
    rates are conventionally reported.
    """
    train_codes = gold_codes_of_split(corpus, "train")
    out: dict[str, MismatchStats] = {}
    for split in SPLITS:
        codes = gold_codes_of_split(corpus, split)
        unseen = len(codes - train_codes)
        pct = round(100.0 * unseen / len(codes), 1) if codes else 0.0
        out[split] = MismatchStats(unique_codes=len(codes), unseen=unseen, unseen_pct=pct)
    return out


def load_lexicon(path: str | Path) -> dict[str, IcdCode]:
    """Load a ``phrase<TAB>code`` TSV into a lowercase phrase -> code map."""
    lexicon: dict[str, IcdCode] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            phrase, sep, code_text = line.partition("\t")
            phrase = phrase.strip().lower()
            if not sep or not phrase:
                raise SchemaError(lineno, "expected tab-separated phrase and code")
            lexicon[phrase] = parse_code(code_text)
    return lexicon


def dictionary_link(
    text: str, lexicon: dict[str, IcdCode], table: IcdTable
) -> tuple[list[EntitySpan], list[Candidate]]:
    """Deterministic dictionary linker: longest match first, left to right.

    Matches are case-insensitive, non-overlapping, and must start and end at
    word boundaries. Every match yields one entity span and one candidate with
    no gold rank. All lexicon codes must exist in ``table``.
    """
    for phrase, code in sorted(lexicon.items()):
        if not phrase:
            raise SchemaError(0, "empty lexicon phrase")
        if code not in table:
            raise UnknownCodeInLexicon(f"lexicon code {code.display} not in code table")

    phrases = sorted(lexicon, key=lambda p: (-len(p), p))
    lowered = text.lower()
    n = len(lowered)
    entities: list[EntitySpan] = []
    candidates: list[Candidate] = []
    i = 0
    while i < n:
        if lowered[i].isalnum() and (i == 0 or not lowered[i - 1].isalnum()):
            for phrase in phrases:
                j = i + len(phrase)
                if lowered.startswith(phrase, i) and (j == n or not lowered[j].isalnum()):
                    ent_id = f"ent{len(entities)}"
                    entities.append(EntitySpan(id=ent_id, start=i, end=j, surface=text[i:j]))
                    candidates.append(Candidate(entity_id=ent_id, code=lexicon[phrase]))
                    i = j
                    break
            else:
                i += 1
        else:
            i += 1
    return entities, candidates


def group_by_code(document: Document) -> dict[str, list[Candidate]]:
    """Partition candidates by normalized code, groups in code order.

    Within a group, candidates follow the document order of their entities
    (start offset, then entity id).
    """
    groups: dict[str, list[Candidate]] = {}
    def position(cand: Candidate) -> tuple[int, int, str]:
        ent = document.entity(cand.entity_id)
        return (ent.start, ent.end, ent.id)

    for code in sorted({c.code.normalized for c in document.candidates}):
        members = [c for c in document.candidates if c.code.normalized == code]
        members.sort(key=position)
        groups[code] = members
    return groups
