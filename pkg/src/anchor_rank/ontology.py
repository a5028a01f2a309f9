"""ICD-10-CM code parsing, normalization, and the code/description table.

Codes are stored dotless and uppercase ("T450X1A"); the display form puts a
dot after the third character whenever the code is longer than a category
("T45.0X1A"). The hierarchy is prefix-based: every truncation of a valid code
down to its three-character category is an ancestor.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional


class OntologyError(Exception):
    """Base class for code-table and code-grammar errors."""


class InvalidCodeFormat(OntologyError):
    """Raised when a string does not match the ICD-10-CM code grammar."""


class DuplicateCode(OntologyError):
    """Raised when a code table defines the same code twice."""


class TableFormatError(OntologyError):
    """Raised for malformed code-table lines (missing tab, empty description)."""


# Grammar: letter, digit, then 1-5 alphanumerics. Total length 3-7.
_CODE_RE = re.compile(r"^[A-Z][0-9][A-Z0-9]{1,5}$")


@dataclass(frozen=True)
class IcdCode:
    """A validated ICD-10-CM code in both canonical and display forms."""

    normalized: str
    display: str

    def __str__(self) -> str:
        return self.display


def parse_code(raw: str) -> IcdCode:
    """Parse a dotted or dotless code string into an :class:`IcdCode`.

    Accepts any letter case. The only legal dot position is after the third
    character, and only when at least one character follows it.
    """
    if not raw or not raw.strip():
        raise InvalidCodeFormat("empty code")
    text = raw.strip().upper()
    if "." in text:
        head, sep, tail = text.partition(".")
        if len(head) != 3 or not tail or "." in tail:
            raise InvalidCodeFormat(f"misplaced dot in {raw!r}")
        text = head + tail
    if not _CODE_RE.match(text):
        raise InvalidCodeFormat(f"{raw!r} does not match the ICD-10-CM grammar")
    display = text if len(text) == 3 else text[:3] + "." + text[3:]
    return IcdCode(normalized=text, display=display)


def ancestors(code: IcdCode) -> list[IcdCode]:
    """Successive prefix truncations down to the 3-char category, nearest first."""
    return [parse_code(code.normalized[:n]) for n in range(len(code.normalized) - 1, 2, -1)]


def is_ancestor(a: IcdCode, b: IcdCode) -> bool:
    """True iff ``a`` is a strict prefix of ``b`` (categories included)."""
    return len(a.normalized) < len(b.normalized) and b.normalized.startswith(a.normalized)


@dataclass(frozen=True)
class IcdEntry:
    code: IcdCode
    description: str


class IcdTable:
    """Immutable code -> description lookup keyed by normalized code."""

    def __init__(self, entries: dict[str, IcdEntry]):
        self._entries = dict(entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, code: object) -> bool:
        key = _normalize_key(code)
        return key is not None and key in self._entries

    def get(self, code: IcdCode | str) -> Optional[IcdEntry]:
        key = _normalize_key(code)
        if key is None:
            return None
        return self._entries.get(key)

    def description(self, code: IcdCode | str) -> Optional[str]:
        entry = self.get(code)
        return entry.description if entry is not None else None

    def codes(self) -> list[IcdCode]:
        return [self._entries[key].code for key in sorted(self._entries)]

    def entries(self) -> list[IcdEntry]:
        return [self._entries[key] for key in sorted(self._entries)]


def _normalize_key(code: object) -> Optional[str]:
    if isinstance(code, IcdCode):
        return code.normalized
    if isinstance(code, str):
        try:
            return parse_code(code).normalized
        except InvalidCodeFormat:
            return None
    return None


def description(table: IcdTable, code: IcdCode | str) -> Optional[str]:
    return table.description(code)


def load_table(path: str | Path) -> IcdTable:
    """Load a two-column TSV (``code<TAB>description``) into an :class:`IcdTable`.

    Dotted or dotless codes are accepted; blank lines are skipped. Raises
    :class:`DuplicateCode`, :class:`InvalidCodeFormat`, or
    :class:`TableFormatError` with the offending line number.
    """
    entries: dict[str, IcdEntry] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            code_text, sep, desc = line.partition("\t")
            if not sep:
                raise TableFormatError(f"line {lineno}: expected tab-separated code and description")
            desc = desc.strip()
            if not desc:
                raise TableFormatError(f"line {lineno}: empty description")
            try:
                code = parse_code(code_text)
            except InvalidCodeFormat as exc:
                raise InvalidCodeFormat(f"line {lineno}: {exc}") from exc
            if code.normalized in entries:
                raise DuplicateCode(f"line {lineno}: code {code.display} defined twice")
            entries[code.normalized] = IcdEntry(code=code, description=desc)
    return IcdTable(entries)
