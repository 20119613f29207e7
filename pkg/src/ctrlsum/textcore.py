"""Word tokenization shared by every attribute metric.

A word is a maximal run of non-whitespace characters with leading and
trailing punctuation removed. Internal punctuation (hyphens, apostrophes,
decimal points) is kept, and the comparison form is case-folded.
"""
from __future__ import annotations

import unicodedata
from dataclasses import dataclass


def _is_punct(ch: str) -> bool:
    # Unicode punctuation (P*) and symbols (S*), so typographic quotes and
    # dashes strip like their ASCII counterparts.
    return unicodedata.category(ch)[0] in ("P", "S")


def _strip_punct(piece: str) -> str:
    start, end = 0, len(piece)
    while start < end and _is_punct(piece[start]):
        start += 1
    while end > start and _is_punct(piece[end - 1]):
        end -= 1
    return piece[start:end]


@dataclass(frozen=True, slots=True)
class Token:
    surface: str
    norm: str


@dataclass(frozen=True, slots=True)
class TokenSeq:
    tokens: tuple[Token, ...]
    source_text: str

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    @property
    def norms(self) -> list[str]:
        return [t.norm for t in self.tokens]


def tokenize(text: str) -> TokenSeq:
    """Split ``text`` into words; see the module docstring for the rule."""
    tokens = []
    # str.split() with no argument splits on any Unicode whitespace.
    for piece in text.split():
        surface = _strip_punct(piece)
        # upper() first so letters whose uppercase collides (dotless i) fold alike
        norm = surface.upper().casefold()
        if norm:
            tokens.append(Token(surface=surface, norm=norm))
    return TokenSeq(tokens=tuple(tokens), source_text=text)


def word_count(seq: TokenSeq) -> int:
    return len(seq.tokens)
