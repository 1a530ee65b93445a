"""Lexical kind classification for pre-tokenized source code.

Code-search corpora ship pre-split token streams, so no parsing happens
here: each surface token is assigned one kind from a fixed priority rule
table, with per-language keyword sets stored as plain data files (one
keyword per line). Unknown languages fall back to a keyword-free generic
profile.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources

logger = logging.getLogger(__name__)

KEYWORDS_DIR_ENV = "CODESEARCH_KEYWORDS_DIR"

_OPERATOR_CHARS = frozenset("+-*/%=<>!&|^~?:")
_PUNCTUATION_CHARS = frozenset("()[]{},;.")
_QUOTE_CHARS = ("'", '"', "`")


class TokenKind(str, Enum):
    KEYWORD = "keyword"
    IDENTIFIER = "identifier"
    OPERATOR = "operator"
    NUMBER_LITERAL = "number_literal"
    STRING_LITERAL = "string_literal"
    PUNCTUATION = "punctuation"
    OTHER = "other"


@dataclass(frozen=True)
class TypedToken:
    """A surface token paired with its lexical kind."""

    text: str
    kind: TokenKind

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("token text must be non-empty")


def _read_profile(path) -> frozenset[str]:
    words = []
    for line in path.read_text(encoding="utf-8").splitlines():
        word = line.strip()
        if word and not word.startswith("#"):
            words.append(word)
    return frozenset(words)


@lru_cache(maxsize=None)
def keyword_profile(language: str) -> frozenset[str] | None:
    """Keyword set for a language, or None when no profile is shipped.

    An external directory named by CODESEARCH_KEYWORDS_DIR takes
    precedence over the packaged profiles, so new languages can be added
    without touching code.
    """
    override_dir = os.environ.get(KEYWORDS_DIR_ENV)
    if override_dir:
        candidate = os.path.join(override_dir, f"{language}.txt")
        if os.path.isfile(candidate):
            import pathlib

            return _read_profile(pathlib.Path(candidate))
    packaged = resources.files("codesearch").joinpath("data", "keywords", f"{language}.txt")
    if packaged.is_file():
        return _read_profile(packaged)
    return None


def available_languages() -> list[str]:
    names = set()
    for entry in resources.files("codesearch").joinpath("data", "keywords").iterdir():
        if entry.name.endswith(".txt"):
            names.add(entry.name[: -len(".txt")])
    override_dir = os.environ.get(KEYWORDS_DIR_ENV)
    if override_dir and os.path.isdir(override_dir):
        for fname in os.listdir(override_dir):
            if fname.endswith(".txt"):
                names.add(fname[: -len(".txt")])
    return sorted(names)


def _is_quoted(text: str) -> bool:
    return len(text) >= 2 and text[0] in _QUOTE_CHARS and text[-1] == text[0]


def _is_number_start(text: str) -> bool:
    if text[0].isdigit():
        return True
    return text[0] == "." and len(text) > 1 and text[1].isdigit()


def classify_token(text: str, keywords: frozenset[str]) -> TokenKind:
    """Classify one token by the first matching rule, in priority order:
    keyword, string literal, number literal, operator, punctuation,
    identifier, other. Multi-character mixed tokens land on whichever
    rule fires first.
    """
    if not text:
        raise ValueError("cannot classify an empty token")
    if text in keywords:
        return TokenKind.KEYWORD
    if _is_quoted(text):
        return TokenKind.STRING_LITERAL
    if _is_number_start(text):
        return TokenKind.NUMBER_LITERAL
    if all(ch in _OPERATOR_CHARS for ch in text):
        return TokenKind.OPERATOR
    if all(ch in _PUNCTUATION_CHARS for ch in text):
        return TokenKind.PUNCTUATION
    first = text[0]
    if first.isascii() and (first.isalpha() or first == "_"):
        return TokenKind.IDENTIFIER
    return TokenKind.OTHER


def classify_tokens(tokens, language: str) -> list[TypedToken]:
    """Assign a kind to every token. Total: the output always has one
    TypedToken per input token.
    """
    keywords = keyword_profile(language)
    if keywords is None:
        logger.warning("no keyword profile for language %r, using generic profile", language)
        keywords = frozenset()
    return [TypedToken(text=tok, kind=classify_token(tok, keywords)) for tok in tokens]
