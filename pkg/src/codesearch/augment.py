"""Soft data augmentation over token sequences.

Four operators produce positive samples for contrastive training by
masking sampled tokens or replacing them with their lexical kind token.
They are re-applied with fresh randomness on every call, so consecutive
iterations over the same pair see different variants. Queries only ever
get masking, because the other operators need code type information.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .corpus import CodeQueryPair, MASK_TOKEN, type_token
from .lexing import TokenKind, TypedToken, classify_tokens

METHOD_ORDER = ("DM", "DR", "DRST", "DMST")
DEFAULT_TYPE_CANDIDATES = (TokenKind.IDENTIFIER, TokenKind.OPERATOR)


@dataclass(frozen=True)
class AugmentationConfig:
    ratio: float = 0.15
    methods: tuple[str, ...] = METHOD_ORDER
    specified_type_candidates: tuple[TokenKind, ...] = DEFAULT_TYPE_CANDIDATES
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.ratio <= 1.0:
            raise ValueError(f"ratio must be in [0, 1], got {self.ratio}")
        if not self.methods:
            raise ValueError("methods must be non-empty")
        unknown = [m for m in self.methods if m not in METHOD_ORDER]
        if unknown:
            raise ValueError(f"unknown augmentation methods: {unknown}")
        # canonical order keeps the per-call method draw seed-stable
        ordered = tuple(m for m in METHOD_ORDER if m in self.methods)
        object.__setattr__(self, "methods", ordered)
        kinds = tuple(k for k in TokenKind if k in self.specified_type_candidates)
        object.__setattr__(self, "specified_type_candidates", kinds)


@dataclass
class AugmentationRecord:
    """Audit entry: what happened to one sample in one call."""

    pair_id: str
    method: str
    positions: list[int]
    fallback: bool = False

    def to_json(self) -> dict:
        return {
            "id": self.pair_id,
            "method": self.method,
            "positions": self.positions,
            "fallback": self.fallback,
        }


def select_count(n: int, r: float) -> int:
    """Number of positions to replace among ``n`` eligible tokens.

    Zero when the ratio or the pool is zero, otherwise at least one so a
    positive sample is never identical to its source:
    ``max(1, round_half_up(r * n))``, capped at ``n``.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if not 0.0 <= r <= 1.0:
        raise ValueError(f"ratio must be in [0, 1], got {r}")
    if n == 0 or r == 0.0:
        return 0
    k = int(math.floor(r * n + 0.5))
    return min(n, max(1, k))


def _sample_positions(count: int, k: int, rng: np.random.Generator) -> list[int]:
    if k == 0:
        return []
    chosen = rng.choice(count, size=k, replace=False)
    return sorted(int(i) for i in chosen)


def _replace(tokens: list[str], positions: list[int], replacement) -> list[str]:
    out = list(tokens)
    for pos in positions:
        out[pos] = replacement(pos)
    return out


def _dm(tokens, r: float, rng: np.random.Generator) -> tuple[list[str], list[int]]:
    if not tokens:
        raise ValueError("cannot augment an empty sequence")
    tokens = list(tokens)
    positions = _sample_positions(len(tokens), select_count(len(tokens), r), rng)
    return _replace(tokens, positions, lambda _: MASK_TOKEN), positions


def _dr(typed: list[TypedToken], r: float, rng: np.random.Generator) -> tuple[list[str], list[int]]:
    if not typed:
        raise ValueError("cannot augment an empty sequence")
    surface = [t.text for t in typed]
    positions = _sample_positions(len(typed), select_count(len(typed), r), rng)
    return _replace(surface, positions, lambda p: type_token(typed[p].kind)), positions


def _specified_type(
    typed: list[TypedToken],
    r: float,
    candidates,
    rng: np.random.Generator,
    masked: bool,
) -> tuple[list[str], list[int], TokenKind | None, bool]:
    if not typed:
        raise ValueError("cannot augment an empty sequence")
    present = [k for k in TokenKind if k in candidates and any(t.kind == k for t in typed)]
    if not present:
        tokens, positions = _dm([t.text for t in typed], r, rng)
        return tokens, positions, None, True
    kind = present[int(rng.integers(len(present)))]
    eligible = [i for i, t in enumerate(typed) if t.kind == kind]
    k = select_count(len(eligible), r)
    chosen = _sample_positions(len(eligible), k, rng)
    positions = [eligible[i] for i in chosen]
    replacement = MASK_TOKEN if masked else type_token(kind)
    surface = [t.text for t in typed]
    return _replace(surface, positions, lambda _: replacement), positions, kind, False


def dm(tokens, r: float, rng: np.random.Generator) -> list[str]:
    """Dynamic masking: replace a sampled fraction of tokens with [MASK]."""
    return _dm(tokens, r, rng)[0]


def dr(typed: list[TypedToken], r: float, rng: np.random.Generator) -> list[str]:
    """Dynamic replacement: swap sampled tokens for their kind token."""
    return _dr(typed, r, rng)[0]


def drst(typed: list[TypedToken], r: float, candidates, rng: np.random.Generator) -> list[str]:
    """Dynamic replacement restricted to one sampled kind.

    A kind is drawn uniformly from the candidate kinds present in the
    sequence; only tokens of that kind are eligible. Falls back to plain
    masking when no candidate kind occurs.
    """
    return _specified_type(typed, r, candidates, rng, masked=False)[0]


def dmst(typed: list[TypedToken], r: float, candidates, rng: np.random.Generator) -> list[str]:
    """Dynamic masking restricted to one sampled kind (see drst)."""
    return _specified_type(typed, r, candidates, rng, masked=True)[0]


def augment_code(
    pair: CodeQueryPair,
    cfg: AugmentationConfig,
    rng: np.random.Generator,
    audit: list[AugmentationRecord] | None = None,
) -> list[str]:
    """Apply one uniformly drawn augmentation method to the pair's code.

    The draw happens per call, so each sample gets a fresh method every
    iteration. With a single configured method no randomness is spent on
    the draw and the call behaves exactly like that operator.
    """
    methods = cfg.methods
    method = methods[0] if len(methods) == 1 else methods[int(rng.integers(len(methods)))]
    fallback = False
    if method == "DM":
        tokens, positions = _dm(pair.code_tokens, cfg.ratio, rng)
    else:
        typed = classify_tokens(pair.code_tokens, pair.language)
        if method == "DR":
            tokens, positions = _dr(typed, cfg.ratio, rng)
        else:
            tokens, positions, _, fallback = _specified_type(
                typed, cfg.ratio, cfg.specified_type_candidates, rng, masked=(method == "DMST")
            )
    if audit is not None:
        audit.append(AugmentationRecord(pair.id, method, positions, fallback))
    return tokens


def augment_query(
    tokens,
    cfg: AugmentationConfig,
    rng: np.random.Generator,
    pair_id: str = "",
    audit: list[AugmentationRecord] | None = None,
) -> list[str]:
    """Mask-only augmentation for queries."""
    out, positions = _dm(tokens, cfg.ratio, rng)
    if audit is not None:
        audit.append(AugmentationRecord(pair_id, "DM", positions))
    return out
