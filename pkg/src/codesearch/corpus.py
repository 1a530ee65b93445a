"""Dataset ingestion, splits, candidate pools, and the shared vocabulary.

Input is line-delimited JSON in the common code-search layout: each line
holds ``code_tokens`` and ``docstring_tokens`` (used as query tokens),
optionally ``code`` (raw text), ``language``, ``url`` and ``id``.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .lexing import TokenKind
from .utils import sha256_hex

logger = logging.getLogger(__name__)

PAD_TOKEN = "[PAD]"
UNK_TOKEN = "[UNK]"
MASK_TOKEN = "[MASK]"
CLS_TOKEN = "[CLS]"
SEP_TOKEN = "[SEP]"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, MASK_TOKEN, CLS_TOKEN, SEP_TOKEN)

VOCAB_VERSION = 1
CORPUS_VERSION = 1

SPLITS = ("train", "valid", "test")


class CorpusError(RuntimeError):
    pass


def type_token(kind: TokenKind) -> str:
    """Reserved surface form for a token kind, e.g. ``[identifier]``."""
    return f"[{kind.value}]"


TYPE_TOKENS = tuple(type_token(kind) for kind in TokenKind)
RESERVED_TOKENS = SPECIAL_TOKENS + TYPE_TOKENS


@dataclass(frozen=True)
class CodeQueryPair:
    id: str
    language: str
    code_tokens: tuple[str, ...]
    query_tokens: tuple[str, ...]
    raw_code: str | None = None

    def __post_init__(self) -> None:
        if not self.code_tokens:
            raise ValueError(f"pair {self.id!r}: code_tokens must be non-empty")
        if not self.query_tokens:
            raise ValueError(f"pair {self.id!r}: query_tokens must be non-empty")


class Corpus:
    """A set of code-query pairs with split labels and a candidate pool.

    Invariants enforced at construction: ids are unique, every pool id
    exists, and every test pair's code is present in the pool.
    """

    def __init__(
        self,
        pairs: list[CodeQueryPair],
        splits: dict[str, str] | None = None,
        candidate_pool: list[str] | None = None,
        load_warnings: int = 0,
    ) -> None:
        self.pairs = list(pairs)
        self.by_id = {p.id: p for p in self.pairs}
        if len(self.by_id) != len(self.pairs):
            seen: set[str] = set()
            dup = next(p.id for p in self.pairs if p.id in seen or seen.add(p.id))
            raise CorpusError(f"duplicate pair id {dup!r}")
        if splits is None:
            splits = {p.id: "train" for p in self.pairs}
        unknown = set(splits) - set(self.by_id)
        if unknown:
            raise CorpusError(f"split labels for unknown ids: {sorted(unknown)[:3]}")
        for p in self.pairs:
            label = splits.get(p.id, "train")
            if label not in SPLITS:
                raise CorpusError(f"unknown split label {label!r} for id {p.id!r}")
        self.splits = {p.id: splits.get(p.id, "train") for p in self.pairs}
        if candidate_pool is None:
            candidate_pool = [p.id for p in self.pairs]
        missing = [i for i in candidate_pool if i not in self.by_id]
        if missing:
            raise CorpusError(f"candidate pool ids not in corpus: {missing[:3]}")
        pool_set = set(candidate_pool)
        for p in self.pairs:
            if self.splits[p.id] == "test" and p.id not in pool_set:
                raise CorpusError(f"test pair {p.id!r} missing from candidate pool")
        self.candidate_pool = list(candidate_pool)
        self.load_warnings = load_warnings

    def __len__(self) -> int:
        return len(self.pairs)

    def get(self, pair_id: str) -> CodeQueryPair:
        return self.by_id[pair_id]

    def split_of(self, pair_id: str) -> str:
        return self.splits[pair_id]

    def pairs_in(self, split: str) -> list[CodeQueryPair]:
        if split == "all":
            return list(self.pairs)
        return [p for p in self.pairs if self.splits[p.id] == split]

    def pool_pairs(self) -> list[CodeQueryPair]:
        return [self.by_id[i] for i in self.candidate_pool]

    def languages(self) -> dict[str, int]:
        counts: Counter[str] = Counter(p.language for p in self.pairs)
        return dict(counts)


def _clean_tokens(value) -> tuple[str, ...] | None:
    if not isinstance(value, list):
        return None
    toks = tuple(t for t in value if isinstance(t, str) and t)
    return toks if toks else None


def load_jsonl(path: str | Path, language: str) -> Corpus:
    """Load one line-delimited JSON file into a corpus.

    One pair per valid line, in file order, ids ``<language>:<line>``.
    Malformed lines (bad JSON, missing or empty token fields) are skipped
    and counted in ``Corpus.load_warnings``; a file with zero valid lines
    is a hard error. A per-line ``language`` field overrides the default.
    """
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"no such file: {path}")
    pairs: list[CodeQueryPair] = []
    warnings = 0
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                warnings += 1
                logger.warning("%s:%d: skipping malformed JSON", path, lineno)
                continue
            if not isinstance(record, dict):
                warnings += 1
                logger.warning("%s:%d: skipping non-object line", path, lineno)
                continue
            code = _clean_tokens(record.get("code_tokens"))
            query = _clean_tokens(record.get("docstring_tokens"))
            if code is None or query is None:
                warnings += 1
                logger.warning("%s:%d: skipping line without usable tokens", path, lineno)
                continue
            lang = record.get("language", language)
            raw = record.get("code")
            pairs.append(
                CodeQueryPair(
                    id=f"{lang}:{lineno}",
                    language=lang,
                    code_tokens=code,
                    query_tokens=query,
                    raw_code=raw if isinstance(raw, str) else None,
                )
            )
    if not pairs:
        raise CorpusError(f"{path}: no valid lines")
    return Corpus(pairs, load_warnings=warnings)


def combine_splits(parts: dict[str, Corpus], pool_splits: tuple[str, ...] = ("valid", "test")) -> Corpus:
    """Merge per-split corpora into one, namespacing ids by split.

    The candidate pool defaults to all valid and test pairs so that both
    fine-tuning model selection and test evaluation retrieve against the
    same pool; it falls back to every pair when those splits are absent.
    """
    pairs: list[CodeQueryPair] = []
    splits: dict[str, str] = {}
    warnings = 0
    for split, corpus in parts.items():
        if split not in SPLITS:
            raise CorpusError(f"unknown split {split!r}")
        warnings += corpus.load_warnings
        for p in corpus.pairs:
            renamed = CodeQueryPair(
                id=f"{split}:{p.id}",
                language=p.language,
                code_tokens=p.code_tokens,
                query_tokens=p.query_tokens,
                raw_code=p.raw_code,
            )
            pairs.append(renamed)
            splits[renamed.id] = split
    pool = [p.id for p in pairs if splits[p.id] in pool_splits]
    if not pool:
        pool = [p.id for p in pairs]
    return Corpus(pairs, splits=splits, candidate_pool=pool, load_warnings=warnings)


def save_corpus(corpus: Corpus, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    with (directory / "pairs.jsonl").open("w", encoding="utf-8") as handle:
        for p in corpus.pairs:
            handle.write(
                json.dumps(
                    {
                        "id": p.id,
                        "language": p.language,
                        "split": corpus.splits[p.id],
                        "code_tokens": list(p.code_tokens),
                        "docstring_tokens": list(p.query_tokens),
                        "code": p.raw_code,
                    }
                )
                + "\n"
            )
    meta = {"version": CORPUS_VERSION, "candidate_pool": corpus.candidate_pool}
    (directory / "meta.json").write_text(json.dumps(meta, indent=2), encoding="utf-8")


def load_corpus(directory: str | Path) -> Corpus:
    directory = Path(directory)
    meta_path = directory / "meta.json"
    pairs_path = directory / "pairs.jsonl"
    if not meta_path.is_file() or not pairs_path.is_file():
        raise CorpusError(f"{directory}: not a corpus directory")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    if meta.get("version") != CORPUS_VERSION:
        raise CorpusError(f"unsupported corpus version {meta.get('version')!r}")
    pairs: list[CodeQueryPair] = []
    splits: dict[str, str] = {}
    with pairs_path.open("r", encoding="utf-8") as handle:
        for line in handle:
            record = json.loads(line)
            pair = CodeQueryPair(
                id=record["id"],
                language=record["language"],
                code_tokens=tuple(record["code_tokens"]),
                query_tokens=tuple(record["docstring_tokens"]),
                raw_code=record.get("code"),
            )
            pairs.append(pair)
            splits[pair.id] = record["split"]
    return Corpus(pairs, splits=splits, candidate_pool=meta["candidate_pool"])


class Vocabulary:
    """Dense token-to-id map with reserved specials and type tokens.

    Ids run from 0 with ``[PAD]`` pinned at 0; the five specials and the
    per-kind type tokens are always present regardless of the corpus.
    """

    def __init__(self, token_to_id: dict[str, int]) -> None:
        ids = sorted(token_to_id.values())
        if ids != list(range(len(token_to_id))):
            raise CorpusError("vocabulary ids must be dense from 0")
        if token_to_id.get(PAD_TOKEN) != 0:
            raise CorpusError(f"{PAD_TOKEN} must have id 0")
        for tok in RESERVED_TOKENS:
            if tok not in token_to_id:
                raise CorpusError(f"reserved token {tok!r} missing from vocabulary")
        self.token_to_id = dict(token_to_id)
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}

    def __len__(self) -> int:
        return len(self.token_to_id)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD_TOKEN]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK_TOKEN]

    @property
    def mask_id(self) -> int:
        return self.token_to_id[MASK_TOKEN]

    @property
    def cls_id(self) -> int:
        return self.token_to_id[CLS_TOKEN]

    @property
    def sep_id(self) -> int:
        return self.token_to_id[SEP_TOKEN]

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def to_json(self) -> dict:
        return {"version": VOCAB_VERSION, "token_to_id": self.token_to_id}

    @classmethod
    def from_json(cls, data: dict) -> "Vocabulary":
        if data.get("version") != VOCAB_VERSION:
            raise CorpusError(f"unsupported vocabulary version {data.get('version')!r}")
        return cls({str(t): int(i) for t, i in data["token_to_id"].items()})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def content_hash(self) -> str:
        canonical = json.dumps(self.to_json(), sort_keys=True).encode("utf-8")
        return sha256_hex(canonical)


def build_vocab(corpus: Corpus, max_size: int) -> Vocabulary:
    """Build a vocabulary from the merged code and query token streams.

    Reserved tokens come first; remaining slots are filled in descending
    frequency order with lexicographic tie-breaks.
    """
    if max_size < len(RESERVED_TOKENS):
        raise CorpusError(
            f"max_size {max_size} below reserved token count {len(RESERVED_TOKENS)}"
        )
    counts: Counter[str] = Counter()
    for pair in corpus.pairs:
        counts.update(pair.code_tokens)
        counts.update(pair.query_tokens)
    for reserved in RESERVED_TOKENS:
        counts.pop(reserved, None)
    budget = max_size - len(RESERVED_TOKENS)
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    token_to_id = {tok: i for i, tok in enumerate(RESERVED_TOKENS)}
    for tok, _ in ranked[:budget]:
        token_to_id[tok] = len(token_to_id)
    return Vocabulary(token_to_id)


def encode_tokens(tokens, vocab: Vocabulary, max_len: int) -> tuple[list[int], list[int]]:
    """Encode a token sequence as ``[CLS] tokens [SEP]`` ids of exactly
    ``max_len``, truncating the middle and right-padding with ``[PAD]``.

    Returns (ids, mask) where the mask marks non-pad positions. Unknown
    tokens map to ``[UNK]``.
    """
    if not tokens:
        raise ValueError("cannot encode an empty token sequence")
    if max_len < 2:
        raise ValueError("max_len must be at least 2 to fit [CLS] and [SEP]")
    body = [vocab.id_of(t) for t in tokens[: max_len - 2]]
    ids = [vocab.cls_id] + body + [vocab.sep_id]
    mask = [1] * len(ids)
    pad = max_len - len(ids)
    ids.extend([vocab.pad_id] * pad)
    mask.extend([0] * pad)
    return ids, mask
