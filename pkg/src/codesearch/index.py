"""Persistent embedding index over a code corpus plus exact top-k cosine
search.

The on-disk container is a little-endian binary file: a header with
magic, version, dimensions and the model fingerprint, a JSON block with
ids and per-snippet metadata, the float32 vector matrix, and a trailing
SHA-256 checksum over everything before it. Pools at desk scale are
small enough that brute-force exact search is both affordable and
consistent with evaluation.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus
from .evaluation import encode_sequences
from .model import ModelBundle
from .utils import sha256_hex

INDEX_MAGIC = b"CSIDX\x00"
INDEX_VERSION = 1
_CHECKSUM_LEN = 64  # hex sha256


class IndexFormatError(RuntimeError):
    pass


class StaleIndexError(RuntimeError):
    pass


@dataclass
class Hit:
    rank: int
    id: str
    score: float
    language: str
    snippet: str
    source_path: str

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "id": self.id,
            "score": self.score,
            "language": self.language,
            "snippet": self.snippet,
            "source_path": self.source_path,
        }


@dataclass
class EmbeddingIndex:
    ids: list[str]
    vectors: np.ndarray
    metadata: list[dict]
    fingerprint: str
    version: int = INDEX_VERSION

    def __post_init__(self) -> None:
        if len(self.ids) != len(set(self.ids)):
            raise IndexFormatError("index ids must be unique")
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.ids):
            raise IndexFormatError("vector matrix must have one row per id")
        if len(self.metadata) != len(self.ids):
            raise IndexFormatError("metadata must have one entry per id")
        if not self.fingerprint:
            raise IndexFormatError("index fingerprint must be present")
        norms = np.linalg.norm(self.vectors, axis=1)
        if self.vectors.shape[0] and not np.allclose(norms, 1.0, atol=1e-4):
            raise IndexFormatError("index vectors must be unit-norm")

    def __len__(self) -> int:
        return len(self.ids)

    def languages(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for meta in self.metadata:
            lang = meta.get("language", "unknown")
            counts[lang] = counts.get(lang, 0) + 1
        return counts


def build_index(
    bundle: ModelBundle,
    corpus: Corpus,
    split: str = "all",
    batch_size: int = 64,
    source_path: str = "",
) -> EmbeddingIndex:
    """Embed a corpus split (eval mode, normalized rows) into an index."""
    pairs = corpus.pairs_in(split) if split != "pool" else corpus.pool_pairs()
    if not pairs:
        raise ValueError(f"no pairs to index in split {split!r}")
    vectors = encode_sequences(bundle, [p.code_tokens for p in pairs], "code", batch_size)
    metadata = [
        {
            "language": p.language,
            "snippet": p.raw_code if p.raw_code else " ".join(p.code_tokens),
            "source_path": source_path,
        }
        for p in pairs
    ]
    return EmbeddingIndex(
        ids=[p.id for p in pairs],
        vectors=vectors.astype(np.float32),
        metadata=metadata,
        fingerprint=bundle.fingerprint(),
    )


def build_index_from_files(
    bundle: ModelBundle,
    paths,
    batch_size: int = 64,
) -> EmbeddingIndex:
    """Index raw source files directly: one snippet per file, tokens by
    whitespace split, language guessed from the extension.
    """
    paths = [Path(p) for p in paths]
    if not paths:
        raise ValueError("no files to index")
    ids, token_seqs, metadata = [], [], []
    for path in paths:
        text = path.read_text(encoding="utf-8", errors="replace")
        tokens = text.split()
        if not tokens:
            continue
        ids.append(str(path))
        token_seqs.append(tokens)
        metadata.append(
            {
                "language": path.suffix.lstrip(".") or "unknown",
                "snippet": text[:2000],
                "source_path": str(path),
            }
        )
    if not ids:
        raise ValueError("all files were empty")
    vectors = encode_sequences(bundle, token_seqs, "code", batch_size)
    return EmbeddingIndex(
        ids=ids,
        vectors=vectors.astype(np.float32),
        metadata=metadata,
        fingerprint=bundle.fingerprint(),
    )


def search(
    index: EmbeddingIndex,
    bundle: ModelBundle,
    query_text: str,
    k: int,
) -> list[Hit]:
    """Exact top-k cosine search, descending score, index tie-break.

    The index fingerprint must match the bundle; otherwise the index was
    built from a different checkpoint or vocabulary and is stale.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if bundle.fingerprint() != index.fingerprint:
        raise StaleIndexError("index fingerprint does not match the checkpoint")
    tokens = query_text.split()
    if not tokens:
        raise ValueError("query must contain at least one token")
    query_rep = encode_sequences(bundle, [tokens], "query")[0]
    scores = index.vectors.astype(np.float64) @ query_rep
    # lexsort: primary key descending score, secondary ascending index
    order = np.lexsort((np.arange(len(scores)), -scores))
    top = order[: min(k, len(scores))]
    return [
        Hit(
            rank=rank + 1,
            id=index.ids[i],
            score=float(scores[i]),
            language=index.metadata[i].get("language", "unknown"),
            snippet=index.metadata[i].get("snippet", ""),
            source_path=index.metadata[i].get("source_path", ""),
        )
        for rank, i in enumerate(top)
    ]


def save_index(index: EmbeddingIndex, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta_blob = json.dumps({"ids": index.ids, "metadata": index.metadata}).encode("utf-8")
    fingerprint = index.fingerprint.encode("ascii")
    matrix = np.ascontiguousarray(index.vectors, dtype="<f4").tobytes()
    body = b"".join(
        [
            INDEX_MAGIC,
            b"<",  # declared byte order: little-endian
            struct.pack("<I", index.version),
            struct.pack("<I", index.vectors.shape[1] if index.vectors.size else 0),
            struct.pack("<Q", len(index.ids)),
            struct.pack("<I", len(fingerprint)),
            fingerprint,
            struct.pack("<Q", len(meta_blob)),
            meta_blob,
            matrix,
        ]
    )
    checksum = sha256_hex(body).encode("ascii")
    path.write_bytes(body + checksum)


def load_index(path: str | Path) -> EmbeddingIndex:
    path = Path(path)
    if not path.is_file():
        raise IndexFormatError(f"no such index file: {path}")
    blob = path.read_bytes()
    if len(blob) < len(INDEX_MAGIC) + _CHECKSUM_LEN:
        raise IndexFormatError("index file truncated")
    body, checksum = blob[:-_CHECKSUM_LEN], blob[-_CHECKSUM_LEN:]
    if sha256_hex(body).encode("ascii") != checksum:
        raise IndexFormatError("index checksum mismatch (file corrupt or truncated)")
    offset = 0

    def take(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(body):
            raise IndexFormatError("index file truncated")
        out = body[offset : offset + n]
        offset += n
        return out

    if take(len(INDEX_MAGIC)) != INDEX_MAGIC:
        raise IndexFormatError("not an index file (bad magic)")
    if take(1) != b"<":
        raise IndexFormatError("unsupported byte order")
    (version,) = struct.unpack("<I", take(4))
    if version != INDEX_VERSION:
        raise IndexFormatError(f"unsupported index version {version}")
    (dim,) = struct.unpack("<I", take(4))
    (count,) = struct.unpack("<Q", take(8))
    (fp_len,) = struct.unpack("<I", take(4))
    fingerprint = take(fp_len).decode("ascii")
    (meta_len,) = struct.unpack("<Q", take(8))
    meta = json.loads(take(meta_len).decode("utf-8"))
    matrix = np.frombuffer(take(count * dim * 4), dtype="<f4").reshape(count, dim).copy()
    if offset != len(body):
        raise IndexFormatError("trailing bytes in index file")
    return EmbeddingIndex(
        ids=list(meta["ids"]),
        vectors=matrix,
        metadata=list(meta["metadata"]),
        fingerprint=fingerprint,
        version=version,
    )
