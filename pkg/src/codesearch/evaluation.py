"""Retrieval metrics, alignment/uniformity diagnostics, hyperparameter
sweeps, and embedding export.

Ranks use cosine scores with a deterministic ascending-index tie-break.
The alignment metric is the mean squared distance between paired unit
representations; uniformity is the log of the mean Gaussian-kernel
energy over distinct pairs. Both are computed on L2-normalized vectors,
are exactly zero when all representations coincide, and are reported per
modality as well as pooled.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .corpus import CodeQueryPair, Corpus, Vocabulary
from .encoder import encode, to_tensors
from .model import ModelBundle

logger = logging.getLogger(__name__)

SWEEPABLE = ("lr", "m", "r", "tau")


class EvaluationError(RuntimeError):
    pass


@dataclass
class EvalReport:
    mrr: float
    r_at_1: float
    r_at_5: float
    r_at_10: float
    l_align: float
    l_uniform_code: float
    l_uniform_query: float
    l_uniform_pooled: float
    pool_size: int
    query_count: int
    ranks: list[int] | None = None

    def __post_init__(self) -> None:
        if not self.r_at_1 <= self.r_at_5 <= self.r_at_10:
            raise EvaluationError("recall must be monotone in k")
        if not 0.0 < self.mrr <= 1.0:
            raise EvaluationError("MRR must lie in (0, 1]")
        if self.l_align < 0:
            raise EvaluationError("alignment metric must be non-negative")
        for value in (self.l_uniform_code, self.l_uniform_query, self.l_uniform_pooled):
            if value > 1e-12:
                raise EvaluationError("uniformity metric must be non-positive")

    def to_dict(self, include_ranks: bool = False) -> dict:
        data = dataclasses.asdict(self)
        if not include_ranks:
            data.pop("ranks")
        return data

    CSV_FIELDS = (
        "mrr",
        "r_at_1",
        "r_at_5",
        "r_at_10",
        "l_align",
        "l_uniform_code",
        "l_uniform_query",
        "l_uniform_pooled",
        "pool_size",
        "query_count",
    )

    def to_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer)
        writer.writerow(self.CSV_FIELDS)
        writer.writerow([getattr(self, name) for name in self.CSV_FIELDS])
        return buffer.getvalue()


def rank_of_gold(query_rep: np.ndarray, candidate_reps: np.ndarray, gold_index: int) -> int:
    """1-based rank of the gold candidate under cosine scoring.

    Equal scores break by ascending candidate index, so the rank is
    1 + |better| + |equal with smaller index|.
    """
    if candidate_reps.ndim != 2 or candidate_reps.shape[0] == 0:
        raise ValueError("candidate pool must be a non-empty matrix")
    if not 0 <= gold_index < candidate_reps.shape[0]:
        raise ValueError(f"gold index {gold_index} out of range")
    query = np.asarray(query_rep, dtype=np.float64)
    cands = np.asarray(candidate_reps, dtype=np.float64)
    qn = np.linalg.norm(query)
    cn = np.linalg.norm(cands, axis=1)
    if qn == 0 or np.any(cn == 0):
        raise ValueError("zero vector in rank computation")
    scores = (cands @ query) / (cn * qn)
    gold_score = scores[gold_index]
    better = int(np.sum(scores > gold_score))
    equal_before = int(np.sum(scores[:gold_index] == gold_score))
    return 1 + better + equal_before


def mrr(ranks) -> float:
    ranks = list(ranks)
    if not ranks:
        raise ValueError("ranks must be non-empty")
    if any(r < 1 for r in ranks):
        raise ValueError("ranks are 1-based")
    return float(np.mean([1.0 / r for r in ranks]))


def recall_at_k(ranks, k: int) -> float:
    ranks = list(ranks)
    if not ranks:
        raise ValueError("ranks must be non-empty")
    if k < 1:
        raise ValueError("k must be at least 1")
    return float(np.mean([1.0 if r <= k else 0.0 for r in ranks]))


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("cannot normalize zero vectors")
    return x / norms


def align_metric(x: np.ndarray, y: np.ndarray) -> float:
    """Mean squared distance between paired representations."""
    x = _normalize_rows(x)
    y = _normalize_rows(y)
    if x.shape != y.shape or x.shape[0] == 0:
        raise ValueError("paired representations must be non-empty and congruent")
    return float(np.mean(np.sum((x - y) ** 2, axis=1)))


def uniform_metric(x: np.ndarray) -> float:
    """Log mean Gaussian-kernel energy over unordered distinct pairs."""
    x = _normalize_rows(x)
    n = x.shape[0]
    if n < 2:
        raise ValueError("uniformity needs at least 2 vectors")
    sq_dists = np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1)
    iu = np.triu_indices(n, k=1)
    return float(np.log(np.mean(np.exp(-2.0 * sq_dists[iu]))))


def encode_sequences(
    bundle: ModelBundle,
    token_seqs,
    kind: str,
    batch_size: int = 64,
) -> np.ndarray:
    """Eval-mode, L2-normalized representations for token sequences."""
    if kind == "code":
        enc, max_len = bundle.code_encoder, bundle.code_max_len
    elif kind == "query":
        enc, max_len = bundle.query_encoder, bundle.query_max_len
    else:
        raise ValueError(f"unknown modality {kind!r}")
    rows: list[np.ndarray] = []
    with torch.no_grad():
        for start in range(0, len(token_seqs), batch_size):
            chunk = token_seqs[start : start + batch_size]
            ids, mask = to_tensors(chunk, bundle.vocab, max_len)
            reps = encode(enc, ids, mask, train_mode=False)
            reps = torch.nn.functional.normalize(reps, dim=1)
            rows.append(reps.cpu().to(torch.float32).numpy())
    return np.concatenate(rows, axis=0)


def compute_ranks(
    query_reps: np.ndarray, pool_reps: np.ndarray, gold_indices: list[int]
) -> list[int]:
    return [
        rank_of_gold(query_reps[i], pool_reps, gold)
        for i, gold in enumerate(gold_indices)
    ]


def evaluate(
    bundle: ModelBundle,
    corpus: Corpus,
    split: str = "test",
    batch_size: int = 64,
    keep_ranks: bool = True,
) -> EvalReport:
    """Retrieval evaluation of a split against the corpus candidate pool.

    The pool is encoded once; every query must have its gold code in the
    pool (hard error naming the offending query otherwise).
    """
    queries = corpus.pairs_in(split)
    if not queries:
        raise EvaluationError(f"split {split!r} has no pairs")
    pool_ids = corpus.candidate_pool
    if not pool_ids:
        raise EvaluationError("candidate pool is empty")
    pool_position = {pid: i for i, pid in enumerate(pool_ids)}
    gold_indices = []
    for pair in queries:
        if pair.id not in pool_position:
            raise EvaluationError(f"gold code for query {pair.id!r} missing from candidate pool")
        gold_indices.append(pool_position[pair.id])

    pool_pairs = corpus.pool_pairs()
    pool_reps = encode_sequences(bundle, [p.code_tokens for p in pool_pairs], "code", batch_size)
    query_reps = encode_sequences(bundle, [p.query_tokens for p in queries], "query", batch_size)

    ranks = compute_ranks(query_reps, pool_reps, gold_indices)
    gold_reps = pool_reps[gold_indices]
    pooled = np.concatenate([pool_reps, query_reps], axis=0)
    return EvalReport(
        mrr=mrr(ranks),
        r_at_1=recall_at_k(ranks, 1),
        r_at_5=recall_at_k(ranks, 5),
        r_at_10=recall_at_k(ranks, 10),
        l_align=align_metric(query_reps, gold_reps),
        l_uniform_code=uniform_metric(pool_reps) if len(pool_reps) >= 2 else 0.0,
        l_uniform_query=uniform_metric(query_reps) if len(query_reps) >= 2 else 0.0,
        l_uniform_pooled=uniform_metric(pooled) if len(pooled) >= 2 else 0.0,
        pool_size=len(pool_ids),
        query_count=len(queries),
        ranks=ranks if keep_ranks else None,
    )


def sweep(
    grid: dict[str, list[float]],
    corpus: Corpus,
    vocab: Vocabulary,
    encoder_cfg,
    contrastive_cfg,
    augmentation_cfg,
    training_cfg,
    out_dir: str | Path,
    eval_split: str = "valid",
) -> list[dict]:
    """Train and evaluate once per grid point, one CSV row each.

    Each point pre-trains with the overridden hyperparameter and reports
    zero-shot MRR on the evaluation split. Errors at one point are
    logged and skipped without aborting the rest of the sweep.
    """
    from .training import pretrain  # local import to avoid a cycle

    unknown = set(grid) - set(SWEEPABLE)
    if unknown:
        raise ValueError(f"unsweepable hyperparameters: {sorted(unknown)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    for name, values in grid.items():
        for value in values:
            enc_cfg = encoder_cfg
            con_cfg = contrastive_cfg
            aug_cfg = augmentation_cfg
            train_cfg = training_cfg
            if name == "lr":
                train_cfg = dataclasses.replace(train_cfg, lr=float(value))
            elif name == "m":
                con_cfg = dataclasses.replace(con_cfg, momentum=float(value))
            elif name == "r":
                aug_cfg = dataclasses.replace(aug_cfg, ratio=float(value))
            elif name == "tau":
                con_cfg = dataclasses.replace(con_cfg, temperature=float(value))
            run_dir = out_dir / f"run_{name}_{value}"
            try:
                result = pretrain(corpus, vocab, enc_cfg, con_cfg, aug_cfg, train_cfg, run_dir)
                report = evaluate(result.state.bundle, corpus, split=eval_split, keep_ranks=False)
                rows.append({"hyperparameter": name, "value": value, "mrr": report.mrr})
            except Exception as exc:  # noqa: BLE001 - sweep must survive bad points
                logger.error("sweep point %s=%s failed: %s", name, value, exc)
    csv_path = out_dir / "sweep.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=["hyperparameter", "value", "mrr"])
        writer.writeheader()
        writer.writerows(rows)
    return rows


def export_embeddings(
    bundle: ModelBundle,
    pairs: list[CodeQueryPair],
    out,
    batch_size: int = 64,
) -> int:
    """Write one vector row per code and query representation plus one
    paired-distance row per pair. Returns the number of rows written.
    """
    if not pairs:
        raise ValueError("pairs must be non-empty")
    code_reps = encode_sequences(bundle, [p.code_tokens for p in pairs], "code", batch_size)
    query_reps = encode_sequences(bundle, [p.query_tokens for p in pairs], "query", batch_size)
    dim = code_reps.shape[1]
    close = False
    if isinstance(out, (str, Path)):
        handle = Path(out).open("w", newline="", encoding="utf-8")
        close = True
    else:
        handle = out
    rows = 0
    try:
        writer = csv.writer(handle)
        writer.writerow(["id", "modality", "distance"] + [f"v{i}" for i in range(dim)])
        for i, pair in enumerate(pairs):
            writer.writerow([pair.id, "code", ""] + [repr(float(v)) for v in code_reps[i]])
            writer.writerow([pair.id, "query", ""] + [repr(float(v)) for v in query_reps[i]])
            distance = float(np.linalg.norm(code_reps[i] - query_reps[i]))
            writer.writerow([pair.id, "pair_distance", repr(distance)] + [""] * dim)
            rows += 3
    finally:
        if close:
            handle.close()
    return rows
