"""Training orchestration: momentum-contrastive pre-training, in-batch
fine-tuning with MRR-based model selection, and zero-shot evaluation.

Everything is deterministically seeded: batch shuffles derive from
(seed, epoch), augmentation streams from (seed, step, sample), and the
torch rng state travels inside checkpoints, so a resumed run reproduces
the loss trace of an uninterrupted one.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .augment import AugmentationConfig
from .checkpoint import LoadedCheckpoint, load_checkpoint, save_checkpoint
from .contrastive import (
    ContrastiveConfig,
    NegativeQueue,
    NonFiniteLossError,
    PretrainState,
    finetune_loss,
    pretrain_step,
)
from .corpus import Corpus, Vocabulary
from .encoder import EncoderConfig, encode, to_tensors
from .evaluation import EvalReport, evaluate
from .model import ModelBundle, build_bundle
from .utils import derive_rng

logger = logging.getLogger(__name__)

MAX_CONSECUTIVE_NON_FINITE = 3


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    steps: int = 500
    epochs: int = 5
    lr: float = 2e-5
    warmup_fraction: float = 0.1
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    grad_clip: float = 1.0
    seed: int = 0
    checkpoint_every: int = 0
    code_max_len: int = 128
    query_max_len: int = 256
    finetune_symmetric: bool = False

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.steps < 0 or self.epochs < 0:
            raise ValueError("step and epoch budgets must be non-negative")
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must be in [0, 1)")


def toy_configs(
    vocab_size: int,
) -> tuple[EncoderConfig, ContrastiveConfig, AugmentationConfig, TrainingConfig]:
    """Desk-scale preset: CPU-trainable in minutes."""
    return (
        EncoderConfig(vocab_size=vocab_size, layers=2, hidden_dim=128, heads=4, ffn_dim=512,
                      dropout=0.1, max_len=64),
        ContrastiveConfig(temperature=0.07, momentum=0.99, queue_size=512, batch_size=16),
        AugmentationConfig(ratio=0.15),
        TrainingConfig(steps=500, epochs=5, lr=1e-3, code_max_len=64, query_max_len=64),
    )


def full_configs(
    vocab_size: int = 51451,
) -> tuple[EncoderConfig, ContrastiveConfig, AugmentationConfig, TrainingConfig]:
    """Full-scale preset: 12x768 encoder, 4096 queue, 100k-step budget.

    Not intended for CPU runs; kept as a named reference configuration.
    """
    return (
        EncoderConfig(vocab_size=vocab_size, layers=12, hidden_dim=768, heads=12, ffn_dim=3072,
                      dropout=0.1, max_len=256),
        ContrastiveConfig(temperature=0.07, momentum=0.999, queue_size=4096, batch_size=128),
        AugmentationConfig(ratio=0.15),
        TrainingConfig(steps=100_000, epochs=5, lr=2e-5, code_max_len=128, query_max_len=256),
    )


PRESETS = {"toy": toy_configs, "full": full_configs}


def make_optimizer(bundle: ModelBundle, cfg: TrainingConfig) -> torch.optim.AdamW:
    decay, no_decay = [], []
    for enc in bundle.live_encoders():
        for name, param in enc.named_parameters():
            if name.endswith("bias") or "norm" in name:
                no_decay.append(param)
            else:
                decay.append(param)
    groups = [
        {"params": decay, "weight_decay": cfg.weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]
    return torch.optim.AdamW(groups, lr=cfg.lr, betas=cfg.betas)


def lr_at(step: int, total: int, cfg: TrainingConfig) -> float:
    """Linear warmup to cfg.lr, then linear decay to zero."""
    if total <= 0:
        return cfg.lr
    warmup = max(1, math.ceil(total * cfg.warmup_fraction))
    if step < warmup:
        return cfg.lr * (step + 1) / warmup
    remaining = max(0, total - step)
    return cfg.lr * remaining / max(1, total - warmup)


def epoch_batches(n: int, batch_size: int, seed: int, label: str, epoch: int) -> list[list[int]]:
    """Seeded per-epoch shuffle split into whole batches (tail dropped)."""
    order = derive_rng(seed, label, epoch).permutation(n)
    count = n // batch_size
    return [order[i * batch_size : (i + 1) * batch_size].tolist() for i in range(count)]


class MetricsWriter:
    """Streams per-step training metrics as CSV and line-delimited JSON."""

    FIELDS = ("step", "loss", "loss_inter", "loss_intra", "lr")

    def __init__(self, out_dir: Path) -> None:
        self._csv_handle = (out_dir / "metrics.csv").open("w", newline="", encoding="utf-8")
        self._csv = csv.DictWriter(self._csv_handle, fieldnames=self.FIELDS)
        self._csv.writeheader()
        self._jsonl = (out_dir / "metrics.jsonl").open("w", encoding="utf-8")

    def write(self, row: dict) -> None:
        self._csv.writerow({k: row[k] for k in self.FIELDS})
        self._jsonl.write(json.dumps(row) + "\n")

    def close(self) -> None:
        self._csv_handle.close()
        self._jsonl.close()


@dataclass
class PretrainResult:
    checkpoint_path: Path
    losses: list[float]
    state: PretrainState
    aborted: bool = False


def _fresh_state(
    corpus_vocab: Vocabulary,
    encoder_cfg: EncoderConfig,
    contrastive_cfg: ContrastiveConfig,
    augmentation_cfg: AugmentationConfig,
    training_cfg: TrainingConfig,
) -> PretrainState:
    bundle = build_bundle(
        corpus_vocab,
        encoder_cfg,
        code_max_len=training_cfg.code_max_len,
        query_max_len=training_cfg.query_max_len,
        seed=training_cfg.seed,
    )
    dtype = next(bundle.code_encoder.parameters()).dtype
    code_queue = NegativeQueue(
        contrastive_cfg.queue_size, encoder_cfg.hidden_dim,
        seed=training_cfg.seed, dtype=dtype,
    )
    query_queue = NegativeQueue(
        contrastive_cfg.queue_size, encoder_cfg.hidden_dim,
        seed=training_cfg.seed + 1, dtype=dtype,
    )
    optimizer = make_optimizer(bundle, training_cfg)
    return PretrainState(
        bundle=bundle,
        code_queue=code_queue,
        query_queue=query_queue,
        optimizer=optimizer,
        contrastive=contrastive_cfg,
        augmentation=augmentation_cfg,
        seed=training_cfg.seed,
        grad_clip=training_cfg.grad_clip,
    )


def _state_from_checkpoint(
    loaded: LoadedCheckpoint,
    augmentation_cfg: AugmentationConfig,
    training_cfg: TrainingConfig,
) -> PretrainState:
    if loaded.code_queue is None or loaded.query_queue is None:
        raise TrainingError("checkpoint has no queue state, cannot resume pre-training")
    optimizer = make_optimizer(loaded.bundle, training_cfg)
    if loaded.optimizer_state is not None:
        optimizer.load_state_dict(loaded.optimizer_state)
    if loaded.torch_rng_state is not None:
        torch.set_rng_state(loaded.torch_rng_state)
    return PretrainState(
        bundle=loaded.bundle,
        code_queue=loaded.code_queue,
        query_queue=loaded.query_queue,
        optimizer=optimizer,
        contrastive=loaded.contrastive,
        augmentation=augmentation_cfg,
        seed=loaded.seed,
        step=loaded.step,
        grad_clip=training_cfg.grad_clip,
    )


def pretrain(
    corpus: Corpus,
    vocab: Vocabulary,
    encoder_cfg: EncoderConfig,
    contrastive_cfg: ContrastiveConfig,
    augmentation_cfg: AugmentationConfig,
    training_cfg: TrainingConfig,
    out_dir: str | Path,
    resume_from: str | Path | None = None,
    audit_path: str | Path | None = None,
    stop_after: int | None = None,
) -> PretrainResult:
    """Run momentum-contrastive pre-training over the train split.

    Consecutive non-finite losses abort the run after three strikes; the
    final checkpoint carries queues, optimizer and rng state so training
    can resume exactly where it stopped. ``stop_after`` interrupts the
    run at that global step while keeping the full-length learning-rate
    schedule, so a later resume reproduces an uninterrupted run.
    """
    train_pairs = corpus.pairs_in("train")
    if not train_pairs:
        raise TrainingError("train split is empty")
    bs = contrastive_cfg.batch_size
    if len(train_pairs) < bs:
        raise TrainingError(f"train split smaller than batch size {bs}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if resume_from is not None:
        state = _state_from_checkpoint(load_checkpoint(resume_from), augmentation_cfg, training_cfg)
    else:
        state = _fresh_state(vocab, encoder_cfg, contrastive_cfg, augmentation_cfg, training_cfg)

    batches_per_epoch = len(train_pairs) // bs
    metrics = MetricsWriter(out_dir)
    audit_handle = Path(audit_path).open("w", encoding="utf-8") if audit_path else None
    losses: list[float] = []
    non_finite_streak = 0
    checkpoint_path = out_dir / "checkpoint.pt"

    def _save(step: int) -> None:
        save_checkpoint(
            checkpoint_path,
            bundle=state.bundle,
            contrastive=state.contrastive,
            stage="pretrain",
            step=step,
            seed=state.seed,
            code_queue=state.code_queue,
            query_queue=state.query_queue,
            optimizer=state.optimizer,
            metadata={"losses_tail": losses[-20:]},
        )

    target = training_cfg.steps if stop_after is None else min(training_cfg.steps, stop_after)
    try:
        while state.step < target:
            epoch = state.step // batches_per_epoch
            index_in_epoch = state.step % batches_per_epoch
            batch_ids = epoch_batches(len(train_pairs), bs, state.seed, "shuffle", epoch)
            batch = [train_pairs[i] for i in batch_ids[index_in_epoch]]
            audit: list | None = [] if audit_handle else None
            try:
                result = pretrain_step(
                    state,
                    batch,
                    lr=lr_at(state.step, training_cfg.steps, training_cfg),
                    audit=audit,
                )
            except NonFiniteLossError as exc:
                non_finite_streak += 1
                logger.warning("step %d aborted: %s", state.step, exc)
                if non_finite_streak >= MAX_CONSECUTIVE_NON_FINITE:
                    raise TrainingError(
                        f"{non_finite_streak} consecutive non-finite losses: {exc.diagnostics}"
                    ) from exc
                continue
            non_finite_streak = 0
            losses.append(result.loss)
            metrics.write(
                {
                    "step": result.step,
                    "loss": result.loss,
                    "loss_inter": result.loss_inter,
                    "loss_intra": result.loss_intra,
                    "lr": result.lr,
                }
            )
            if audit_handle and audit:
                for record in audit:
                    audit_handle.write(json.dumps(record.to_json()) + "\n")
            if training_cfg.checkpoint_every and result.step % training_cfg.checkpoint_every == 0:
                _save(result.step)
        _save(state.step)
    finally:
        metrics.close()
        if audit_handle:
            audit_handle.close()
    return PretrainResult(checkpoint_path=checkpoint_path, losses=losses, state=state)


def select_best(history: list[tuple[int, float]]) -> tuple[int, float]:
    """Argmax over (epoch, mrr) history, earlier epoch on ties."""
    if not history:
        raise ValueError("empty history")
    best_epoch, best_mrr = history[0]
    for epoch, value in history[1:]:
        if value > best_mrr:
            best_epoch, best_mrr = epoch, value
    return best_epoch, best_mrr


@dataclass
class FinetuneResult:
    checkpoint_path: Path
    history: list[tuple[int, float]]
    best_epoch: int
    best_mrr: float


def finetune(
    checkpoint_path: str | Path,
    corpus: Corpus,
    training_cfg: TrainingConfig,
    out_dir: str | Path,
) -> FinetuneResult:
    """Fine-tune with the in-batch loss, selecting the best epoch by MRR
    on the validation split against the corpus candidate pool.
    """
    train_pairs = corpus.pairs_in("train")
    if not train_pairs:
        raise TrainingError("train split is empty")
    if not corpus.pairs_in("valid"):
        raise TrainingError("valid split is empty, cannot select a model")
    loaded = load_checkpoint(checkpoint_path)
    bundle = loaded.bundle
    contrastive_cfg = loaded.contrastive
    bs = contrastive_cfg.batch_size
    if len(train_pairs) < bs:
        raise TrainingError(f"train split smaller than batch size {bs}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    optimizer = make_optimizer(bundle, training_cfg)
    batches_per_epoch = len(train_pairs) // bs
    total_steps = training_cfg.epochs * batches_per_epoch
    metrics = MetricsWriter(out_dir)

    history: list[tuple[int, float]] = []
    best_state: dict | None = None
    best_epoch, best_mrr = -1, -1.0
    step = 0
    non_finite_streak = 0
    try:
        for epoch in range(training_cfg.epochs):
            for batch_ids in epoch_batches(len(train_pairs), bs, training_cfg.seed, "finetune", epoch):
                batch = [train_pairs[i] for i in batch_ids]
                for group in optimizer.param_groups:
                    group["lr"] = lr_at(step, total_steps, training_cfg)
                code_ids, code_mask = to_tensors(
                    [p.code_tokens for p in batch], bundle.vocab, bundle.code_max_len
                )
                query_ids, query_mask = to_tensors(
                    [p.query_tokens for p in batch], bundle.vocab, bundle.query_max_len
                )
                code_reps = encode(bundle.code_encoder, code_ids, code_mask, train_mode=True)
                query_reps = encode(bundle.query_encoder, query_ids, query_mask, train_mode=True)
                loss = finetune_loss(
                    code_reps,
                    query_reps,
                    contrastive_cfg.temperature,
                    symmetric=training_cfg.finetune_symmetric,
                )
                if not bool(torch.isfinite(loss)):
                    non_finite_streak += 1
                    logger.warning("fine-tune step %d: non-finite loss", step)
                    if non_finite_streak >= MAX_CONSECUTIVE_NON_FINITE:
                        raise TrainingError("3 consecutive non-finite fine-tune losses")
                    step += 1
                    continue
                non_finite_streak = 0
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                if training_cfg.grad_clip > 0:
                    torch.nn.utils.clip_grad_norm_(
                        list(bundle.trainable_parameters()), training_cfg.grad_clip
                    )
                optimizer.step()
                metrics.write(
                    {
                        "step": step,
                        "loss": float(loss.detach()),
                        "loss_inter": 0.0,
                        "loss_intra": 0.0,
                        "lr": float(optimizer.param_groups[0]["lr"]),
                    }
                )
                step += 1
            report = evaluate(bundle, corpus, split="valid", keep_ranks=False)
            history.append((epoch, report.mrr))
            logger.info("epoch %d valid MRR %.4f", epoch, report.mrr)
            if report.mrr > best_mrr:
                best_epoch, best_mrr = epoch, report.mrr
                best_state = {
                    "encoders": {
                        "code": copy.deepcopy(bundle.code_encoder.state_dict()),
                        "query": None
                        if bundle.shared
                        else copy.deepcopy(bundle.query_encoder.state_dict()),
                    }
                }
    finally:
        metrics.close()

    assert best_state is not None
    bundle.code_encoder.load_state_dict(best_state["encoders"]["code"])
    if not bundle.shared and best_state["encoders"]["query"] is not None:
        bundle.query_encoder.load_state_dict(best_state["encoders"]["query"])
    best_path = out_dir / "checkpoint.pt"
    save_checkpoint(
        best_path,
        bundle=bundle,
        contrastive=contrastive_cfg,
        stage="finetune",
        step=step,
        seed=training_cfg.seed,
        metadata={
            "valid_mrr_history": [[e, m] for e, m in history],
            "best_epoch": best_epoch,
            "valid_mrr": best_mrr,
        },
    )
    return FinetuneResult(
        checkpoint_path=best_path, history=history, best_epoch=best_epoch, best_mrr=best_mrr
    )


def zero_shot_eval(
    checkpoint_path: str | Path, corpus: Corpus, split: str = "test"
) -> EvalReport:
    """Evaluate a checkpoint with no parameter updates."""
    loaded = load_checkpoint(checkpoint_path)
    loaded.bundle.eval_mode()
    return evaluate(loaded.bundle, corpus, split=split)
