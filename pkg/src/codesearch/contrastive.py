"""Contrastive optimization core.

Cosine similarity, the negative queues, the inter- and intra-modal
InfoNCE terms and their batch aggregation, the in-batch fine-tuning
loss, and the single pre-training step that ties augmentation, momentum
updates and queue maintenance together in a fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .augment import AugmentationConfig, AugmentationRecord, augment_code, augment_query
from .corpus import CodeQueryPair
from .encoder import encode, momentum_update, to_tensors
from .model import ModelBundle
from .utils import derive_rng

QUEUE_NORM_TOLERANCE = 1e-4


class QueueError(RuntimeError):
    pass


class NonFiniteLossError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None) -> None:
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.07
    momentum: float = 0.999
    queue_size: int = 512
    batch_size: int = 16

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.queue_size <= 0 or self.batch_size <= 0:
            raise ValueError("queue_size and batch_size must be positive")
        if self.queue_size % self.batch_size != 0:
            raise ValueError("queue_size must be a multiple of batch_size")


class NegativeQueue:
    """Fixed-capacity FIFO of detached unit-norm key representations.

    Always holds exactly ``capacity`` entries; initialization fills it
    with seeded random unit vectors which are overwritten as real keys
    arrive, oldest first.
    """

    def __init__(
        self,
        capacity: int,
        dim: int,
        seed: int = 0,
        dtype: torch.dtype = torch.float32,
    ) -> None:
        if capacity <= 0 or dim <= 0:
            raise ValueError("capacity and dim must be positive")
        rng = derive_rng(seed, "queue-init")
        vectors = rng.standard_normal((capacity, dim))
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
        self.entries = torch.from_numpy(vectors).to(dtype)
        self.capacity = capacity
        self.dim = dim
        self.write_head = 0
        self.total_enqueued = 0

    def enqueue(self, keys: torch.Tensor) -> None:
        keys = keys.detach().to(self.entries.dtype)
        if keys.ndim != 2 or keys.shape[1] != self.dim:
            raise QueueError(f"keys must have shape (n, {self.dim})")
        norms = keys.norm(dim=1)
        off = (norms - 1.0).abs().max().item()
        if off > QUEUE_NORM_TOLERANCE:
            raise QueueError(f"keys must be unit-norm, worst deviation {off:.2e}")
        count = keys.shape[0]
        if count > self.capacity:
            raise QueueError("cannot enqueue more keys than the queue capacity")
        with torch.no_grad():
            first = min(count, self.capacity - self.write_head)
            self.entries[self.write_head : self.write_head + first] = keys[:first]
            rest = count - first
            if rest:
                self.entries[:rest] = keys[first:]
        self.write_head = (self.write_head + count) % self.capacity
        self.total_enqueued += count

    def snapshot(self) -> torch.Tensor:
        return self.entries.clone()

    def state_dict(self) -> dict:
        return {
            "entries": self.entries.clone(),
            "write_head": self.write_head,
            "total_enqueued": self.total_enqueued,
        }

    def load_state_dict(self, state: dict) -> None:
        entries = state["entries"]
        if entries.shape != self.entries.shape:
            raise QueueError("queue state shape mismatch")
        self.entries = entries.clone().to(self.entries.dtype)
        self.write_head = int(state["write_head"])
        self.total_enqueued = int(state["total_enqueued"])


def cosine_sim(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Cosine similarity of two vectors; zero vectors are a hard error."""
    nx, ny = x.norm(), y.norm()
    if nx.item() == 0.0 or ny.item() == 0.0:
        raise ValueError("cosine similarity is undefined for zero vectors")
    return (x @ y) / (nx * ny)


def info_nce(
    anchor: torch.Tensor,
    positive: torch.Tensor,
    negatives: torch.Tensor,
    temperature: float,
) -> torch.Tensor:
    """One-anchor InfoNCE against a positive and a set of negative keys.

    Gradients flow into the anchor only; positive and negatives are
    treated as detached keys.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if negatives.ndim != 2 or negatives.shape[0] == 0:
        raise ValueError("negatives must be a non-empty (k, dim) matrix")
    losses = queue_info_nce(
        anchor.unsqueeze(0), positive.detach().unsqueeze(0), negatives, temperature
    )
    return losses[0]


def queue_info_nce(
    anchors: torch.Tensor,
    positives: torch.Tensor,
    negatives: torch.Tensor,
    temperature: float,
) -> torch.Tensor:
    """Per-anchor InfoNCE losses for a batch sharing one negative set.

    All inputs are L2-normalized internally, so the similarity is cosine
    regardless of input scale. Positives and negatives are detached.
    """
    anchors_n = F.normalize(anchors, dim=1)
    positives_n = F.normalize(positives.detach(), dim=1)
    negatives_n = F.normalize(negatives.detach(), dim=1)
    pos_logits = (anchors_n * positives_n).sum(dim=1) / temperature
    neg_logits = anchors_n @ negatives_n.T / temperature
    logits = torch.cat([pos_logits.unsqueeze(1), neg_logits], dim=1)
    if not bool(torch.isfinite(logits).all()):
        raise NonFiniteLossError("non-finite similarity in InfoNCE logits")
    return torch.logsumexp(logits, dim=1) - pos_logits


def finetune_loss_from_sims(sims: torch.Tensor, temperature: float) -> torch.Tensor:
    """Code-anchored in-batch softmax loss over a similarity matrix whose
    entry (i, j) is sim(code_i, query_j); the diagonal holds positives.
    """
    if sims.ndim != 2 or sims.shape[0] != sims.shape[1]:
        raise ValueError("similarity matrix must be square")
    logits = sims / temperature
    log_probs = torch.log_softmax(logits, dim=1)
    return -log_probs.diagonal().sum()


def finetune_loss(
    code_reps: torch.Tensor,
    query_reps: torch.Tensor,
    temperature: float,
    symmetric: bool = False,
) -> torch.Tensor:
    """In-batch fine-tuning loss with gradients into both rep batches.

    Code-anchored by default; the symmetric variant adds the
    query-anchored mirror term.
    """
    if code_reps.shape != query_reps.shape:
        raise ValueError("code and query batches must have equal shapes")
    if code_reps.shape[0] == 0:
        raise ValueError("batch must be non-empty")
    sims = F.normalize(code_reps, dim=1) @ F.normalize(query_reps, dim=1).T
    loss = finetune_loss_from_sims(sims, temperature)
    if symmetric:
        loss = loss + finetune_loss_from_sims(sims.T, temperature)
    return loss


@dataclass
class PretrainState:
    """Mutable state owned by the pre-training loop."""

    bundle: ModelBundle
    code_queue: NegativeQueue
    query_queue: NegativeQueue
    optimizer: torch.optim.Optimizer
    contrastive: ContrastiveConfig
    augmentation: AugmentationConfig
    seed: int
    step: int = 0
    grad_clip: float = 1.0


@dataclass
class StepResult:
    loss: float
    loss_inter: float
    loss_intra: float
    components: dict[str, float]
    lr: float
    step: int
    captured: dict[str, torch.Tensor] = field(default_factory=dict)


def _augment_batch(
    state: PretrainState, batch: list[CodeQueryPair], audit: list[AugmentationRecord] | None
) -> tuple[list[list[str]], list[list[str]]]:
    code_aug, query_aug = [], []
    for i, pair in enumerate(batch):
        code_rng = derive_rng(state.seed, "aug-code", state.step, i)
        code_aug.append(augment_code(pair, state.augmentation, code_rng, audit=audit))
        query_rng = derive_rng(state.seed, "aug-query", state.step, i)
        query_aug.append(
            augment_query(pair.query_tokens, state.augmentation, query_rng, pair.id, audit=audit)
        )
    return code_aug, query_aug


def pretrain_step(
    state: PretrainState,
    batch: list[CodeQueryPair],
    lr: float | None = None,
    capture: bool = False,
    audit: list[AugmentationRecord] | None = None,
) -> StepResult:
    """One momentum-contrastive pre-training step.

    Ordered contract: augment, encode (originals through the live
    encoders, augmented samples through the momentum encoders without
    gradient), compute the four InfoNCE terms against the queues, sum
    them, backpropagate into the live encoders only, take the optimizer
    step, EMA-update the momentum encoders, then enqueue the momentum
    keys. A non-finite loss aborts the step before any update.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    bundle = state.bundle
    cfg = state.contrastive
    vocab = bundle.vocab
    if lr is not None:
        for group in state.optimizer.param_groups:
            group["lr"] = lr
    current_lr = float(state.optimizer.param_groups[0]["lr"])

    code_aug, query_aug = _augment_batch(state, batch, audit)

    code_ids, code_mask = to_tensors([p.code_tokens for p in batch], vocab, bundle.code_max_len)
    query_ids, query_mask = to_tensors([p.query_tokens for p in batch], vocab, bundle.query_max_len)
    code_aug_ids, code_aug_mask = to_tensors(code_aug, vocab, bundle.code_max_len)
    query_aug_ids, query_aug_mask = to_tensors(query_aug, vocab, bundle.query_max_len)

    v_code = F.normalize(encode(bundle.code_encoder, code_ids, code_mask, train_mode=True), dim=1)
    v_query = F.normalize(
        encode(bundle.query_encoder, query_ids, query_mask, train_mode=True), dim=1
    )
    with torch.no_grad():
        v_code_key = F.normalize(
            encode(bundle.code_momentum, code_aug_ids, code_aug_mask, train_mode=False), dim=1
        )
        v_query_key = F.normalize(
            encode(bundle.query_momentum, query_aug_ids, query_aug_mask, train_mode=False), dim=1
        )

    code_negatives = state.code_queue.entries
    query_negatives = state.query_queue.entries
    inter_q = queue_info_nce(v_query, v_code_key, code_negatives, cfg.temperature)
    intra_q = queue_info_nce(v_query, v_query_key, query_negatives, cfg.temperature)
    inter_c = queue_info_nce(v_code, v_query_key, query_negatives, cfg.temperature)
    intra_c = queue_info_nce(v_code, v_code_key, code_negatives, cfg.temperature)

    loss_inter = inter_q.sum() + inter_c.sum()
    loss_intra = intra_q.sum() + intra_c.sum()
    loss = loss_inter + loss_intra

    components = {
        "inter_query": float(inter_q.detach().mean()),
        "inter_code": float(inter_c.detach().mean()),
        "intra_query": float(intra_q.detach().mean()),
        "intra_code": float(intra_c.detach().mean()),
    }
    if not bool(torch.isfinite(loss.detach())):
        raise NonFiniteLossError(
            f"non-finite loss at step {state.step}",
            diagnostics={"components": components, "step": state.step},
        )

    captured: dict[str, torch.Tensor] = {}
    if capture:
        captured = {
            "v_code": v_code.detach().clone(),
            "v_query": v_query.detach().clone(),
            "v_code_key": v_code_key.clone(),
            "v_query_key": v_query_key.clone(),
            "code_queue": state.code_queue.snapshot(),
            "query_queue": state.query_queue.snapshot(),
        }

    state.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    if state.grad_clip and state.grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(list(bundle.trainable_parameters()), state.grad_clip)
    state.optimizer.step()

    for live, momentum in bundle.encoder_pairs():
        momentum_update(live, momentum, cfg.momentum)

    state.code_queue.enqueue(v_code_key)
    state.query_queue.enqueue(v_query_key)
    state.step += 1

    return StepResult(
        loss=float(loss.detach()),
        loss_inter=float(loss_inter.detach()),
        loss_intra=float(loss_intra.detach()),
        components=components,
        lr=current_lr,
        step=state.step,
        captured=captured,
    )
