"""Bidirectional Transformer sequence encoder with masked mean pooling,
plus the momentum copy machinery used by the contrastive trainer.

The sequence representation is the mean of the last layer's hidden
states over non-pad positions; pad positions are excluded both from
attention (as keys) and from pooling, so appending padding never changes
a representation. The momentum copy never receives gradients and is
moved toward the live encoder by exponential moving average.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .corpus import Vocabulary, encode_tokens

INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    layers: int = 2
    hidden_dim: int = 128
    heads: int = 4
    ffn_dim: int = 512
    dropout: float = 0.1
    max_len: int = 256
    share_code_query: bool = True

    def __post_init__(self) -> None:
        if self.hidden_dim % self.heads != 0:
            raise ValueError("hidden_dim must be divisible by heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        for name in ("vocab_size", "layers", "hidden_dim", "heads", "ffn_dim", "max_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, cfg: EncoderConfig) -> None:
        super().__init__()
        self.heads = cfg.heads
        self.head_dim = cfg.hidden_dim // cfg.heads
        self.qkv = nn.Linear(cfg.hidden_dim, 3 * cfg.hidden_dim)
        self.out = nn.Linear(cfg.hidden_dim, cfg.hidden_dim)
        self.attn_dropout = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        batch, seq, hidden = x.shape
        qkv = self.qkv(x).view(batch, seq, 3, self.heads, self.head_dim)
        qkv = qkv.permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        # pad positions are never attended to as keys
        scores = scores.masked_fill(~mask[:, None, None, :], float("-inf"))
        attn = self.attn_dropout(torch.softmax(scores, dim=-1))
        context = (attn @ v).transpose(1, 2).reshape(batch, seq, hidden)
        return self.out(context)


class EncoderLayer(nn.Module):
    def __init__(self, cfg: EncoderConfig) -> None:
        super().__init__()
        self.attention = MultiHeadSelfAttention(cfg)
        self.norm1 = nn.LayerNorm(cfg.hidden_dim)
        self.ffn = nn.Sequential(
            nn.Linear(cfg.hidden_dim, cfg.ffn_dim),
            nn.GELU(),
            nn.Linear(cfg.ffn_dim, cfg.hidden_dim),
        )
        self.norm2 = nn.LayerNorm(cfg.hidden_dim)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        x = self.norm1(x + self.dropout(self.attention(x, mask)))
        x = self.norm2(x + self.dropout(self.ffn(x)))
        return x


class Encoder(nn.Module):
    """Token + learned positional embeddings followed by encoder layers."""

    def __init__(self, cfg: EncoderConfig) -> None:
        super().__init__()
        self.cfg = cfg
        self.token_embedding = nn.Embedding(cfg.vocab_size, cfg.hidden_dim)
        self.position_embedding = nn.Embedding(cfg.max_len, cfg.hidden_dim)
        self.embedding_norm = nn.LayerNorm(cfg.hidden_dim)
        self.embedding_dropout = nn.Dropout(cfg.dropout)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.layers))
        self.apply(_init_weights)

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        batch, seq = ids.shape
        if seq > self.cfg.max_len:
            raise ValueError(f"sequence length {seq} exceeds max_len {self.cfg.max_len}")
        positions = torch.arange(seq, device=ids.device).unsqueeze(0).expand(batch, seq)
        x = self.token_embedding(ids) + self.position_embedding(positions)
        x = self.embedding_dropout(self.embedding_norm(x))
        for layer in self.layers:
            x = layer(x, mask)
        return x


MomentumEncoder = Encoder


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, (nn.Linear, nn.Embedding)):
        nn.init.trunc_normal_(module.weight, std=INIT_STD, a=-2 * INIT_STD, b=2 * INIT_STD)
        if isinstance(module, nn.Linear) and module.bias is not None:
            nn.init.zeros_(module.bias)


def encode(
    enc: Encoder,
    ids: torch.Tensor,
    mask: torch.Tensor,
    train_mode: bool = False,
) -> torch.Tensor:
    """Mean-pooled sequence representations, one row per input row.

    Dropout is active only in train mode. Rows must have at least one
    non-pad position; an all-pad row is a hard error.
    """
    if ids.ndim != 2 or ids.shape[0] == 0:
        raise ValueError("ids must be a non-empty (batch, seq) tensor")
    if mask.shape != ids.shape:
        raise ValueError("mask shape must match ids shape")
    mask = mask.bool()
    if not bool(mask.any(dim=1).all()):
        raise ValueError("every row needs at least one non-pad position")
    enc.train(train_mode)
    hidden = enc(ids, mask)
    weights = mask.to(hidden.dtype).unsqueeze(-1)
    return (hidden * weights).sum(dim=1) / weights.sum(dim=1)


def to_tensors(
    token_seqs,
    vocab: Vocabulary,
    max_len: int,
    device: torch.device | str = "cpu",
    dynamic: bool = True,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Encode token sequences into stacked (ids, mask) tensors.

    With ``dynamic`` the batch is trimmed to its longest row instead of
    padding every row to ``max_len``; representations are unchanged
    because pad positions are invisible to attention and pooling.
    """
    rows = [encode_tokens(seq, vocab, max_len) for seq in token_seqs]
    ids = torch.tensor([r[0] for r in rows], dtype=torch.long, device=device)
    mask = torch.tensor([r[1] for r in rows], dtype=torch.bool, device=device)
    if dynamic:
        longest = int(mask.sum(dim=1).max())
        ids = ids[:, :longest]
        mask = mask[:, :longest]
    return ids, mask


def init_momentum(enc: Encoder) -> Encoder:
    """Deep copy of the encoder that never receives gradients."""
    momentum = copy.deepcopy(enc)
    for param in momentum.parameters():
        param.requires_grad_(False)
    momentum.eval()
    return momentum


def _check_congruent(enc: Encoder, momentum: Encoder) -> None:
    live = dict(enc.named_parameters())
    mom = dict(momentum.named_parameters())
    if live.keys() != mom.keys():
        raise ValueError("momentum encoder parameters do not match the encoder")
    for name, param in live.items():
        if param.shape != mom[name].shape:
            raise ValueError(f"shape mismatch for parameter {name!r}")


@torch.no_grad()
def momentum_update(enc: Encoder, momentum: Encoder, m: float) -> None:
    """Elementwise EMA step: p_m <- m * p_m + (1 - m) * p_e."""
    if not 0.0 <= m < 1.0:
        raise ValueError(f"momentum coefficient must be in [0, 1), got {m}")
    _check_congruent(enc, momentum)
    for p_live, p_mom in zip(enc.parameters(), momentum.parameters()):
        p_mom.mul_(m).add_(p_live, alpha=1.0 - m)
