"""Versioned checkpoint container.

A checkpoint holds everything needed to either deploy the encoders
(search, evaluation) or resume training exactly: encoder configuration,
the vocabulary and its hash, named parameter tensors for the live and
momentum encoders, both negative queues, optimizer state, the torch rng
state, and the step counter.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import torch

from .contrastive import ContrastiveConfig, NegativeQueue
from .corpus import Vocabulary
from .encoder import Encoder, EncoderConfig, init_momentum
from .model import ModelBundle

CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class LoadedCheckpoint:
    bundle: ModelBundle
    contrastive: ContrastiveConfig
    code_queue: NegativeQueue | None
    query_queue: NegativeQueue | None
    optimizer_state: dict | None
    torch_rng_state: torch.Tensor | None
    step: int
    stage: str
    seed: int
    metadata: dict


def save_checkpoint(
    path: str | Path,
    bundle: ModelBundle,
    contrastive: ContrastiveConfig,
    stage: str,
    step: int,
    seed: int,
    code_queue: NegativeQueue | None = None,
    query_queue: NegativeQueue | None = None,
    optimizer: torch.optim.Optimizer | None = None,
    metadata: dict | None = None,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "version": CHECKPOINT_VERSION,
        "stage": stage,
        "step": int(step),
        "seed": int(seed),
        "encoder_config": dataclasses.asdict(bundle.encoder_config),
        "contrastive_config": dataclasses.asdict(contrastive),
        "code_max_len": bundle.code_max_len,
        "query_max_len": bundle.query_max_len,
        "vocab": bundle.vocab.to_json(),
        "vocab_hash": bundle.vocab.content_hash(),
        "shared": bundle.shared,
        "encoders": {
            "code": bundle.code_encoder.state_dict(),
            "query": None if bundle.shared else bundle.query_encoder.state_dict(),
        },
        "momentum": {
            "code": bundle.code_momentum.state_dict(),
            "query": None if bundle.shared else bundle.query_momentum.state_dict(),
        },
        "queues": {
            "code": code_queue.state_dict() if code_queue is not None else None,
            "query": query_queue.state_dict() if query_queue is not None else None,
        },
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "torch_rng": torch.get_rng_state(),
        "metadata": metadata or {},
        "fingerprint": bundle.fingerprint(),
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> LoadedCheckpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"no such checkpoint: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:  # noqa: BLE001 - surface as one error type
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version in {path}")

    vocab = Vocabulary.from_json(payload["vocab"])
    encoder_config = EncoderConfig(**payload["encoder_config"])
    contrastive = ContrastiveConfig(**payload["contrastive_config"])

    code_encoder = Encoder(encoder_config)
    code_encoder.load_state_dict(payload["encoders"]["code"])
    if payload["shared"]:
        query_encoder = code_encoder
    else:
        query_encoder = Encoder(encoder_config)
        query_encoder.load_state_dict(payload["encoders"]["query"])

    code_momentum = init_momentum(code_encoder)
    code_momentum.load_state_dict(payload["momentum"]["code"])
    if payload["shared"]:
        query_momentum = code_momentum
    else:
        query_momentum = init_momentum(query_encoder)
        query_momentum.load_state_dict(payload["momentum"]["query"])

    bundle = ModelBundle(
        code_encoder=code_encoder,
        query_encoder=query_encoder,
        code_momentum=code_momentum,
        query_momentum=query_momentum,
        vocab=vocab,
        encoder_config=encoder_config,
        code_max_len=int(payload["code_max_len"]),
        query_max_len=int(payload["query_max_len"]),
    )

    def _restore_queue(state: dict | None) -> NegativeQueue | None:
        if state is None:
            return None
        queue = NegativeQueue(
            capacity=state["entries"].shape[0],
            dim=state["entries"].shape[1],
            seed=payload["seed"],
            dtype=state["entries"].dtype,
        )
        queue.load_state_dict(state)
        return queue

    return LoadedCheckpoint(
        bundle=bundle,
        contrastive=contrastive,
        code_queue=_restore_queue(payload["queues"]["code"]),
        query_queue=_restore_queue(payload["queues"]["query"]),
        optimizer_state=payload.get("optimizer"),
        torch_rng_state=payload.get("torch_rng"),
        step=int(payload["step"]),
        stage=str(payload["stage"]),
        seed=int(payload["seed"]),
        metadata=dict(payload.get("metadata", {})),
    )
