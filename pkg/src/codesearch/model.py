"""Model bundle: live and momentum encoders for both modalities, the
vocabulary they were built against, and the sequence length settings."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .corpus import Vocabulary
from .encoder import Encoder, EncoderConfig, init_momentum
from .utils import derive_rng, sha256_hex


@dataclass
class ModelBundle:
    code_encoder: Encoder
    query_encoder: Encoder
    code_momentum: Encoder
    query_momentum: Encoder
    vocab: Vocabulary
    encoder_config: EncoderConfig
    code_max_len: int
    query_max_len: int

    @property
    def shared(self) -> bool:
        return self.code_encoder is self.query_encoder

    def live_encoders(self) -> list[Encoder]:
        if self.shared:
            return [self.code_encoder]
        return [self.code_encoder, self.query_encoder]

    def encoder_pairs(self) -> list[tuple[Encoder, Encoder]]:
        """Distinct (live, momentum) pairs, one entry when shared."""
        if self.shared:
            return [(self.code_encoder, self.code_momentum)]
        return [
            (self.code_encoder, self.code_momentum),
            (self.query_encoder, self.query_momentum),
        ]

    def trainable_parameters(self):
        for enc in self.live_encoders():
            yield from enc.parameters()

    def eval_mode(self) -> None:
        for enc in self.live_encoders():
            enc.eval()

    def fingerprint(self) -> str:
        """Hash of the live encoder parameters plus the vocabulary.

        Index files carry this value so a stale index (built against a
        different checkpoint or vocabulary) is detected before search.
        """
        hasher_parts: list[bytes] = [self.vocab.content_hash().encode("ascii")]
        for enc in self.live_encoders():
            for name, param in sorted(enc.state_dict().items()):
                hasher_parts.append(name.encode("utf-8"))
                hasher_parts.append(
                    param.detach().cpu().contiguous().to(torch.float32).numpy().tobytes()
                )
        return sha256_hex(b"".join(hasher_parts))


def build_bundle(
    vocab: Vocabulary,
    encoder_config: EncoderConfig,
    code_max_len: int = 128,
    query_max_len: int = 256,
    seed: int = 0,
) -> ModelBundle:
    """Construct seeded encoders and value-equal momentum copies.

    With shared parameters one encoder and one momentum encoder serve
    both modalities; the sharing flag mirrors onto the momentum side.
    """
    if encoder_config.vocab_size != len(vocab):
        raise ValueError(
            f"encoder vocab_size {encoder_config.vocab_size} != vocabulary size {len(vocab)}"
        )
    if max(code_max_len, query_max_len) > encoder_config.max_len:
        raise ValueError("sequence lengths exceed the positional table size")
    init_seed = int(derive_rng(seed, "model-init").integers(2**31 - 1))
    torch.manual_seed(init_seed)
    code_encoder = Encoder(encoder_config)
    if encoder_config.share_code_query:
        query_encoder = code_encoder
        code_momentum = init_momentum(code_encoder)
        query_momentum = code_momentum
    else:
        query_encoder = Encoder(encoder_config)
        code_momentum = init_momentum(code_encoder)
        query_momentum = init_momentum(query_encoder)
    return ModelBundle(
        code_encoder=code_encoder,
        query_encoder=query_encoder,
        code_momentum=code_momentum,
        query_momentum=query_momentum,
        vocab=vocab,
        encoder_config=encoder_config,
        code_max_len=code_max_len,
        query_max_len=query_max_len,
    )
