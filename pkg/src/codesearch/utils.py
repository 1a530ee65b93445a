"""Small shared helpers: deterministic rng streams, hashing, timestamps."""

from __future__ import annotations

import datetime
import hashlib

import numpy as np


def derive_rng(seed: int, *path: object) -> np.random.Generator:
    """Deterministic generator for a (seed, *path) coordinate.

    Every consumer (augmentation per step per sample, shuffles per epoch,
    queue init, ...) derives its own stream this way, so nothing has to
    share or checkpoint a mutable generator.
    """
    entropy = [int(seed) & 0xFFFFFFFF]
    for part in path:
        if isinstance(part, str):
            digest = hashlib.sha256(part.encode("utf-8")).digest()
            entropy.append(int.from_bytes(digest[:4], "little"))
        else:
            entropy.append(int(part) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def utc_now_iso() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
