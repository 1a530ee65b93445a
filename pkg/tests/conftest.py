import subprocess
import sys
from pathlib import Path

import pytest
import torch

from codesearch.augment import AugmentationConfig
from codesearch.contrastive import ContrastiveConfig, NegativeQueue, PretrainState
from codesearch.corpus import Corpus, build_vocab
from codesearch.encoder import EncoderConfig
from codesearch.model import build_bundle
from codesearch.training import make_optimizer, TrainingConfig

from tests.synth import retrieval_corpus

torch.set_num_threads(min(4, torch.get_num_threads()))


REPO_ROOT = Path(__file__).resolve().parent.parent


@pytest.fixture(scope="session")
def demo_env(tmp_path_factory):
    """Demo corpus ingested, 0-step checkpoint trained, index built."""
    out = tmp_path_factory.mktemp("demo")
    result = subprocess.run(
        [sys.executable, str(REPO_ROOT / "scripts" / "build_demo.py"), "--out", str(out)],
        capture_output=True,
        text=True,
        cwd=REPO_ROOT,
    )
    assert result.returncode == 0, result.stderr
    return {
        "corpus": out / "corpus",
        "checkpoint": out / "run" / "checkpoint.pt",
        "index": out / "demo.idx",
    }


@pytest.fixture(scope="session")
def small_corpus() -> Corpus:
    return retrieval_corpus(n_train=64, n_test=16, seed=3, leak=0.0, concepts=32)


@pytest.fixture(scope="session")
def small_vocab(small_corpus):
    return build_vocab(small_corpus, 4096)


def make_tiny_state(
    vocab,
    corpus,
    batch_size: int = 4,
    queue_size: int = 8,
    hidden: int = 16,
    dtype: torch.dtype = torch.float64,
    seed: int = 0,
    temperature: float = 0.07,
    momentum: float = 0.999,
    dropout: float = 0.0,
) -> tuple[PretrainState, list]:
    """A double-precision miniature training state plus one batch."""
    enc_cfg = EncoderConfig(
        vocab_size=len(vocab), layers=1, hidden_dim=hidden, heads=2,
        ffn_dim=2 * hidden, dropout=dropout, max_len=64,
    )
    bundle = build_bundle(vocab, enc_cfg, code_max_len=48, query_max_len=32, seed=seed)
    if dtype is torch.float64:
        for enc in {id(e): e for e in [bundle.code_encoder, bundle.query_encoder,
                                       bundle.code_momentum, bundle.query_momentum]}.values():
            enc.double()
    con_cfg = ContrastiveConfig(
        temperature=temperature, momentum=momentum,
        queue_size=queue_size, batch_size=batch_size,
    )
    train_cfg = TrainingConfig(lr=1e-3, seed=seed)
    optimizer = make_optimizer(bundle, train_cfg)
    state = PretrainState(
        bundle=bundle,
        code_queue=NegativeQueue(queue_size, hidden, seed=seed, dtype=dtype),
        query_queue=NegativeQueue(queue_size, hidden, seed=seed + 1, dtype=dtype),
        optimizer=optimizer,
        contrastive=con_cfg,
        augmentation=AugmentationConfig(ratio=0.15, seed=seed),
        seed=seed,
    )
    batch = corpus.pairs_in("train")[:batch_size]
    return state, batch
