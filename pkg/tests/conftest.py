import time
from pathlib import Path

import numpy as np
import pytest
import torch

from attnhtr import (AttentionConfig, CorpusLexicon, DecoderConfig, EncoderConfig,
                     FusionConfig, TrainConfig, generate_dataset, train)
from attnhtr.toytasks import dejavu_fonts


@pytest.fixture(scope="session")
def fontset():
    return dejavu_fonts()


@pytest.fixture(scope="session")
def font_file(fontset):
    return fontset.font_files[0]


def small_train_config(seed: int, epochs: int, **kwargs) -> TrainConfig:
    """Desk-scale recognizer config shared by the training tests."""
    defaults = dict(
        learning_rate=1e-3, batch_size=32, epochs=epochs, dropout=0.0,
        label_smoothing=0.0, augment_probability=0.0, seed=seed, patience=1000,
        encoder=EncoderConfig(backbone="small", positional_mode="recurrent",
                              feature_dim=96, recurrent_layers=1, input_height=64),
        attention=AttentionConfig(variant="content"),
        decoder=DecoderConfig(state_dim=96, layers=1, embedding_dim=32),
        fusion=FusionConfig(mode="none"),
    )
    defaults.update(kwargs)
    return TrainConfig(**defaults)


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory, fontset):
    """Train a small recognizer to memorize 32 synthetic word images.

    Shared by the overfit acceptance criterion and the attention
    reading-order check.  Records the wall-clock training time on a
    single CPU thread.
    """
    root = tmp_path_factory.mktemp("overfit")
    words = ("an", "en", "nan", "mon", "once", "mean", "name", "cane")
    lex = CorpusLexicon(words=words, source="overfit")
    manifest = generate_dataset(lex, fontset, 32, None, seed=5, out_dir=root / "data")

    cfg = small_train_config(seed=1, epochs=150, patience=15,
                             checkpoint_dir=str(root / "ckpt"))
    old_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    start = time.time()
    try:
        ckpt = train(cfg, manifest, manifest)
    finally:
        torch.set_num_threads(old_threads)
    elapsed = time.time() - start
    return {
        "checkpoint": ckpt,
        "checkpoint_path": Path(root / "ckpt" / "best.pt"),
        "manifest": manifest,
        "elapsed": elapsed,
        "root": root,
    }
