"""Desk-scale synthetic tasks with a controlled language prior.

The "biased bigram" task builds words over two disjoint letter classes,
{a, e, n, r} and {o, c, m, u}, containing confusable pairs under blur
(a/o, e/c, n/m).  Within a word only one class appears and each letter
allows just two successors, so a character model trained on grammar text
carries real disambiguation signal that the degraded images alone do
not.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set

import numpy as np

from .augment import AugmentConfig
from .synthgen import CorpusLexicon, FontSet, generate_dataset

# Two successors per letter; the two classes never mix inside a word.
BIGRAM_SUCCESSORS: Dict[str, str] = {
    "n": "ae", "a": "nr", "e": "rn", "r": "ea",
    "m": "oc", "o": "mu", "c": "um", "u": "co",
}
LETTER_CLASSES = ("aenr", "ocmu")


def sample_word(rng: np.random.Generator, min_len: int = 3, max_len: int = 6) -> str:
    length = int(rng.integers(min_len, max_len + 1))
    cls = LETTER_CLASSES[int(rng.integers(0, 2))]
    out = [cls[int(rng.integers(0, len(cls)))]]
    for _ in range(length - 1):
        nxt = BIGRAM_SUCCESSORS[out[-1]]
        out.append(nxt[int(rng.integers(0, len(nxt)))])
    return "".join(out)


def sample_unique_words(n: int, seed: int, min_len: int = 3, max_len: int = 6,
                        exclude: Optional[Set[str]] = None) -> List[str]:
    rng = np.random.default_rng(seed)
    exclude = set(exclude or ())
    words: List[str] = []
    seen = set()
    while len(words) < n:
        w = sample_word(rng, min_len, max_len)
        if w not in seen and w not in exclude:
            seen.add(w)
            words.append(w)
    return words


def grammar_corpus(n_chars: int, seed: int) -> str:
    """Running text from the grammar, for LM pre-training."""
    rng = np.random.default_rng(seed)
    chunks: List[str] = []
    total = 0
    while total < n_chars:
        w = sample_word(rng)
        chunks.append(w)
        total += len(w) + 1
    return " ".join(chunks)


def heavy_noise_config() -> AugmentConfig:
    """Degradation strong enough to make the confusable pairs ambiguous."""
    return AugmentConfig(
        blur_sigma_range=(1.5, 2.6),
        sharpen_amount_range=(0.0, 0.0),
        elastic_grid=(4, 4),
        elastic_magnitude_range=(1.5, 3.5),
        shear_range=(-8.0, 8.0),
        rotation_range=(-3.0, 3.0),
        translate_range=(0.0, 0.02),
        scale_range=(0.9, 1.1),
        gamma_range=(0.7, 1.5),
        background_blend_range=(0.45, 0.7),
        apply_probability=1.0,
    )


def dejavu_fonts() -> FontSet:
    """Bundled DejaVu faces (via matplotlib); they cover the task alphabet."""
    import matplotlib

    font_dir = Path(matplotlib.get_data_path()) / "fonts" / "ttf"
    files = sorted(str(p) for p in font_dir.glob("DejaVu*.ttf"))
    return FontSet.from_files(files)


def build_benchmark_data(root: Path, seed: int = 0, n_train: int = 500,
                         n_valid: int = 100, n_test: int = 200,
                         fonts: Optional[FontSet] = None) -> Dict[str, Path]:
    """Render train/valid/test manifests plus an LM corpus file.

    Train and valid share a word pool; test words are disjoint from it,
    so any benefit on test has to come from the grammar, not lookup.
    """
    root = Path(root)
    fonts = fonts or dejavu_fonts()
    noise = heavy_noise_config()

    train_pool = sample_unique_words(150, seed=seed)
    test_pool = sample_unique_words(80, seed=seed + 1, exclude=set(train_pool))
    train_lex = CorpusLexicon(words=tuple(train_pool), source="bigram-train")
    test_lex = CorpusLexicon(words=tuple(test_pool), source="bigram-test")

    paths = {
        "train": generate_dataset(train_lex, fonts, n_train, noise, seed + 10, root / "train"),
        "valid": generate_dataset(train_lex, fonts, n_valid, noise, seed + 20, root / "valid"),
        "test": generate_dataset(test_lex, fonts, n_test, noise, seed + 30, root / "test"),
    }
    corpus_path = root / "lm_corpus.txt"
    corpus_path.write_text(grammar_corpus(50_000, seed + 40), encoding="utf-8")
    paths["lm_corpus"] = corpus_path
    return paths
