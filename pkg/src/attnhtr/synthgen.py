"""Synthetic word-image generation from electronic fonts and a text corpus.

A lexicon of unique words is extracted from free-form text, then each
sample pairs a uniformly drawn word with a uniformly drawn font, renders
it dark-on-light, and optionally pushes it through the augmentation
pipeline.  The manifest format written here is the same TSV the real
datasets use, so pre-training and fine-tuning share one loader.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from fontTools.ttLib import TTFont
from PIL import Image, ImageDraw, ImageFont

from .augment import AugmentConfig, apply_pipeline, derive_seed
from .errors import EmptyWord, GlyphMissing, InvalidConfig

log = logging.getLogger(__name__)

_INK_THRESHOLD = 250  # uint8 values below this count as ink
_CROP_MARGIN = 4      # pixels of white margin at the output scale


@dataclass(frozen=True)
class CorpusLexicon:
    """Unique, whitespace-free words in first-appearance order."""

    words: Tuple[str, ...]
    source: str = "corpus"

    def __len__(self) -> int:
        return len(self.words)


@dataclass(frozen=True)
class FontSet:
    font_files: Tuple[str, ...]

    @property
    def count(self) -> int:
        return len(self.font_files)

    @classmethod
    def from_dir(cls, directory: Union[str, Path]) -> "FontSet":
        directory = Path(directory)
        files = sorted(
            str(p) for p in directory.glob("*")
            if p.suffix.lower() in (".ttf", ".otf", ".ttc")
        )
        if not files:
            raise InvalidConfig(f"no font files found in {directory}")
        return cls(font_files=tuple(files))

    @classmethod
    def from_files(cls, files: Sequence[Union[str, Path]]) -> "FontSet":
        if not files:
            raise InvalidConfig("font set needs at least one file")
        return cls(font_files=tuple(str(f) for f in files))


def extract_lexicon(stream: Union[str, Iterable[str]], source: str = "corpus") -> CorpusLexicon:
    """Whitespace-tokenize a text stream into a deduplicated lexicon.

    Accents and punctuation-bearing tokens are preserved as-is.  An empty
    stream yields an empty lexicon with a logged warning.
    """
    if isinstance(stream, str):
        stream = [stream]
    seen = dict()
    for chunk in stream:
        for token in chunk.split():
            if token and token not in seen:
                seen[token] = None
    if not seen:
        log.warning("extract_lexicon: stream %r produced an empty lexicon", source)
    return CorpusLexicon(words=tuple(seen), source=source)


@lru_cache(maxsize=1024)
def _font_codepoints(path: str) -> frozenset:
    try:
        font = TTFont(path, lazy=True, fontNumber=0)
        try:
            cmap = font.getBestCmap()
        finally:
            font.close()
    except Exception as exc:
        raise InvalidConfig(f"cannot load font {path!r}: {exc}") from exc
    return frozenset(cmap)


@lru_cache(maxsize=1024)
def _load_font(path: str, size: int) -> ImageFont.FreeTypeFont:
    return ImageFont.truetype(path, size)


def font_covers(path: str, word: str) -> bool:
    cps = _font_codepoints(path)
    return all(ord(ch) in cps for ch in word)


def render_word(word: str, font: Union[str, Path], target_height: int = 64, seed: int = 0) -> np.ndarray:
    """Render a word as dark ink on a light background.

    The glyph run is tightly cropped horizontally, padded by a fixed
    margin, and scaled so the output height equals ``target_height``.
    Raises :class:`EmptyWord` for an empty string and
    :class:`GlyphMissing` when the font lacks any requested character.
    """
    if not word:
        raise EmptyWord("cannot render an empty word")
    font = str(font)
    cps = _font_codepoints(font)
    for ch in word:
        if ord(ch) not in cps:
            raise GlyphMissing(ch, font)

    rng = np.random.default_rng(seed)
    size = int(rng.integers(44, 53))
    pil_font = _load_font(font, size)
    x0, y0, x1, y1 = pil_font.getbbox(word)
    width, height = max(x1 - x0, 1), max(y1 - y0, 1)
    pad = size // 2
    canvas = Image.new("L", (width + 2 * pad, height + 2 * pad), 255)
    ImageDraw.Draw(canvas).text((pad - x0, pad - y0), word, font=pil_font, fill=0)
    arr = np.asarray(canvas)

    ink_rows = np.flatnonzero((arr < _INK_THRESHOLD).any(axis=1))
    ink_cols = np.flatnonzero((arr < _INK_THRESHOLD).any(axis=0))
    if ink_rows.size == 0 or ink_cols.size == 0:
        raise GlyphMissing(word[0], font)
    crop = arr[ink_rows[0]:ink_rows[-1] + 1, ink_cols[0]:ink_cols[-1] + 1]

    inner = max(target_height - 2 * _CROP_MARGIN, 1)
    scale = inner / crop.shape[0]
    new_w = max(int(round(crop.shape[1] * scale)), 1)
    resized = Image.fromarray(crop).resize((new_w, inner), Image.BILINEAR)
    out = Image.new("L", (new_w + 2 * _CROP_MARGIN, target_height), 255)
    out.paste(resized, (_CROP_MARGIN, _CROP_MARGIN))
    return np.asarray(out, dtype=np.float64) / 255.0


def sample_plan(lex: CorpusLexicon, fonts: FontSet, n: int, seed: int) -> List[Tuple[str, str]]:
    """Uniform (word, font) pairs; split out so sampling is testable alone."""
    if n < 1:
        raise InvalidConfig(f"n must be >= 1, got {n}")
    if len(lex) == 0:
        raise InvalidConfig("lexicon is empty")
    rng = np.random.default_rng(seed)
    word_idx = rng.integers(0, len(lex.words), size=n)
    font_idx = rng.integers(0, fonts.count, size=n)
    return [(lex.words[wi], fonts.font_files[fi]) for wi, fi in zip(word_idx, font_idx)]


def generate_dataset(lex: CorpusLexicon, fonts: FontSet, n: int,
                     aug: Optional[AugmentConfig], seed: int,
                     out_dir: Union[str, Path], target_height: int = 64) -> Path:
    """Write ``n`` rendered word images plus a TSV manifest; returns the manifest path.

    Deterministic under ``seed``.  If a font lacks a glyph the font is
    resampled up to 10 times; after that the word is skipped with a
    logged warning (so pathological font sets may yield fewer than ``n``
    rows).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plan = sample_plan(lex, fonts, n, seed)
    resample_rng = np.random.default_rng(derive_seed(seed, 1))

    rows = []
    for i, (word, font) in enumerate(plan):
        image = None
        for _ in range(10):
            try:
                image = render_word(word, font, target_height=target_height, seed=derive_seed(seed, i, 0))
                break
            except GlyphMissing:
                font = fonts.font_files[int(resample_rng.integers(0, fonts.count))]
        if image is None:
            log.warning("skipping %r: no sampled font covers it", word)
            continue
        if aug is not None:
            image = apply_pipeline(image, aug, derive_seed(seed, i, 1))
        name = f"img_{i:06d}.png"
        Image.fromarray(np.round(image * 255.0).astype(np.uint8)).save(out_dir / name)
        rows.append(f"{name}\t{word}")

    manifest = out_dir / "manifest.tsv"
    manifest.write_text("\n".join(rows) + ("\n" if rows else ""), encoding="utf-8")
    return manifest
