"""Exception types shared across the toolkit."""


class EmptyCorpus(ValueError):
    """A text corpus contained no usable characters."""


class UnknownCharacter(KeyError):
    """A character is not covered by the vocabulary."""

    def __init__(self, char: str, position: int):
        super().__init__(f"character {char!r} at position {position} is not in the vocabulary")
        self.char = char
        self.position = position


class InvalidConfig(ValueError):
    """A configuration value violates its declared invariants."""


class EmptyWord(ValueError):
    """A word to be rendered is empty."""


class GlyphMissing(ValueError):
    """A font does not provide a glyph for a requested character."""

    def __init__(self, char: str, font_path: str):
        super().__init__(f"font {font_path!r} has no glyph for {char!r}")
        self.char = char
        self.font_path = font_path


class ImageTooNarrow(ValueError):
    """Input image is too narrow to produce a single feature column."""


class OddFeatureDim(ValueError):
    """Sinusoidal positional codes require an even feature dimension."""


class DimensionMismatch(ValueError):
    """Tensor shapes are inconsistent with the declared parameter sizes."""


class IndexOutOfRange(IndexError):
    """A token index lies outside the vocabulary."""


class EmptyReference(ValueError):
    """Error-rate metrics need a non-empty reference."""


class EmptyLexicon(ValueError):
    """Lexicon-constrained decoding needs a non-empty lexicon."""


class MissingImage(FileNotFoundError):
    """A manifest row points at an image file that does not exist."""

    def __init__(self, path: str, row: int):
        super().__init__(f"manifest row {row}: image not found: {path}")
        self.path = path
        self.row = row


class MalformedRow(ValueError):
    """A manifest row does not have the expected column layout."""


class VocabularyMismatch(ValueError):
    """Training transcriptions contain characters outside the vocabulary."""


class DivergenceDetected(RuntimeError):
    """Training loss became non-finite."""
