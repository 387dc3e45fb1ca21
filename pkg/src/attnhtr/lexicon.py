"""Post-hoc lexicon constraint: snap a hypothesis to its nearest dictionary word.

The scan is exhaustive, which is fine for desk-scale lexicons (<= ~1e5
words).  Matching is case-sensitive, consistent with the vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import FrozenSet, Iterable

from .errors import EmptyLexicon
from .metrics import levenshtein


@dataclass(frozen=True)
class Lexicon:
    words: FrozenSet[str]
    name: str = "lexicon"

    def __post_init__(self):
        if not self.words:
            raise EmptyLexicon(f"lexicon {self.name!r} is empty")

    @classmethod
    def from_words(cls, words: Iterable[str], name: str = "lexicon") -> "Lexicon":
        return cls(words=frozenset(w for w in words if w), name=name)

    @classmethod
    def from_file(cls, path, name: str = None) -> "Lexicon":
        """Read a UTF-8 lexicon file, one word per line."""
        with open(path, encoding="utf-8") as fh:
            words = [line.strip() for line in fh]
        return cls.from_words(words, name=name or str(path))


def constrain(hypothesis: str, lex: Lexicon) -> str:
    """Return the lexicon word with minimal edit distance to ``hypothesis``.

    Ties break lexicographically; a hypothesis already in the lexicon is
    returned unchanged (distance zero).
    """
    if hypothesis in lex.words:
        return hypothesis
    best_word = None
    best_dist = None
    for word in sorted(lex.words):
        dist = levenshtein(hypothesis, word)
        if best_dist is None or dist < best_dist:
            best_word, best_dist = word, dist
    return best_word
