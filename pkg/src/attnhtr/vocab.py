"""Character vocabulary with GO/END/PAD specials and text<->index mapping.

The vocabulary is always derived from a corpus of transcriptions (training
manifest plus any extra characters the user wants to reserve).  Special
token indices are fixed (GO=0, END=1, PAD=2) so that checkpoints stay
portable across runs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence

from .errors import EmptyCorpus, IndexOutOfRange, UnknownCharacter

GO = 0
END = 1
PAD = 2
NUM_SPECIALS = 3


@dataclass(frozen=True)
class Vocabulary:
    """Immutable bidirectional mapping between characters and indices.

    Indices are contiguous in ``[0, size)``; the first three are the GO,
    END and PAD tokens, followed by the alphabet sorted by codepoint.
    """

    chars: tuple
    char_to_index: Dict[str, int] = field(repr=False)
    index_to_char: Dict[int, str] = field(repr=False)

    go_index: int = GO
    end_index: int = END
    pad_index: int = PAD

    @property
    def size(self) -> int:
        return NUM_SPECIALS + len(self.chars)

    def __contains__(self, char: str) -> bool:
        return char in self.char_to_index

    def to_json_dict(self) -> dict:
        """Checkpoint representation: {"chars": [...], "go": 0, "end": 1, "pad": 2}."""
        return {"chars": list(self.chars), "go": GO, "end": END, "pad": PAD}

    @classmethod
    def from_json_dict(cls, payload: dict) -> "Vocabulary":
        return _make_vocabulary(tuple(payload["chars"]))


def _make_vocabulary(chars: tuple) -> Vocabulary:
    c2i = {c: NUM_SPECIALS + i for i, c in enumerate(chars)}
    i2c = {i: c for c, i in c2i.items()}
    return Vocabulary(chars=chars, char_to_index=c2i, index_to_char=i2c)


def build_vocabulary(corpus: Iterable[str], extra_chars: str = "") -> Vocabulary:
    """Collect every distinct character of ``corpus`` into a vocabulary.

    Ordering is deterministic: specials first, then characters sorted by
    codepoint.  Raises :class:`EmptyCorpus` when no characters are found.
    """
    charset = set(extra_chars)
    for text in corpus:
        charset.update(text)
    if not charset:
        raise EmptyCorpus("corpus contains no characters")
    return _make_vocabulary(tuple(sorted(charset)))


def encode(text: str, v: Vocabulary) -> List[int]:
    """Map ``text`` to indices terminated by END.

    GO is not prepended; the decoder loop feeds it itself.  The empty
    string encodes to ``[END]``.
    """
    indices = []
    for pos, ch in enumerate(text):
        idx = v.char_to_index.get(ch)
        if idx is None:
            raise UnknownCharacter(ch, pos)
        indices.append(idx)
    indices.append(v.end_index)
    return indices


def decode(seq: Sequence[int], v: Vocabulary) -> str:
    """Map indices back to text, stopping at the first END.

    GO and PAD indices are skipped; out-of-range indices raise
    :class:`IndexOutOfRange`.
    """
    out = []
    for idx in seq:
        idx = int(idx)
        if idx == v.end_index:
            break
        if idx in (v.go_index, v.pad_index):
            continue
        ch = v.index_to_char.get(idx)
        if ch is None:
            raise IndexOutOfRange(f"index {idx} not in [0, {v.size})")
        out.append(ch)
    return "".join(out)
