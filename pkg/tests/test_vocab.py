import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from attnhtr.errors import EmptyCorpus, UnknownCharacter
from attnhtr.vocab import Vocabulary, build_vocabulary, decode, encode


def test_build_counts_specials():
    v = build_vocabulary(["ab", "ba"])
    assert v.size == 5  # GO, END, PAD, a, b


def test_build_empty_corpus():
    with pytest.raises(EmptyCorpus):
        build_vocabulary([])
    with pytest.raises(EmptyCorpus):
        build_vocabulary(["", ""])


def test_accented_characters_kept():
    v = build_vocabulary(["café"])
    assert "é" in v.char_to_index


def test_special_indices_fixed():
    v = build_vocabulary(["xyz"])
    assert (v.go_index, v.end_index, v.pad_index) == (0, 1, 2)
    indices = sorted(v.index_to_char) + [v.go_index, v.end_index, v.pad_index]
    assert sorted(indices) == list(range(v.size))


def test_mappings_are_inverses():
    v = build_vocabulary(["hello world"])
    for ch, idx in v.char_to_index.items():
        assert v.index_to_char[idx] == ch


def test_encode_basic():
    v = build_vocabulary(["ab"])
    assert encode("ab", v) == [3, 4, 1]


def test_encode_empty_string_is_end():
    v = build_vocabulary(["ab"])
    assert encode("", v) == [v.end_index]


def test_encode_unknown_character_position():
    v = build_vocabulary(["a"])
    with pytest.raises(UnknownCharacter) as err:
        encode("a✦", v)
    assert err.value.char == "✦"
    assert err.value.position == 1


def test_decode_basic():
    v = build_vocabulary(["ab"])
    assert decode([3, 4, 1], v) == "ab"


def test_decode_stops_at_first_end():
    v = build_vocabulary(["ab"])
    assert decode([3, 1, 4], v) == "a"


def test_decode_immediate_end():
    v = build_vocabulary(["ab"])
    assert decode([1], v) == ""


def test_decode_skips_go_and_pad():
    v = build_vocabulary(["ab"])
    assert decode([0, 3, 2, 4, 1], v) == "ab"


def test_deterministic_and_order_independent():
    a = build_vocabulary(["abc", "def"])
    b = build_vocabulary(["def", "abc"])
    assert a.char_to_index == b.char_to_index


def test_json_round_trip():
    v = build_vocabulary(["héllo"])
    payload = json.loads(json.dumps(v.to_json_dict()))
    restored = Vocabulary.from_json_dict(payload)
    assert restored.char_to_index == v.char_to_index
    assert payload["go"] == 0 and payload["end"] == 1 and payload["pad"] == 2


ALPHABET = "abcé X9"


@given(st.text(alphabet=ALPHABET, max_size=30))
def test_round_trip_property(text):
    v = build_vocabulary([ALPHABET])
    assert decode(encode(text, v), v) == text
