import pytest
from hypothesis import given
from hypothesis import strategies as st

from attnhtr.errors import EmptyLexicon
from attnhtr.lexicon import Lexicon, constrain
from attnhtr.metrics import build_report


def test_member_returned_unchanged():
    lex = Lexicon.from_words(["alpha", "beta"])
    assert constrain("alpha", lex) == "alpha"


def test_nearest_word_wins():
    lex = Lexicon.from_words(["currence", "century"])
    assert constrain("curluce", lex) == "currence"


def test_tie_breaks_lexicographically():
    lex = Lexicon.from_words(["aa", "ba"])
    assert constrain("ab", lex) == "aa"  # both distance 1


def test_empty_lexicon():
    with pytest.raises(EmptyLexicon):
        Lexicon.from_words([])


def test_from_file(tmp_path):
    path = tmp_path / "lex.txt"
    path.write_text("one\ntwo\n\nthrée\n", encoding="utf-8")
    lex = Lexicon.from_file(path)
    assert lex.words == frozenset({"one", "two", "thrée"})


LEX_WORDS = ("mare", "mole", "pony", "zebra")
lex_strategy = st.text(alphabet="amorleponyzeb", max_size=8)


@given(lex_strategy)
def test_output_always_in_lexicon(hyp):
    lex = Lexicon.from_words(LEX_WORDS)
    assert constrain(hyp, lex) in lex.words


@given(lex_strategy)
def test_idempotent(hyp):
    lex = Lexicon.from_words(LEX_WORDS)
    once = constrain(hyp, lex)
    assert constrain(once, lex) == once


def test_controlled_single_error_set_recovers_exactly():
    # lexicon words are pairwise far apart, hypotheses within one edit
    lex = Lexicon.from_words(["aaaa", "bbbb", "cccc"])
    pairs = [("aaaa", "aaba"), ("bbbb", "bbb"), ("cccc", "ccccc"), ("aaaa", "aaaa")]
    constrained = [(f"s{i}", ref, constrain(hyp, lex)) for i, (ref, hyp) in enumerate(pairs)]
    report = build_report(constrained)
    assert report.aggregate_wer == 0.0
