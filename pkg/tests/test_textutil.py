from hypothesis import given
from hypothesis import strategies as st

from claimlens.textutil import (
    estimate_tokens,
    normalize_for_match,
    overlap_score,
    sentence_texts,
    split_sentences,
    stable_hash,
    truncate_at_sentence,
)


def test_estimate_tokens_is_ceil_quarter():
    assert estimate_tokens("") == 0
    assert estimate_tokens("abcd") == 1
    assert estimate_tokens("abcde") == 2
    assert estimate_tokens("x" * 400) == 100


def test_stable_hash_is_16_hex_and_separator_sensitive():
    h = stable_hash("utterance", "actor", "a001")
    assert len(h) == 16
    assert int(h, 16) >= 0
    assert stable_hash("ab", "c") != stable_hash("a", "bc")
    assert stable_hash("x", "y") == stable_hash("x", "y")


def test_split_sentences_basic():
    text = "First sentence. Second one! Third? Fourth."
    assert sentence_texts(text) == [
        "First sentence.",
        "Second one!",
        "Third?",
        "Fourth.",
    ]


def test_split_sentences_keeps_closing_quote():
    text = "He said it was 'too high.' Everyone disagreed."
    assert sentence_texts(text) == ["He said it was 'too high.'", "Everyone disagreed."]


def test_split_sentences_single_sentence_no_terminator():
    assert sentence_texts("no terminator here") == ["no terminator here"]


@given(st.text(max_size=300))
def test_split_sentences_spans_are_ordered_and_in_bounds(text):
    spans = split_sentences(text)
    last_end = 0
    for start, end in spans:
        assert 0 <= start < end <= len(text)
        assert start >= last_end
        last_end = end
        chunk = text[start:end]
        assert chunk == chunk.strip()


def test_normalize_folds_quotes_case_and_punctuation():
    a = normalize_for_match("The Conservative government has ‘failed to get a grip’!")
    b = normalize_for_match("the conservative government has 'failed to get a grip'")
    assert a == b


def test_overlap_score_bounds_and_ordering():
    utterance = "migration levels are too high"
    exact = overlap_score(utterance, "He said migration levels are too high today.")
    partial = overlap_score(utterance, "Migration was discussed at length.")
    nothing = overlap_score(utterance, "Completely unrelated sentence.")
    assert exact == 1.0
    assert 0.0 < partial < exact
    assert nothing < 0.3


def test_truncate_at_sentence_boundary():
    text = "One two three four. Five six seven eight. Nine ten."
    truncated, flag = truncate_at_sentence(text, estimate_tokens("One two three four. Five six seven eight."))
    assert flag
    assert truncated == "One two three four. Five six seven eight."
    untouched, flag2 = truncate_at_sentence(text, 1000)
    assert not flag2
    assert untouched == text


def test_truncate_hard_cut_when_first_sentence_too_big():
    text = "a" * 100 + "."
    truncated, flag = truncate_at_sentence(text, 5)
    assert flag
    assert len(truncated) == 20
