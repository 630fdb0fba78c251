from hypothesis import given
from hypothesis import strategies as st

from ragkit.tokenize import tokenize


def test_apostrophe_split():
    assert tokenize("Don't stop") == ["don", "t", "stop"]


def test_empty():
    assert tokenize("") == []


def test_punctuation_and_digits():
    assert tokenize("Big Air Snowboarding, 2018!") == ["big", "air", "snowboarding", "2018"]


def test_lowercasing_unicode():
    assert tokenize("Äpfel ÜBER") == ["äpfel", "über"]


def test_no_empty_tokens():
    assert all(tokenize("a--b  !! c") )
    assert tokenize("!!!") == []


@given(st.text(max_size=200))
def test_idempotent_on_own_output(text):
    tokens = tokenize(text)
    assert tokenize(" ".join(tokens)) == tokens


@given(st.text(max_size=100), st.text(max_size=100))
def test_concatenation_distributes(a, b):
    assert tokenize(a + " " + b) == tokenize(a) + tokenize(b)
