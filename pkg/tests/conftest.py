"""Shared fixtures: worked-example tokenizer pairs and the bundled models."""

import pytest

from simct.tokenizer import Vocabulary, segment_greedy


@pytest.fixture(scope="session")
def happy_vocabs():
    """Teacher splits 'happy' as hap|py, student as ha|pp|y."""
    teacher = Vocabulary([b"h", b"a", b"p", b"y", b"ha", b"hap", b"py"])
    student = Vocabulary([b"h", b"a", b"p", b"y", b"ha", b"pp"])
    return teacher, student


@pytest.fixture(scope="session")
def happy_segmentations(happy_vocabs):
    teacher, student = happy_vocabs
    return segment_greedy(teacher, b"happy"), segment_greedy(student, b"happy")


@pytest.fixture(scope="session")
def thecat_vocabs():
    """Teacher splits 'the cat' as the| cat, student as the| |cat."""
    teacher = Vocabulary([b"t", b"h", b"e", b" ", b"c", b"a", b"the", b" cat"])
    student = Vocabulary([b"t", b"h", b"e", b" ", b"c", b"a", b"the", b"cat"])
    return teacher, student


@pytest.fixture(scope="session")
def thecat_segmentations(thecat_vocabs):
    teacher, student = thecat_vocabs
    return segment_greedy(teacher, b"the cat"), segment_greedy(student, b"the cat")


@pytest.fixture(scope="session")
def bundled_teacher():
    from simct.synthetic import synthetic_teacher

    return synthetic_teacher()
