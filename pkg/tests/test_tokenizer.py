"""Vocabulary loading, greedy segmentation and segmentation files."""

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simct.errors import (
    DuplicateTokenError,
    EmptyTokenError,
    GapOrOverlapError,
    TokenMismatchError,
    UnsegmentableTextError,
    VocabularyFormatError,
)
from simct.textbytes import escape_token, unescape_token
from simct.tokenizer import (
    Vocabulary,
    load_segmentation,
    load_vocabulary,
    segment_greedy,
)


class TestEscapes:
    def test_plain_round_trip(self):
        assert unescape_token(escape_token(b"happy")) == b"happy"
        assert escape_token(b"happy") == "happy"

    def test_newline_and_backslash(self):
        assert escape_token(b"a\nb\\c") == "a\\nb\\\\c"
        assert unescape_token("a\\nb\\\\c") == b"a\nb\\c"

    def test_raw_bytes(self):
        assert unescape_token("\\x00\\xff") == b"\x00\xff"
        assert escape_token(b"\xff\xfe") == "\\xff\\xfe"

    def test_malformed(self):
        for bad in ("\\", "\\x0", "\\xzz", "\\q"):
            with pytest.raises(ValueError):
                unescape_token(bad)

    @given(st.binary(max_size=24))
    def test_round_trip_any_bytes(self, data):
        assert unescape_token(escape_token(data)) == data


class TestVocabulary:
    def test_direct_construction(self):
        vocab = Vocabulary([b"ha", b"pp", b"y"])
        assert len(vocab) == 3
        assert vocab.id_of == {b"ha": 0, b"pp": 1, b"y": 2}

    def test_duplicate_rejected(self):
        with pytest.raises(DuplicateTokenError):
            Vocabulary([b"a", b"a"])

    def test_empty_rejected(self):
        with pytest.raises(EmptyTokenError):
            Vocabulary([b"a", b""])


class TestLoadVocabulary:
    def test_lines_format(self, tmp_path):
        path = tmp_path / "v.txt"
        path.write_text("ha\npp\ny\n")
        vocab = load_vocabulary(path, "lines")
        assert vocab.tokens == (b"ha", b"pp", b"y")

    def test_lines_escapes(self, tmp_path):
        path = tmp_path / "v.txt"
        path.write_text("a\\nb\n\\\\\n\\x41\n")
        vocab = load_vocabulary(path, "lines")
        assert vocab.tokens == (b"a\nb", b"\\", b"A")

    def test_json_format(self, tmp_path):
        path = tmp_path / "v.json"
        path.write_text(json.dumps(["ha", "pp", "y"]))
        vocab = load_vocabulary(path, "json")
        assert vocab.tokens == (b"ha", b"pp", b"y")

    def test_duplicate_names_line(self, tmp_path):
        path = tmp_path / "v.txt"
        path.write_text("a\nb\na\n")
        with pytest.raises(DuplicateTokenError, match=r":3: duplicate"):
            load_vocabulary(path, "lines")

    def test_empty_token_rejected(self, tmp_path):
        path = tmp_path / "v.txt"
        path.write_text("a\n\nb\n")
        with pytest.raises(EmptyTokenError, match=":2"):
            load_vocabulary(path, "lines")

    def test_bad_escape_names_line(self, tmp_path):
        path = tmp_path / "v.txt"
        path.write_text("ok\n\\q\n")
        with pytest.raises(VocabularyFormatError, match=":2"):
            load_vocabulary(path, "lines")

    def test_large_file_count_oracle(self, tmp_path):
        path = tmp_path / "big.txt"
        path.write_text("".join(f"tok{i}\n" for i in range(50_000)))
        expected = len(path.read_text().splitlines())
        vocab = load_vocabulary(path, "lines")
        assert len(vocab) == expected == 50_000
        assert vocab.id_of[b"tok49999"] == 49_999


class TestSegmentGreedy:
    def test_longest_match_wins(self):
        # hand trace: hap (3) beats ha (2) at offset 0, then py
        vocab = Vocabulary([b"h", b"a", b"p", b"y", b"ha", b"hap", b"py"])
        seg = segment_greedy(vocab, b"happy")
        assert seg.token_bytes() == (b"hap", b"py")

    def test_longest_match_alternative_vocab(self):
        # hand trace: ha at 0, pp at 2, y at 4
        vocab = Vocabulary([b"h", b"a", b"p", b"y", b"ha", b"pp"])
        seg = segment_greedy(vocab, b"happy")
        assert seg.token_bytes() == (b"ha", b"pp", b"y")

    def test_single_byte_vocab(self):
        vocab = Vocabulary([bytes([b]) for b in range(256)])
        seg = segment_greedy(vocab, b"ab")
        assert seg.token_bytes() == (b"a", b"b")

    def test_unsegmentable(self):
        vocab = Vocabulary([b"a", b"bb"])
        with pytest.raises(UnsegmentableTextError) as info:
            segment_greedy(vocab, b"abc")
        assert info.value.offset == 1  # "bb" does not match at offset 1

    def test_empty_text(self):
        vocab = Vocabulary([b"a"])
        seg = segment_greedy(vocab, b"")
        assert seg.spans == ()
        assert seg.boundaries == (0,)

    def test_determinism(self):
        vocab = Vocabulary([b"a", b"b", b"ab", b"ba", b"aba"])
        first = segment_greedy(vocab, b"ababab")
        second = segment_greedy(vocab, b"ababab")
        assert first.spans == second.spans

    @given(
        st.lists(st.sampled_from(list(b"abcd")), max_size=64).map(bytes),
        st.randoms(),
    )
    @settings(max_examples=200, deadline=None)
    def test_round_trip_property(self, text, pyrandom):
        extras = []
        for _ in range(pyrandom.randint(0, 8)):
            size = pyrandom.randint(2, 4)
            extras.append(bytes(pyrandom.choice(b"abcd") for _ in range(size)))
        tokens = [b"a", b"b", b"c", b"d"]
        for extra in extras:
            if extra not in tokens:
                tokens.append(extra)
        seg = segment_greedy(Vocabulary(tokens), text)
        assert b"".join(seg.token_bytes()) == text
        assert seg.boundaries[-1] == len(text)


class TestLoadSegmentation:
    def test_valid(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text(json.dumps({"text": "happy", "tokens": ["hap", "py"]}))
        seg = load_segmentation(path)
        assert seg.token_bytes() == (b"hap", b"py")
        assert seg.text == b"happy"

    def test_gap(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text(json.dumps({"text": "happy", "tokens": ["hap", "p"]}))
        with pytest.raises(GapOrOverlapError):
            load_segmentation(path)

    def test_token_mismatch(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text(json.dumps({"text": "happy", "tokens": ["hap", "qy"]}))
        with pytest.raises(TokenMismatchError):
            load_segmentation(path)

    def test_identity_case(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text(json.dumps({"text": "ab", "tokens": ["ab"]}))
        seg = load_segmentation(path)
        assert len(seg.spans) == 1
        assert seg.spans[0].start == 0 and seg.spans[0].end == 2

    def test_overrun(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text(json.dumps({"text": "ab", "tokens": ["ab", "c"]}))
        with pytest.raises(GapOrOverlapError):
            load_segmentation(path)
