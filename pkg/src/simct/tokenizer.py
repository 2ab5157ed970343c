"""Byte-level vocabularies and deterministic segmentation.

Tokens are raw byte strings and all offsets are byte offsets into the
UTF-8 encoded text. Vocabulary entries may overlap arbitrarily (no
prefix-freeness is assumed); the built-in segmenter resolves overlaps by
greedy longest match. All operations here are pure functions of
immutable inputs and safe to call from any number of threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import (
    DuplicateTokenError,
    EmptyTokenError,
    GapOrOverlapError,
    TokenMismatchError,
    UnsegmentableTextError,
    VocabularyFormatError,
)
from .textbytes import unescape_token

VOCAB_FORMATS = ("lines", "json")


def _as_bytes(value: bytes | str) -> bytes:
    return value.encode("utf-8") if isinstance(value, str) else bytes(value)


class Vocabulary:
    """Ordered set of distinct, non-empty byte-string tokens.

    Ids are dense and follow input order: the i-th token has id i.
    Instances are immutable after construction and shareable read-only.
    """

    __slots__ = ("tokens", "id_of", "max_token_len")

    def __init__(self, tokens: Iterable[bytes | str]):
        toks: list[bytes] = []
        id_of: dict[bytes, int] = {}
        for i, raw in enumerate(tokens):
            tok = _as_bytes(raw)
            if not tok:
                raise EmptyTokenError(f"token at index {i} is empty")
            if tok in id_of:
                raise DuplicateTokenError(
                    f"duplicate token {tok!r} at index {i} (first seen at index {id_of[tok]})"
                )
            id_of[tok] = i
            toks.append(tok)
        self.tokens: tuple[bytes, ...] = tuple(toks)
        self.id_of: dict[bytes, int] = id_of
        self.max_token_len: int = max((len(t) for t in toks), default=0)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: bytes) -> bool:
        return _as_bytes(token) in self.id_of

    def surface(self, token_id: int) -> bytes:
        return self.tokens[token_id]

    def __repr__(self) -> str:
        return f"Vocabulary({len(self.tokens)} tokens)"


@dataclass(frozen=True)
class TokenSpan:
    """One token occurrence: id plus half-open byte range [start, end)."""

    token_id: int
    start: int
    end: int


class Segmentation:
    """A tokenization of ``text``: contiguous spans tiling [0, len(text)).

    The spans reconstruct the text exactly; each span's bytes equal the
    vocabulary token the span references.
    """

    __slots__ = ("text", "spans", "vocab")

    def __init__(self, text: bytes, spans: tuple[TokenSpan, ...], vocab: Vocabulary):
        text = bytes(text)
        pos = 0
        for i, span in enumerate(spans):
            if span.start != pos:
                raise GapOrOverlapError(
                    f"span {i} starts at {span.start}, expected {pos}"
                )
            if span.end <= span.start:
                raise GapOrOverlapError(f"span {i} is empty or reversed")
            if span.end > len(text):
                raise GapOrOverlapError(
                    f"span {i} ends at {span.end}, past text end {len(text)}"
                )
            expected = vocab.tokens[span.token_id]
            if text[span.start : span.end] != expected:
                raise TokenMismatchError(
                    f"span {i} covers {text[span.start:span.end]!r} but token id "
                    f"{span.token_id} is {expected!r}"
                )
            pos = span.end
        if pos != len(text):
            raise GapOrOverlapError(
                f"spans cover [0, {pos}) but text has {len(text)} bytes"
            )
        self.text = text
        self.spans = tuple(spans)
        self.vocab = vocab

    @property
    def boundaries(self) -> tuple[int, ...]:
        """All token boundary offsets, including 0 and len(text)."""
        return (0,) + tuple(s.end for s in self.spans)

    def token_ids(self) -> tuple[int, ...]:
        return tuple(s.token_id for s in self.spans)

    def token_bytes(self) -> tuple[bytes, ...]:
        return tuple(self.text[s.start : s.end] for s in self.spans)

    def __len__(self) -> int:
        return len(self.spans)

    def __repr__(self) -> str:
        return f"Segmentation({self.text!r}, {len(self.spans)} tokens)"


def load_vocabulary(path: str | Path, fmt: str = "lines") -> Vocabulary:
    """Read a vocabulary file; ids follow file order.

    ``lines`` files hold one escaped token per line (``\\n``, ``\\\\``,
    ``\\xHH``); ``json`` files hold a JSON array of strings.
    """
    if fmt not in VOCAB_FORMATS:
        raise VocabularyFormatError(f"unknown vocabulary format {fmt!r}")
    p = Path(path)
    tokens: list[bytes] = []
    seen: dict[bytes, int] = {}
    if fmt == "lines":
        raw = p.read_bytes()
        lines = raw.split(b"\n")
        if lines and lines[-1] == b"":
            lines.pop()  # trailing newline
        for lineno, line in enumerate(lines, start=1):
            try:
                tok = unescape_token(line)
            except ValueError as exc:
                raise VocabularyFormatError(f"{p}:{lineno}: {exc}") from exc
            if not tok:
                raise EmptyTokenError(f"{p}:{lineno}: empty token")
            if tok in seen:
                raise DuplicateTokenError(
                    f"{p}:{lineno}: duplicate token {tok!r} (first at line {seen[tok]})"
                )
            seen[tok] = lineno
            tokens.append(tok)
    else:
        try:
            entries = json.loads(p.read_text("utf-8"))
        except json.JSONDecodeError as exc:
            raise VocabularyFormatError(f"{p}: invalid JSON: {exc}") from exc
        if not isinstance(entries, list) or not all(isinstance(e, str) for e in entries):
            raise VocabularyFormatError(f"{p}: expected a JSON array of strings")
        for idx, entry in enumerate(entries):
            tok = entry.encode("utf-8")
            if not tok:
                raise EmptyTokenError(f"{p}: entry {idx} is empty")
            if tok in seen:
                raise DuplicateTokenError(
                    f"{p}: entry {idx} duplicates token {tok!r} (first at entry {seen[tok]})"
                )
            seen[tok] = idx
            tokens.append(tok)
    return Vocabulary(tokens)


def segment_greedy(vocab: Vocabulary, text: bytes | str) -> Segmentation:
    """Segment ``text`` by repeatedly emitting the longest matching token.

    Deterministic: identical (vocab, text) always yields identical spans.
    Raises UnsegmentableTextError if no vocabulary token matches at some
    position; vocabularies containing every single byte of the text are
    total.
    """
    data = _as_bytes(text)
    spans: list[TokenSpan] = []
    id_of = vocab.id_of
    pos = 0
    n = len(data)
    while pos < n:
        length = min(vocab.max_token_len, n - pos)
        token_id = None
        while length > 0:
            token_id = id_of.get(data[pos : pos + length])
            if token_id is not None:
                break
            length -= 1
        if token_id is None:
            raise UnsegmentableTextError(
                f"no vocabulary token matches text at byte offset {pos} "
                f"(next bytes: {data[pos:pos + 8]!r})",
                offset=pos,
            )
        spans.append(TokenSpan(token_id, pos, pos + length))
        pos += length
    return Segmentation(data, tuple(spans), vocab)


def load_segmentation(path: str | Path) -> Segmentation:
    """Read an externally produced segmentation and validate it.

    File format: JSON object ``{"text": string, "tokens": [string, ...]}``.
    The token list must tile the text exactly. Tokens form an implicit
    vocabulary in first-appearance order.
    """
    p = Path(path)
    try:
        doc = json.loads(p.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise VocabularyFormatError(f"{p}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "text" not in doc or "tokens" not in doc:
        raise VocabularyFormatError(f'{p}: expected {{"text": ..., "tokens": [...]}}')
    text = _as_bytes(doc["text"])
    token_list = [_as_bytes(t) for t in doc["tokens"]]
    for i, tok in enumerate(token_list):
        if not tok:
            raise EmptyTokenError(f"{p}: token {i} is empty")

    vocab_tokens: list[bytes] = []
    seen: set[bytes] = set()
    for tok in token_list:
        if tok not in seen:
            seen.add(tok)
            vocab_tokens.append(tok)
    vocab = Vocabulary(vocab_tokens)

    spans: list[TokenSpan] = []
    pos = 0
    for i, tok in enumerate(token_list):
        end = pos + len(tok)
        if end > len(text):
            raise GapOrOverlapError(
                f"{p}: token {i} ({tok!r}) extends past the end of the text"
            )
        if text[pos:end] != tok:
            raise TokenMismatchError(
                f"{p}: token {i} is {tok!r} but the text at offset {pos} "
                f"reads {text[pos:end]!r}"
            )
        spans.append(TokenSpan(vocab.id_of[tok], pos, end))
        pos = end
    if pos != len(text):
        raise GapOrOverlapError(
            f"{p}: tokens cover [0, {pos}) but the text has {len(text)} bytes"
        )
    return Segmentation(text, tuple(spans), vocab)
