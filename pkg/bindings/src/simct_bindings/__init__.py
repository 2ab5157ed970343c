"""Thin in-process bindings for the cross-tokenizer supervision core.

Exposes alignment, space projection and loss evaluation to ML-pipeline
hosts as three plain functions over host-level values (token strings,
dicts, float lists), with numerical results bit-identical to the core:
every number is produced by the same core routine. Host models are
scored through log-probability callbacks rather than shipped across the
boundary. Core errors propagate as exceptions carrying a stable
``code`` attribute.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

import simct
from simct.divergence import kl_divergence
from simct.errors import SimctError
from simct.reports import unit_record
from simct.supervision import (
    Side,
    SpaceMode,
    SupervisionSpace,
    SupervisionUnit,
    project,
    project_scores,
)
from simct.tokenizer import Segmentation, TokenSpan, Vocabulary
from simct.alignment import minimal_aligned_units

__version__ = simct.__version__

__all__ = [
    "BoundHandle",
    "ClosedHandleError",
    "bind_align",
    "bind_loss",
    "bind_project",
    "open_space",
    "open_vocabulary",
    "__version__",
]


class ClosedHandleError(SimctError):
    code = "closed_handle"


class BoundHandle:
    """Opaque reference to a core-owned object, valid until closed."""

    __slots__ = ("_value", "_kind")

    def __init__(self, value, kind: str):
        self._value = value
        self._kind = kind

    @property
    def kind(self) -> str:
        return self._kind

    def get(self):
        if self._value is None:
            raise ClosedHandleError(f"{self._kind} handle used after close")
        return self._value

    def close(self) -> None:
        self._value = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def _as_bytes(token) -> bytes:
    return token.encode("utf-8") if isinstance(token, str) else bytes(token)


def _segmentation_from_tokens(text: bytes, tokens: Sequence[bytes]) -> Segmentation:
    vocab_tokens: list[bytes] = []
    seen: set[bytes] = set()
    for tok in tokens:
        if tok not in seen:
            seen.add(tok)
            vocab_tokens.append(tok)
    vocab = Vocabulary(vocab_tokens)
    spans = []
    pos = 0
    for tok in tokens:
        spans.append(TokenSpan(vocab.id_of[tok], pos, pos + len(tok)))
        pos += len(tok)
    return Segmentation(text, tuple(spans), vocab)


def bind_align(text, teacher_tokens: Sequence, student_tokens: Sequence) -> list[dict]:
    """Minimal aligned units for two tokenizations of the same text.

    Token lists must tile the text exactly. Returns one record per unit
    in the same shape as the core CLI's JSONL lines.
    """
    data = _as_bytes(text)
    teacher = _segmentation_from_tokens(data, [_as_bytes(t) for t in teacher_tokens])
    student = _segmentation_from_tokens(data, [_as_bytes(t) for t in student_tokens])
    partition = minimal_aligned_units(teacher, student)
    return [unit_record(unit) for unit in partition.units]


def _space_from_records(records) -> SupervisionSpace:
    if isinstance(records, BoundHandle):
        value = records.get()
        if not isinstance(value, SupervisionSpace):
            raise ClosedHandleError(f"expected a space handle, got {records.kind}")
        return value
    if isinstance(records, SupervisionSpace):
        return records
    units = []
    for record in records:
        surface = _as_bytes(record["surface"])
        kind = record.get("kind", "aligned_unit")
        if kind == "shared_token":
            units.append(SupervisionUnit.shared(surface))
            continue
        teacher = record.get("teacher_realization")
        student = record.get("student_realization")
        units.append(
            SupervisionUnit.aligned(
                surface,
                tuple(_as_bytes(t) for t in teacher) if teacher is not None else None,
                tuple(_as_bytes(t) for t in student) if student is not None else None,
            )
        )
    return SupervisionSpace(tuple(units), SpaceMode.SIMCT)


def open_space(records) -> BoundHandle:
    """Build a supervision space once and reuse it across calls."""
    return BoundHandle(_space_from_records(records), "space")


def open_vocabulary(tokens: Sequence) -> BoundHandle:
    return BoundHandle(Vocabulary([_as_bytes(t) for t in tokens]), "vocabulary")


class _CallbackSource:
    """Adapts a host log-probability callback to the core model protocol.

    The callback receives (context_tokens, token) as byte strings and
    returns the host model's next-token log-probability.
    """

    def __init__(self, vocab: Vocabulary, logprob: Callable):
        self.vocabulary = vocab
        self._logprob = logprob

    def _context_tokens(self, context) -> tuple[bytes, ...]:
        return tuple(self.vocabulary.surface(t) for t in context)

    def next_token_logprob(self, context, token_id: int) -> float:
        return float(
            self._logprob(self._context_tokens(context), self.vocabulary.surface(token_id))
        )

    def next_token_logprobs(self, context) -> np.ndarray:
        ctx = self._context_tokens(context)
        return np.array([float(self._logprob(ctx, tok)) for tok in self.vocabulary.tokens])


def _callback_vocabulary(space: SupervisionSpace, context_tokens, side: Side) -> Vocabulary:
    # only the scored side's tokens reach the callback
    tokens: list[bytes] = []
    seen: set[bytes] = set()

    def add(tok: bytes):
        if tok not in seen:
            seen.add(tok)
            tokens.append(tok)

    for tok in context_tokens:
        add(tok)
    for unit in space.units:
        realization = unit.realization(side)
        if realization:
            for tok in realization:
                add(tok)
    return Vocabulary(tokens)


def bind_project(scores_or_logprob, space, *, side: str = "student", context=()) -> list[float]:
    """Normalize candidate scores into a supervision distribution.

    Pass either precomputed continuation scores (one per unit) or a
    callable ``logprob(context_tokens, token) -> float`` backed by the
    host model, in which case scores are chained over each unit's
    realization for ``side`` starting from ``context``.
    """
    resolved = _space_from_records(space)
    if callable(scores_or_logprob):
        which = Side(side)
        ctx_tokens = [_as_bytes(t) for t in context]
        vocab = _callback_vocabulary(resolved, ctx_tokens, which)
        source = _CallbackSource(vocab, scores_or_logprob)
        ctx_ids = tuple(vocab.id_of[t] for t in ctx_tokens)
        dist = project(source, ctx_ids, resolved, which)
    else:
        scores = np.asarray(list(scores_or_logprob), dtype=np.float64)
        dist = project_scores(resolved, scores)
    return [float(p) for p in dist.probs]


def bind_loss(q_s: Sequence[float], q_t: Sequence[float]) -> float:
    """Reverse KL of the student distribution from the teacher's."""
    return kl_divergence(
        np.asarray(list(q_s), dtype=np.float64), np.asarray(list(q_t), dtype=np.float64)
    )
