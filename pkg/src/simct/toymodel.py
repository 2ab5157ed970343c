"""Tabular next-token models, nucleus sampling and the student update.

The teacher is a frozen add-alpha smoothed n-gram table; the student is
a trainable per-context logit table. Both expose normalized conditional
distributions over their own vocabulary, which keeps every projection
and gradient in the training loop exactly computable and auditable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, RealizationMissingError
from .supervision import (
    LengthNorm,
    Side,
    SupervisionSpace,
    project,
)
from .tokenizer import Vocabulary

# Counter-based generator so seeds are reproducible across platforms and
# independent streams can be split off by key. Key layout (128 bits):
# high word = stream id, low word = user seed.
RNG_ALGORITHM = "philox4x64 (numpy Philox), key = (stream << 64) | seed"


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Deterministic, splittable generator for a (seed, stream) pair."""
    key = ((stream & 0xFFFFFFFFFFFFFFFF) << 64) | (seed & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(key=key))


class NGramTable:
    """Add-alpha smoothed n-gram conditional model.

    Conditional probability of token v after context c is
    (count(c, v) + alpha) / (total(c) + alpha * |V|), which sums to 1
    over the vocabulary for every context, including unseen ones.
    Contexts are keyed by the last (order - 1) token ids; shorter
    prefixes near a sequence start key as-is.
    """

    def __init__(self, vocab: Vocabulary, order: int, alpha: float):
        if order < 1:
            raise ConfigError(f"n-gram order must be >= 1, got {order}")
        if not alpha > 0:
            raise ConfigError(f"smoothing alpha must be > 0, got {alpha}")
        self.vocabulary = vocab
        self.order = int(order)
        self.alpha = float(alpha)
        self._counts: dict[tuple[int, ...], np.ndarray] = {}
        self._logprob_cache: dict[tuple[int, ...], np.ndarray] = {}

    def context_key(self, context: Sequence[int]) -> tuple[int, ...]:
        if self.order == 1:
            return ()
        return tuple(context[-(self.order - 1) :])

    def add_count(self, context: Sequence[int], token_id: int, count: float = 1.0) -> None:
        key = self.context_key(context)
        row = self._counts.get(key)
        if row is None:
            row = self._counts[key] = np.zeros(len(self.vocabulary))
        row[token_id] += count
        self._logprob_cache.pop(key, None)

    def next_token_logprobs(self, context: Sequence[int]) -> np.ndarray:
        key = self.context_key(context)
        cached = self._logprob_cache.get(key)
        if cached is not None:
            return cached
        size = len(self.vocabulary)
        row = self._counts.get(key)
        if row is None:
            probs = np.full(size, 1.0 / size)
        else:
            probs = (row + self.alpha) / (row.sum() + self.alpha * size)
        logprobs = np.log(probs)
        logprobs.setflags(write=False)
        self._logprob_cache[key] = logprobs
        return logprobs

    def next_token_logprob(self, context: Sequence[int], token_id: int) -> float:
        return float(self.next_token_logprobs(context)[token_id])

    def contexts(self) -> tuple[tuple[int, ...], ...]:
        return tuple(self._counts.keys())

    def to_checkpoint(self, vocab_ref: str) -> dict:
        entries = []
        for key in sorted(self._counts):
            row = self._counts[key]
            for tid in np.nonzero(row)[0]:
                entries.append([list(key), int(tid), float(row[tid])])
        return {
            "schema": "simct/model/v1",
            "kind": "ngram",
            "order": self.order,
            "alpha": self.alpha,
            "vocab_ref": vocab_ref,
            "entries": entries,
        }

    @classmethod
    def from_checkpoint(cls, data: dict, vocab: Vocabulary) -> "NGramTable":
        table = cls(vocab, int(data["order"]), float(data["alpha"]))
        for ctx, tid, value in data["entries"]:
            key = tuple(int(c) for c in ctx)
            row = table._counts.get(key)
            if row is None:
                row = table._counts[key] = np.zeros(len(vocab))
            row[int(tid)] += float(value)
        return table


def fit_ngram(
    corpus: Iterable[Sequence[int]], order: int, alpha: float, vocab: Vocabulary
) -> NGramTable:
    """Accumulate n-gram counts over token-id sequences."""
    table = NGramTable(vocab, order, alpha)
    for seq in corpus:
        ids = list(seq)
        for t, token_id in enumerate(ids):
            table.add_count(ids[:t], token_id)
    return table


class StudentLogitTable:
    """Trainable per-context logit rows; softmax gives the policy.

    Unseen (context, token) logits default to 0, so untouched contexts
    are uniform. Single-writer: gradient application must not run
    concurrently with evaluation.
    """

    def __init__(self, vocab: Vocabulary, order: int):
        if order < 1:
            raise ConfigError(f"order must be >= 1, got {order}")
        self.vocabulary = vocab
        self.order = int(order)
        self._logits: dict[tuple[int, ...], np.ndarray] = {}
        self._logprob_cache: dict[tuple[int, ...], np.ndarray] = {}

    def context_key(self, context: Sequence[int]) -> tuple[int, ...]:
        if self.order == 1:
            return ()
        return tuple(context[-(self.order - 1) :])

    def logits_row(self, key: tuple[int, ...]) -> np.ndarray:
        row = self._logits.get(key)
        if row is None:
            return np.zeros(len(self.vocabulary))
        return row.copy()

    def get_logit(self, key: tuple[int, ...], token_id: int) -> float:
        row = self._logits.get(key)
        return 0.0 if row is None else float(row[token_id])

    def set_logit(self, key: tuple[int, ...], token_id: int, value: float) -> None:
        row = self._logits.get(key)
        if row is None:
            row = self._logits[key] = np.zeros(len(self.vocabulary))
        row[token_id] = value
        self._logprob_cache.pop(key, None)

    def set_row(self, key: tuple[int, ...], values: Sequence[float]) -> None:
        row = np.asarray(values, dtype=np.float64).copy()
        if row.shape != (len(self.vocabulary),):
            raise ConfigError("row length does not match the vocabulary size")
        self._logits[key] = row
        self._logprob_cache.pop(key, None)

    def next_token_logprobs(self, context: Sequence[int]) -> np.ndarray:
        key = self.context_key(context)
        cached = self._logprob_cache.get(key)
        if cached is not None:
            return cached
        row = self._logits.get(key)
        if row is None:
            logprobs = np.full(len(self.vocabulary), -math.log(len(self.vocabulary)))
        else:
            shifted = row - row.max()
            logprobs = shifted - math.log(np.exp(shifted).sum())
        logprobs.setflags(write=False)
        self._logprob_cache[key] = logprobs
        return logprobs

    def next_token_logprob(self, context: Sequence[int], token_id: int) -> float:
        return float(self.next_token_logprobs(context)[token_id])

    def apply_gradient(self, gradient: dict[tuple[int, ...], np.ndarray], lr: float) -> None:
        """One descent step: theta -= lr * g for every touched row."""
        for key, grad in gradient.items():
            row = self._logits.get(key)
            if row is None:
                row = self._logits[key] = np.zeros(len(self.vocabulary))
            row -= lr * np.asarray(grad, dtype=np.float64)
            self._logprob_cache.pop(key, None)

    def copy(self) -> "StudentLogitTable":
        dup = StudentLogitTable(self.vocabulary, self.order)
        dup._logits = {k: v.copy() for k, v in self._logits.items()}
        return dup

    def max_abs_difference(self, other: "StudentLogitTable") -> float:
        keys = set(self._logits) | set(other._logits)
        worst = 0.0
        for key in keys:
            a = self._logits.get(key)
            b = other._logits.get(key)
            if a is None:
                diff = float(np.abs(b).max()) if b is not None else 0.0
            elif b is None:
                diff = float(np.abs(a).max())
            else:
                diff = float(np.abs(a - b).max())
            worst = max(worst, diff)
        return worst

    def to_checkpoint(self, vocab_ref: str) -> dict:
        entries = []
        for key in sorted(self._logits):
            row = self._logits[key]
            for tid in np.nonzero(row)[0]:
                entries.append([list(key), int(tid), float(row[tid])])
        return {
            "schema": "simct/model/v1",
            "kind": "logit_table",
            "order": self.order,
            "alpha": None,
            "vocab_ref": vocab_ref,
            "entries": entries,
        }

    @classmethod
    def from_checkpoint(cls, data: dict, vocab: Vocabulary) -> "StudentLogitTable":
        table = cls(vocab, int(data["order"]))
        for ctx, tid, value in data["entries"]:
            table.set_logit(tuple(int(c) for c in ctx), int(tid), float(value))
        return table


@dataclass(frozen=True)
class SamplingConfig:
    """Rollout settings; temperature 0.6 / top-p 0.95 are the defaults."""

    seed: int
    max_len: int
    temperature: float = 0.6
    top_p: float = 0.95

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if not 0 < self.top_p <= 1:
            raise ConfigError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.max_len < 0:
            raise ConfigError(f"max_len must be >= 0, got {self.max_len}")


@dataclass(frozen=True)
class Generation:
    """A sampled continuation: token ids plus the decoded bytes."""

    token_ids: tuple[int, ...]
    text: bytes


def nucleus_candidates(
    logprobs: np.ndarray, temperature: float, top_p: float
) -> tuple[np.ndarray, np.ndarray]:
    """Temperature-scale, sort, truncate to the top-p nucleus, renormalize.

    Returns (token ids in nucleus order, their renormalized weights).
    Sorting is stable on descending probability, so ties break toward
    the lower token id.
    """
    scaled = logprobs / temperature
    shifted = scaled - scaled.max()
    exp = np.exp(shifted)
    probs = exp / exp.sum()
    order = np.argsort(-probs, kind="stable")
    csum = np.cumsum(probs[order])
    cut = int(np.searchsorted(csum, top_p, side="left"))
    if cut >= len(order):
        cut = len(order) - 1
    kept = order[: cut + 1]
    weights = probs[kept]
    return kept, weights / weights.sum()


def sample_next(
    model, context: Sequence[int], temperature: float, top_p: float, rng: np.random.Generator
) -> int:
    """Draw one token by inverse CDF over the nucleus (one uniform draw)."""
    kept, weights = nucleus_candidates(
        model.next_token_logprobs(tuple(context)), temperature, top_p
    )
    u = rng.random()
    j = int(np.searchsorted(np.cumsum(weights), u, side="right"))
    if j >= len(kept):
        j = len(kept) - 1
    return int(kept[j])


def sample_rollout(
    model,
    prompt_ids: Sequence[int],
    cfg: SamplingConfig,
    rng: np.random.Generator | None = None,
) -> Generation:
    """Sample ``max_len`` tokens from the model's own policy.

    Deterministic given the seed: the default generator is
    ``make_rng(cfg.seed)`` and each token consumes exactly one uniform.
    """
    if rng is None:
        rng = make_rng(cfg.seed)
    ctx = list(prompt_ids)
    generated: list[int] = []
    for _ in range(cfg.max_len):
        token_id = sample_next(model, ctx, cfg.temperature, cfg.top_p, rng)
        generated.append(token_id)
        ctx.append(token_id)
    text = b"".join(model.vocabulary.surface(t) for t in generated)
    return Generation(tuple(generated), text)


def loss_gradient(
    student: StudentLogitTable,
    teacher,
    student_context: Sequence[int],
    teacher_context: Sequence[int],
    space: SupervisionSpace,
    norm: LengthNorm = LengthNorm.MEAN,
) -> dict[tuple[int, ...], np.ndarray]:
    """Analytic gradient of the reverse-KL projection loss.

    Differentiates KL(project(student) || project(teacher)) with respect
    to every student logit feeding any candidate's continuation score,
    chaining through the score normalization and the softmax. Returned
    rows are dense over the student vocabulary, keyed like the table.
    """
    q_s = project(student, student_context, space, Side.STUDENT, norm)
    q_t = project(teacher, teacher_context, space, Side.TEACHER, norm)
    return _score_gradient(student, student_context, space, q_s, q_t, norm)


def _score_gradient(
    student: StudentLogitTable,
    student_context: Sequence[int],
    space: SupervisionSpace,
    q_s,
    q_t,
    norm: LengthNorm,
) -> dict[tuple[int, ...], np.ndarray]:
    ratio = q_s.log_probs - q_t.log_probs
    dscore = q_s.probs * (ratio - float(np.dot(q_s.probs, ratio)))
    size = len(student.vocabulary)
    id_of = student.vocabulary.id_of
    grads: dict[tuple[int, ...], np.ndarray] = {}
    prob_rows: dict[tuple[int, ...], np.ndarray] = {}
    base_ctx = list(student_context)
    for i, unit in enumerate(space.units):
        realization = unit.realization(Side.STUDENT)
        if realization is None:
            raise RealizationMissingError(
                f"unit {unit.surface!r} has no student realization"
            )
        if norm is LengthNorm.MEAN:
            coeff = dscore[i] / len(realization)
        elif norm is LengthNorm.NONE:
            coeff = dscore[i]
        else:
            coeff = dscore[i] / len(unit.surface)
        ctx = list(base_ctx)
        for tok in realization:
            token_id = id_of[tok]
            key = student.context_key(ctx)
            probs = prob_rows.get(key)
            if probs is None:
                probs = prob_rows[key] = np.exp(student.next_token_logprobs(ctx))
            grad = grads.get(key)
            if grad is None:
                grad = grads[key] = np.zeros(size)
            grad -= coeff * probs
            grad[token_id] += coeff
            ctx.append(token_id)
    return grads
