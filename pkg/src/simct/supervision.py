"""Common supervision spaces and softmax projection of model predictions.

The candidate space holds shared-vocabulary tokens plus aligned units
recovered from mismatched tokenizations. Each candidate gets a
continuation score: the next-token log-probability for a shared token,
or the length-normalized chained log-likelihood of the unit's token
realization. Softmax over the scores yields the supervision
distribution; this is a scoring interface, not a mass-preserving
marginalization of the underlying next-token distribution.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .alignment import AlignedUnit, UnitPartition
from .errors import (
    DistributionError,
    EmptyTokenError,
    GapOrOverlapError,
    RealizationMissingError,
    SpaceMismatchError,
)
from .tokenizer import Vocabulary


class Side(enum.Enum):
    TEACHER = "teacher"
    STUDENT = "student"


class UnitKind(enum.Enum):
    SHARED_TOKEN = "shared_token"
    ALIGNED_UNIT = "aligned_unit"


class SpaceMode(enum.Enum):
    SHARED = "shared"
    SIMCT = "simct"


class LengthNorm(enum.Enum):
    """How a multi-token score is normalized; MEAN (1/k) is the default."""

    MEAN = "mean"
    NONE = "none"
    PER_BYTE = "per_byte"


class DistributionSource(Protocol):
    """Anything producing next-token log-probabilities over a vocabulary.

    Conditional distributions must be normalized (probabilities over the
    vocabulary sum to 1) for every context. Implementations must support
    extending the context token by token within a unit realization.
    """

    vocabulary: Vocabulary

    def next_token_logprob(self, context: Sequence[int], token_id: int) -> float: ...

    def next_token_logprobs(self, context: Sequence[int]) -> np.ndarray: ...


def shared_vocabulary(vt: Vocabulary, vs: Vocabulary) -> set[bytes]:
    """Exact surface-string intersection of two vocabularies."""
    return set(vt.tokens) & set(vs.tokens)


@dataclass(frozen=True)
class SupervisionUnit:
    """One candidate: a shared token or an aligned unit.

    Realizations are token byte-string sequences per side; a side may be
    missing for externally supplied units, in which case scoring for
    that side raises RealizationMissingError.
    """

    kind: UnitKind
    surface: bytes
    teacher_realization: tuple[bytes, ...] | None
    student_realization: tuple[bytes, ...] | None

    def __post_init__(self):
        if not self.surface:
            raise EmptyTokenError("supervision unit surface is empty")
        if self.kind is UnitKind.SHARED_TOKEN:
            if self.teacher_realization != (self.surface,) or self.student_realization != (
                self.surface,
            ):
                raise GapOrOverlapError("shared token realizations must be the surface itself")
            return
        if self.teacher_realization is None and self.student_realization is None:
            raise RealizationMissingError("aligned unit has no realization on either side")
        for name, real in (
            ("teacher", self.teacher_realization),
            ("student", self.student_realization),
        ):
            if real is None:
                continue
            if not real or any(not tok for tok in real):
                raise GapOrOverlapError(f"{name} realization has empty tokens")
            if b"".join(real) != self.surface:
                raise GapOrOverlapError(
                    f"{name} realization does not concatenate to the surface"
                )

    @classmethod
    def shared(cls, surface: bytes) -> "SupervisionUnit":
        return cls(UnitKind.SHARED_TOKEN, surface, (surface,), (surface,))

    @classmethod
    def aligned(
        cls,
        surface: bytes,
        teacher: tuple[bytes, ...] | None,
        student: tuple[bytes, ...] | None,
    ) -> "SupervisionUnit":
        return cls(UnitKind.ALIGNED_UNIT, surface, teacher, student)

    @classmethod
    def from_unit(cls, unit: AlignedUnit) -> "SupervisionUnit":
        return cls(
            UnitKind.ALIGNED_UNIT, unit.surface, unit.teacher_bytes(), unit.student_bytes()
        )

    def realization(self, side: Side) -> tuple[bytes, ...] | None:
        return self.teacher_realization if side is Side.TEACHER else self.student_realization

    def k(self, side: Side) -> int | None:
        real = self.realization(side)
        return None if real is None else len(real)


class SupervisionSpace:
    """Immutable ordered candidate set with unique surfaces."""

    __slots__ = ("units", "mode", "index_of", "n_shared")

    def __init__(self, units: tuple[SupervisionUnit, ...], mode: SpaceMode):
        index_of: dict[bytes, int] = {}
        n_shared = 0
        for i, unit in enumerate(units):
            if unit.surface in index_of:
                raise SpaceMismatchError(
                    f"duplicate surface {unit.surface!r} in supervision space"
                )
            index_of[unit.surface] = i
            if unit.kind is UnitKind.SHARED_TOKEN:
                n_shared += 1
            elif mode is SpaceMode.SHARED:
                raise SpaceMismatchError("shared-mode space may contain only shared tokens")
        self.units = tuple(units)
        self.mode = mode
        self.index_of = index_of
        self.n_shared = n_shared

    def __len__(self) -> int:
        return len(self.units)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, SupervisionSpace)
            and self.mode is other.mode
            and self.units == other.units
        )

    def __hash__(self):
        return hash((self.mode, self.units))

    def surfaces(self) -> tuple[bytes, ...]:
        return tuple(u.surface for u in self.units)


def build_space(
    shared: Iterable[bytes],
    partitions: Sequence[UnitPartition],
    mode: SpaceMode,
    *,
    unit_filter: Callable[[SupervisionUnit], bool] | None = None,
    top_k_shared: int | None = None,
    teacher: DistributionSource | None = None,
    teacher_context: Sequence[int] = (),
) -> SupervisionSpace:
    """Assemble the candidate space from shared tokens and aligned units.

    Shared tokens enter first, sorted by surface; aligned units follow in
    first-appearance order, deduplicated by surface. A unit whose surface
    is already a shared token collapses into the shared token (their
    scores coincide for 1:1 units, so the choice is observationally
    neutral). ``unit_filter`` is consulted once per new candidate surface
    and can drop units (recovery ablation). ``top_k_shared`` optionally
    restricts shared tokens to the teacher's top-k at the given context;
    the default keeps the full shared vocabulary.
    """
    shared_sorted = sorted(shared)
    if top_k_shared is not None:
        if teacher is None:
            raise SpaceMismatchError("top_k_shared requires a teacher model")
        logprobs = teacher.next_token_logprobs(tuple(teacher_context))
        ranked = sorted(
            shared_sorted,
            key=lambda s: (-logprobs[teacher.vocabulary.id_of[s]], s),
        )
        shared_sorted = sorted(ranked[:top_k_shared])
    units: list[SupervisionUnit] = [SupervisionUnit.shared(s) for s in shared_sorted]
    if mode is SpaceMode.SIMCT:
        seen: set[bytes] = set(shared_sorted)
        for partition in partitions:
            for unit in partition.units:
                if unit.surface in seen:
                    continue
                seen.add(unit.surface)
                candidate = SupervisionUnit.from_unit(unit)
                if unit_filter is None or unit_filter(candidate):
                    units.append(candidate)
    return SupervisionSpace(tuple(units), mode)


def continuation_score(
    model: DistributionSource,
    context: Sequence[int],
    unit: SupervisionUnit,
    side: Side,
    norm: LengthNorm = LengthNorm.MEAN,
) -> float:
    """Score one candidate as a continuation of ``context``.

    A shared token scores its next-token log-probability. An aligned
    unit chains its side's realization within the unit only (the context
    grows token by token, never using anything beyond the unit) and the
    chained log-likelihood is normalized per ``norm``.
    """
    realization = unit.realization(side)
    if realization is None:
        raise RealizationMissingError(
            f"unit {unit.surface!r} has no {side.value} realization"
        )
    id_of = model.vocabulary.id_of
    ctx = list(context)
    total = 0.0
    for tok in realization:
        token_id = id_of.get(tok)
        if token_id is None:
            raise RealizationMissingError(
                f"realization token {tok!r} is not in the {side.value} vocabulary"
            )
        total += model.next_token_logprob(tuple(ctx), token_id)
        ctx.append(token_id)
    if norm is LengthNorm.MEAN:
        return total / len(realization)
    if norm is LengthNorm.NONE:
        return total
    return total / len(unit.surface)


def unit_scores(
    model: DistributionSource,
    context: Sequence[int],
    space: SupervisionSpace,
    side: Side,
    norm: LengthNorm = LengthNorm.MEAN,
) -> np.ndarray:
    """Continuation scores for every candidate in the space."""
    ctx = tuple(context)
    scores = np.empty(len(space.units), dtype=np.float64)
    logprobs = None
    id_of = model.vocabulary.id_of
    for i, unit in enumerate(space.units):
        if unit.kind is UnitKind.SHARED_TOKEN:
            if logprobs is None:
                logprobs = model.next_token_logprobs(ctx)
            token_id = id_of.get(unit.surface)
            if token_id is None:
                raise RealizationMissingError(
                    f"shared token {unit.surface!r} is not in the {side.value} vocabulary"
                )
            scores[i] = logprobs[token_id]
        else:
            scores[i] = continuation_score(model, ctx, unit, side, norm)
    return scores


def softmax_with_logs(scores: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Max-subtracted softmax, returning (probs, log-probs)."""
    shifted = scores - np.max(scores)
    exp = np.exp(shifted)
    total = exp.sum()
    return exp / total, shifted - np.log(total)


class SupervisionDistribution:
    """Probabilities over a supervision space: non-negative, sum 1."""

    __slots__ = ("space", "probs", "log_probs")

    def __init__(
        self,
        space: SupervisionSpace,
        probs: np.ndarray | Sequence[float],
        log_probs: np.ndarray | None = None,
    ):
        p = np.asarray(probs, dtype=np.float64)
        if p.shape != (len(space.units),):
            raise SpaceMismatchError(
                f"{p.shape[0] if p.ndim == 1 else p.shape} probabilities for "
                f"{len(space.units)} units"
            )
        if np.any(p < 0):
            raise DistributionError("negative probability")
        if abs(float(p.sum()) - 1.0) > 1e-12:
            raise DistributionError(f"probabilities sum to {p.sum()!r}, not 1")
        if log_probs is None:
            with np.errstate(divide="ignore"):
                log_probs = np.where(p > 0, np.log(np.where(p > 0, p, 1.0)), -np.inf)
        self.space = space
        self.probs = p
        self.log_probs = np.asarray(log_probs, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.probs)


def project_scores(space: SupervisionSpace, scores: np.ndarray) -> SupervisionDistribution:
    """Normalize raw continuation scores into a supervision distribution."""
    probs, log_probs = softmax_with_logs(np.asarray(scores, dtype=np.float64))
    return SupervisionDistribution(space, probs, log_probs)


def project(
    model: DistributionSource,
    context: Sequence[int],
    space: SupervisionSpace,
    side: Side,
    norm: LengthNorm = LengthNorm.MEAN,
) -> SupervisionDistribution:
    """Project a model's prediction at ``context`` onto the space."""
    return project_scores(space, unit_scores(model, context, space, side, norm))
