"""KL losses, contiguous coarsenings and the removed-signal identity.

The chain rule for KL over a grouped outcome space splits the total
divergence into a between-group term plus a mass-weighted sum of
within-group conditional divergences. Merging adjacent minimal units
therefore never increases the KL, and the gap is exactly the
within-group teacher-student discrepancy the merge erases.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import CoverageError, EmptyStreamError, SpaceMismatchError
from .supervision import SupervisionDistribution


class Divergence(enum.Enum):
    REVERSE_KL = "reverse_kl"
    FORWARD_KL = "forward_kl"


DistLike = SupervisionDistribution | Sequence[float] | np.ndarray


def _as_arrays(dist: DistLike) -> tuple[np.ndarray, np.ndarray | None, object]:
    if isinstance(dist, SupervisionDistribution):
        return dist.probs, dist.log_probs, dist.space
    p = np.asarray(dist, dtype=np.float64)
    return p, None, None


def _check_pair(a: DistLike, b: DistLike):
    pa, la, sa = _as_arrays(a)
    pb, lb, sb = _as_arrays(b)
    if sa is not None and sb is not None and sa is not sb and sa != sb:
        raise SpaceMismatchError("distributions live on different supervision spaces")
    if pa.shape != pb.shape:
        raise SpaceMismatchError(f"length mismatch: {pa.shape[0]} vs {pb.shape[0]}")
    return pa, la, pb, lb


def kl_divergence(
    p: DistLike,
    q: DistLike,
    p_log: np.ndarray | None = None,
    q_log: np.ndarray | None = None,
) -> float:
    """KL(p || q) with the 0 * log(0/.) = 0 convention.

    Returns inf when q is zero somewhere p is positive. Tiny negative
    totals from rounding are clamped to 0.
    """
    pa, la, qa, lb = _check_pair(p, q)
    if p_log is not None:
        la = np.asarray(p_log, dtype=np.float64)
    if q_log is not None:
        lb = np.asarray(q_log, dtype=np.float64)
    mask = pa > 0
    if not mask.any():
        return 0.0
    if np.any(qa[mask] <= 0):
        return math.inf
    lp = la[mask] if la is not None else np.log(pa[mask])
    lq = lb[mask] if lb is not None else np.log(qa[mask])
    total = float(np.sum(pa[mask] * (lp - lq)))
    return total if total > 0.0 else 0.0


def reverse_kl(q_s: DistLike, q_t: DistLike) -> float:
    """KL(q_s || q_t): the trained loss configuration."""
    return kl_divergence(q_s, q_t)


def forward_kl(q_s: DistLike, q_t: DistLike) -> float:
    """KL(q_t || q_s): provided for diagnostics only."""
    return kl_divergence(q_t, q_s)


def gopd_loss(q_s: DistLike, q_t: DistLike, divergence: Divergence) -> float:
    """Dispatch to the named divergence over a common space."""
    if divergence is Divergence.REVERSE_KL:
        return reverse_kl(q_s, q_t)
    return forward_kl(q_s, q_t)


@dataclass(frozen=True)
class Coarsening:
    """Ordered partition of indices 0..n-1 into contiguous groups."""

    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        expected = 0
        for group in self.groups:
            if not group:
                raise CoverageError("coarsening group is empty")
            for idx in group:
                if idx != expected:
                    raise CoverageError(
                        f"groups must cover indices contiguously; expected {expected}, got {idx}"
                    )
                expected += 1

    @property
    def n(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def is_trivial(self) -> bool:
        """True when every group is a singleton (nothing is merged)."""
        return all(len(g) == 1 for g in self.groups)

    @classmethod
    def singletons(cls, n: int) -> "Coarsening":
        return cls(tuple((i,) for i in range(n)))

    @classmethod
    def merge_all(cls, n: int) -> "Coarsening":
        return cls((tuple(range(n)),)) if n else cls(())

    @classmethod
    def merge_adjacent(cls, n: int, k: int) -> "Coarsening":
        if k < 1:
            raise CoverageError(f"merge size must be >= 1, got {k}")
        return cls(tuple(tuple(range(i, min(i + k, n))) for i in range(0, n, k)))

    @classmethod
    def from_lists(cls, groups: Iterable[Iterable[int]]) -> "Coarsening":
        return cls(tuple(tuple(g) for g in groups))


def refines(fine: Coarsening, coarse: Coarsening) -> bool:
    """True when every group of ``coarse`` is a union of ``fine`` groups."""
    if fine.n != coarse.n:
        return False
    fine_starts = {g[0] for g in fine.groups}
    return all(g[0] in fine_starts for g in coarse.groups) and all(
        g[-1] + 1 in fine_starts or g[-1] + 1 == fine.n for g in coarse.groups
    )


@dataclass(frozen=True)
class CoarseDistribution:
    """Per-group probabilities obtained by summing member units."""

    coarsening: Coarsening
    probs: np.ndarray

    def __len__(self) -> int:
        return len(self.probs)


def _coarse_probs(probs: np.ndarray, coarsening: Coarsening) -> np.ndarray:
    if coarsening.n != probs.shape[0]:
        raise CoverageError(
            f"coarsening covers {coarsening.n} indices, distribution has {probs.shape[0]}"
        )
    return np.array([float(probs[list(g)].sum()) for g in coarsening.groups])


def coarsen(dist: DistLike, coarsening: Coarsening) -> CoarseDistribution:
    """Aggregate the probability mass of units inside each coarse group."""
    probs, _, _ = _as_arrays(dist)
    return CoarseDistribution(coarsening, _coarse_probs(probs, coarsening))


def removed_kl_signal(q_s_min: DistLike, q_t_min: DistLike, coarsening: Coarsening) -> float:
    """KL on minimal units minus KL after coarsening; always >= 0."""
    pa, la, qa, lb = _check_pair(q_s_min, q_t_min)
    kl_min = kl_divergence(pa, qa, la, lb)
    kl_coarse = kl_divergence(_coarse_probs(pa, coarsening), _coarse_probs(qa, coarsening))
    delta = kl_min - kl_coarse
    return delta if delta > 0.0 else 0.0


def decomposition_check(q_s_min: DistLike, q_t_min: DistLike, coarsening: Coarsening) -> float:
    """Residual |KL_min - (KL_coarse + sum_c Q_S(c) KL(conditionals))|.

    The two sides are evaluated independently; zero-mass coarse groups
    are omitted from the conditional sum.
    """
    pa, la, qa, lb = _check_pair(q_s_min, q_t_min)
    lhs = kl_divergence(pa, qa, la, lb)
    ps = _coarse_probs(pa, coarsening)
    qs = _coarse_probs(qa, coarsening)
    rhs = kl_divergence(ps, qs)
    for gi, group in enumerate(coarsening.groups):
        mass_s = ps[gi]
        if mass_s <= 0:
            continue
        idx = list(group)
        if qs[gi] <= 0:
            rhs = math.inf
            break
        cond_s = pa[idx] / mass_s
        cond_t = qa[idx] / qs[gi]
        rhs += mass_s * kl_divergence(cond_s, cond_t)
    if math.isinf(lhs) and math.isinf(rhs):
        return 0.0
    return abs(lhs - rhs)


def pairwise_sum(values: Sequence[float]) -> float:
    """Fixed-tree pairwise summation; bit-stable for a given input order."""
    vals = list(values)
    if not vals:
        return 0.0
    while len(vals) > 1:
        nxt = [
            vals[i] + vals[i + 1] if i + 1 < len(vals) else vals[i]
            for i in range(0, len(vals), 2)
        ]
        vals = nxt
    return vals[0]


def expected_delta(
    pairs: Iterable[tuple[DistLike, DistLike]],
    policy: Coarsening | Callable[[int], Coarsening],
) -> float:
    """Mean removed-KL signal over a stream of (student, teacher) pairs.

    ``policy`` is either a fixed coarsening or a callable mapping the
    number of minimal units to one.
    """
    deltas: list[float] = []
    for q_s, q_t in pairs:
        probs, _, _ = _as_arrays(q_s)
        coarsening = policy(probs.shape[0]) if callable(policy) else policy
        deltas.append(removed_kl_signal(q_s, q_t, coarsening))
    if not deltas:
        raise EmptyStreamError("expected_delta over an empty prefix stream")
    return pairwise_sum(deltas) / len(deltas)
