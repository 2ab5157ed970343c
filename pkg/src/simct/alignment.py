"""Minimal aligned units from two segmentations of the same byte string.

Given a teacher and a student tokenization of identical text, the
minimal aligned units are the finest contiguous spans whose boundaries
are token boundaries in *both* segmentations: each unit is a run of
complete teacher tokens and, equally, a run of complete student tokens,
and no unit can be split further without cutting through a token on one
side.

Two constructions are provided. ``minimal_aligned_units`` closes a unit
exactly at offsets that are boundaries in both segmentations (a single
left-to-right sweep). ``brute_force_units`` builds the atomic-fragment
graph explicitly, linking fragments covered by one token, and reads the
units off its connected components; it exists as an independent oracle
and the two must agree on every input.
"""

from __future__ import annotations

import enum
from bisect import bisect_right
from dataclasses import dataclass

from .errors import GapOrOverlapError, TextMismatchError
from .tokenizer import Segmentation, TokenSpan


@dataclass(frozen=True)
class BoundarySet:
    """Sorted byte offsets, always containing 0 and the text length."""

    offsets: tuple[int, ...]

    def __post_init__(self):
        if not self.offsets or self.offsets[0] != 0:
            raise GapOrOverlapError("boundary set must start at offset 0")
        if any(b >= a for b, a in zip(self.offsets, self.offsets[1:])):
            raise GapOrOverlapError("boundary offsets must be strictly increasing")

    def __len__(self) -> int:
        return len(self.offsets)

    def __contains__(self, offset: int) -> bool:
        i = bisect_right(self.offsets, offset)
        return i > 0 and self.offsets[i - 1] == offset


@dataclass(frozen=True)
class AtomicFragment:
    """One cell of the boundary-union partition."""

    start: int
    end: int


@dataclass(frozen=True)
class AlignedUnit:
    """A span realizable as complete tokens under both segmentations."""

    start: int
    end: int
    teacher_tokens: tuple[TokenSpan, ...]
    student_tokens: tuple[TokenSpan, ...]
    surface: bytes

    def __post_init__(self):
        if self.start >= self.end:
            raise GapOrOverlapError("aligned unit must be non-empty")
        if len(self.surface) != self.end - self.start:
            raise GapOrOverlapError("surface length does not match the byte range")
        for name, spans in (("teacher", self.teacher_tokens), ("student", self.student_tokens)):
            if not spans:
                raise GapOrOverlapError(f"{name} realization is empty")
            pos = self.start
            for span in spans:
                if span.start != pos:
                    raise GapOrOverlapError(
                        f"{name} tokens do not tile the unit at offset {pos}"
                    )
                pos = span.end
            if pos != self.end:
                raise GapOrOverlapError(f"{name} tokens stop at {pos}, unit ends at {self.end}")

    @property
    def k_teacher(self) -> int:
        return len(self.teacher_tokens)

    @property
    def k_student(self) -> int:
        return len(self.student_tokens)

    def teacher_bytes(self) -> tuple[bytes, ...]:
        base = self.start
        return tuple(self.surface[s.start - base : s.end - base] for s in self.teacher_tokens)

    def student_bytes(self) -> tuple[bytes, ...]:
        base = self.start
        return tuple(self.surface[s.start - base : s.end - base] for s in self.student_tokens)


@dataclass(frozen=True)
class UnitPartition:
    """Ordered aligned units tiling [0, len(text))."""

    text: bytes
    units: tuple[AlignedUnit, ...]

    def __post_init__(self):
        pos = 0
        for unit in self.units:
            if unit.start != pos:
                raise GapOrOverlapError(f"unit starting at {unit.start} leaves a gap at {pos}")
            if self.text[unit.start : unit.end] != unit.surface:
                raise GapOrOverlapError("unit surface does not match the text")
            pos = unit.end
        if pos != len(self.text):
            raise GapOrOverlapError(f"units cover [0, {pos}) of {len(self.text)} bytes")

    def __len__(self) -> int:
        return len(self.units)


class MinimalityVerdict(enum.Enum):
    OK = "ok"
    NOT_MINIMAL = "not_minimal"


def _require_same_text(teacher: Segmentation, student: Segmentation) -> None:
    if teacher.text != student.text:
        raise TextMismatchError(
            f"segmentations cover different texts: {teacher.text!r} vs {student.text!r}"
        )


def boundary_union(teacher: Segmentation, student: Segmentation) -> BoundarySet:
    """Sorted union of both segmentations' token boundaries."""
    _require_same_text(teacher, student)
    return BoundarySet(tuple(sorted(set(teacher.boundaries) | set(student.boundaries))))


def minimal_aligned_units(teacher: Segmentation, student: Segmentation) -> UnitPartition:
    """Partition the text into minimal aligned units, left to right.

    A unit closes exactly at offsets that are token boundaries in both
    segmentations, which is equivalent to taking connected components of
    the atomic-fragment graph (tokens are intervals, so overlap chains
    are contiguous).
    """
    _require_same_text(teacher, student)
    text = teacher.text
    cuts = sorted(set(teacher.boundaries) & set(student.boundaries))
    units: list[AlignedUnit] = []
    ti = si = 0
    tspans, sspans = teacher.spans, student.spans
    for start, end in zip(cuts, cuts[1:]):
        t_run: list[TokenSpan] = []
        while ti < len(tspans) and tspans[ti].end <= end:
            t_run.append(tspans[ti])
            ti += 1
        s_run: list[TokenSpan] = []
        while si < len(sspans) and sspans[si].end <= end:
            s_run.append(sspans[si])
            si += 1
        units.append(
            AlignedUnit(start, end, tuple(t_run), tuple(s_run), text[start:end])
        )
    return UnitPartition(text, tuple(units))


def verify_minimality(
    partition: UnitPartition, teacher: Segmentation, student: Segmentation
) -> MinimalityVerdict:
    """Check that every unit is jointly tokenizable and unsplittable.

    OK iff (a) every unit boundary is a token boundary in both
    segmentations and (b) no unit contains an interior offset that is a
    boundary in both, which would permit a strictly finer joint split.
    """
    tb = set(teacher.boundaries)
    sb = set(student.boundaries)
    common = sorted(tb & sb)
    for unit in partition.units:
        for edge in (unit.start, unit.end):
            if edge not in tb or edge not in sb:
                return MinimalityVerdict.NOT_MINIMAL
        lo = bisect_right(common, unit.start)
        if lo < len(common) and common[lo] < unit.end:
            return MinimalityVerdict.NOT_MINIMAL
    return MinimalityVerdict.OK


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, i: int) -> int:
        root = i
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[i] != root:
            self.parent[i], i = root, self.parent[i]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def brute_force_units(teacher: Segmentation, student: Segmentation) -> UnitPartition:
    """Oracle construction via the explicit atomic-fragment graph.

    Builds the boundary-union fragments, links every pair of fragments
    covered by one token span (either side) with union-find, and turns
    each connected component into a unit. Intended for small texts.
    """
    _require_same_text(teacher, student)
    text = teacher.text
    bounds = boundary_union(teacher, student).offsets
    fragments = [AtomicFragment(a, b) for a, b in zip(bounds, bounds[1:])]
    uf = _UnionFind(len(fragments))
    for seg in (teacher, student):
        for span in seg.spans:
            covered = [
                i
                for i, frag in enumerate(fragments)
                if span.start <= frag.start and frag.end <= span.end
            ]
            for a, b in zip(covered, covered[1:]):
                uf.union(a, b)

    groups: dict[int, list[AtomicFragment]] = {}
    order: list[int] = []
    for i, frag in enumerate(fragments):
        root = uf.find(i)
        if root not in groups:
            groups[root] = []
            order.append(root)
        groups[root].append(frag)

    units: list[AlignedUnit] = []
    for root in order:
        frags = groups[root]
        start = min(f.start for f in frags)
        end = max(f.end for f in frags)
        t_run = tuple(s for s in teacher.spans if start <= s.start and s.end <= end)
        s_run = tuple(s for s in student.spans if start <= s.start and s.end <= end)
        units.append(AlignedUnit(start, end, t_run, s_run, text[start:end]))
    units.sort(key=lambda u: u.start)
    return UnitPartition(text, tuple(units))
