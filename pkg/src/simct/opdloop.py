"""Desk-scale on-policy distillation over minimal aligned units.

Each step samples rollouts from the student, re-tokenizes the generated
bytes with both tokenizers, extracts minimal aligned units, builds the
candidate space for the batch and distills at unit boundary positions:
exactly the offsets where both sides predict the same next text span.
One averaged gradient update is applied per step.

Determinism: every random draw comes from a named (seed, stream) pair,
loss accumulation runs in fixed prompt order, and parallelism only maps
independent per-prompt work with order-preserving collection, so results
are identical at any worker count.
"""

from __future__ import annotations

from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
import math
from typing import Iterable, Sequence

import numpy as np

from .alignment import AlignedUnit, UnitPartition, minimal_aligned_units
from .divergence import Coarsening, kl_divergence, pairwise_sum, removed_kl_signal
from .errors import ConfigError, UnsegmentableTextError
from .supervision import (
    LengthNorm,
    Side,
    SpaceMode,
    SupervisionSpace,
    SupervisionUnit,
    build_space,
    continuation_score,
    shared_vocabulary,
    softmax_with_logs,
    unit_scores,
)
from .tokenizer import Segmentation, Vocabulary, segment_greedy
from .toymodel import (
    NGramTable,
    SamplingConfig,
    StudentLogitTable,
    make_rng,
    sample_rollout,
)

# RNG stream purposes (high bits of the Philox stream id).
_STREAM_ROLLOUT = 1
_STREAM_UNIT_DROP = 2


def _stream_id(purpose: int, step: int, index: int) -> int:
    if not 0 <= index < (1 << 20):
        raise ConfigError(f"stream index out of range: {index}")
    if not 0 <= step < (1 << 28):
        raise ConfigError(f"step out of range: {step}")
    return (purpose << 48) | (step << 20) | index


def _ordered_map(fn, items: Sequence, parallelism: int) -> list:
    if parallelism <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class Rollout:
    """A sampled continuation with both tokenizations and its unit partition."""

    prompt: bytes
    text: bytes
    student_seg: Segmentation
    teacher_seg: Segmentation
    partition: UnitPartition
    prompt_student_ids: tuple[int, ...]
    prompt_teacher_ids: tuple[int, ...]


@dataclass(frozen=True)
class SupervisedPosition:
    """A unit boundary offset plus each model's token-id context."""

    offset: int
    student_context: tuple[int, ...]
    teacher_context: tuple[int, ...]


@dataclass(frozen=True)
class StepReport:
    """Per-step diagnostics.

    loss_simct is the mean loss on the SimCT-configured training space
    (with any lambda/merge knobs applied), loss_simple the mean loss on
    the shared-token space, and space_kl the mean loss on the full
    SimCT space, which serves as the common evaluation metric across
    modes and ablations.
    """

    step: int
    loss_simct: float
    loss_simple: float
    space_kl: float
    positions: int
    unit_histogram: dict[str, int]
    delta_estimate: float | None = None
    delta_positions: int = 0

    def __post_init__(self):
        for name in ("loss_simct", "loss_simple", "space_kl"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {value}")


@dataclass(frozen=True)
class MismatchReport:
    """Corpus-level alignment and out-of-shared-vocabulary diagnostics."""

    teacher_unaligned_frac: float
    student_unaligned_frac: float
    mean_oosv_teacher_mass: float
    documents: int
    skipped_documents: int
    teacher_tokens: int
    student_tokens: int
    aligned_positions: int

    def __post_init__(self):
        for name in (
            "teacher_unaligned_frac",
            "student_unaligned_frac",
            "mean_oosv_teacher_mass",
        ):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {value}")


@dataclass(frozen=True)
class OpdConfig:
    """Training knobs for one distillation run."""

    sampling: SamplingConfig
    lr: float = 1e-2
    batch_size: int | None = None  # None: use every prompt each step
    lambda_units: float = 1.0
    merge_k: int | None = 1  # None: merge whole mismatch runs
    top_k_shared: int | None = None
    length_norm: LengthNorm = LengthNorm.MEAN

    def __post_init__(self):
        if not 0.0 <= self.lambda_units <= 1.0:
            raise ConfigError(f"lambda must be in [0, 1], got {self.lambda_units}")
        if self.merge_k is not None and self.merge_k < 1:
            raise ConfigError(f"merge_k must be >= 1 or None, got {self.merge_k}")


class Mode:
    SIMCT = SpaceMode.SIMCT
    SIMPLE = SpaceMode.SHARED


def make_rollout(
    student,
    teacher_vocab: Vocabulary,
    prompt: bytes | str,
    sampling: SamplingConfig,
    rng=None,
) -> Rollout:
    """Sample one continuation and align its two tokenizations.

    The prompt is excluded from alignment but both models keep it in
    their context; both sides re-tokenize the generated bytes greedily.
    """
    prompt_bytes = prompt.encode("utf-8") if isinstance(prompt, str) else bytes(prompt)
    student_vocab = student.vocabulary
    prompt_student = (
        segment_greedy(student_vocab, prompt_bytes).token_ids() if prompt_bytes else ()
    )
    prompt_teacher = (
        segment_greedy(teacher_vocab, prompt_bytes).token_ids() if prompt_bytes else ()
    )
    generation = sample_rollout(student, prompt_student, sampling, rng)
    student_seg = segment_greedy(student_vocab, generation.text)
    teacher_seg = segment_greedy(teacher_vocab, generation.text)
    partition = minimal_aligned_units(teacher_seg, student_seg)
    return Rollout(
        prompt_bytes,
        generation.text,
        student_seg,
        teacher_seg,
        partition,
        prompt_student,
        prompt_teacher,
    )


def supervised_positions(rollout: Rollout) -> list[SupervisedPosition]:
    """Minimal-unit start offsets with both models' contexts.

    These are the boundary-consistent positions: at each, every
    candidate is a valid continuation under both tokenizers.
    """
    positions: list[SupervisedPosition] = []
    s_ids = list(rollout.prompt_student_ids)
    t_ids = list(rollout.prompt_teacher_ids)
    si = ti = 0
    s_spans = rollout.student_seg.spans
    t_spans = rollout.teacher_seg.spans
    for unit in rollout.partition.units:
        offset = unit.start
        while si < len(s_spans) and s_spans[si].end <= offset:
            s_ids.append(s_spans[si].token_id)
            si += 1
        while ti < len(t_spans) and t_spans[ti].end <= offset:
            t_ids.append(t_spans[ti].token_id)
            ti += 1
        positions.append(SupervisedPosition(offset, tuple(s_ids), tuple(t_ids)))
    return positions


def is_mismatch_unit(unit: AlignedUnit) -> bool:
    """True unless the unit is a 1:1 token pair (whose surface is shared)."""
    return len(unit.teacher_tokens) != 1 or len(unit.student_tokens) != 1


def _merge_run(chunk: list[AlignedUnit]) -> AlignedUnit:
    if len(chunk) == 1:
        return chunk[0]
    teacher = tuple(s for u in chunk for s in u.teacher_tokens)
    student = tuple(s for u in chunk for s in u.student_tokens)
    surface = b"".join(u.surface for u in chunk)
    return AlignedUnit(chunk[0].start, chunk[-1].end, teacher, student, surface)


def merge_adjacent_units(
    partition: UnitPartition, merge_k: int | None
) -> tuple[UnitPartition, Coarsening]:
    """Merge text-adjacent mismatch units in runs of ``merge_k``.

    1:1 units stay singletons and break runs (a merged unit must be a
    contiguous span to remain scorable). Also returns the matching
    coarsening over the mismatch-unit index list, used to measure the
    KL signal the merge removes.
    """
    merged: list[AlignedUnit] = []
    groups: list[tuple[int, ...]] = []
    run: list[AlignedUnit] = []
    next_index = 0

    def flush() -> None:
        nonlocal next_index
        if not run:
            return
        size = len(run) if merge_k is None else merge_k
        for i in range(0, len(run), size):
            chunk = run[i : i + size]
            groups.append(tuple(range(next_index, next_index + len(chunk))))
            next_index += len(chunk)
            merged.append(_merge_run(chunk))
        run.clear()

    for unit in partition.units:
        if is_mismatch_unit(unit):
            run.append(unit)
        else:
            flush()
            merged.append(unit)
    flush()
    return UnitPartition(partition.text, tuple(merged)), Coarsening(tuple(groups))


def delta_for_rollout(
    student,
    teacher,
    rollout: Rollout,
    merge_k: int | None,
    norm: LengthNorm = LengthNorm.MEAN,
) -> list[float]:
    """Removed-KL signal per supervised position of one rollout.

    Projects both models onto the rollout's own mismatch units (their
    minimal-unit sub-space) and measures what the merge-``merge_k``
    grouping erases at each position. Rollouts without mismatch units
    contribute nothing.
    """
    _, coarsening = merge_adjacent_units(rollout.partition, merge_k)
    mismatch_units = [
        SupervisionUnit.from_unit(u) for u in rollout.partition.units if is_mismatch_unit(u)
    ]
    if not mismatch_units:
        return []
    deltas: list[float] = []
    for pos in supervised_positions(rollout):
        s_scores = np.array(
            [
                continuation_score(student, pos.student_context, u, Side.STUDENT, norm)
                for u in mismatch_units
            ]
        )
        t_scores = np.array(
            [
                continuation_score(teacher, pos.teacher_context, u, Side.TEACHER, norm)
                for u in mismatch_units
            ]
        )
        p_s, _ = softmax_with_logs(s_scores)
        p_t, _ = softmax_with_logs(t_scores)
        deltas.append(removed_kl_signal(p_s, p_t, coarsening))
    return deltas


def opd_step(
    student: StudentLogitTable,
    teacher: NGramTable,
    prompts: Sequence[bytes | str],
    cfg: OpdConfig,
    mode: SpaceMode,
    *,
    step: int = 0,
    parallelism: int = 1,
    apply_update: bool = True,
    compute_delta: bool = False,
) -> StepReport:
    """One training step: rollouts, alignment, projection, one update.

    Samples one rollout per prompt, accumulates the mode's reverse-KL
    loss over supervised positions, applies one averaged gradient step
    and reports the per-position mean losses.
    """
    if not prompts:
        raise ConfigError("opd_step requires at least one prompt")
    sampling = cfg.sampling
    norm = cfg.length_norm
    teacher_vocab = teacher.vocabulary
    shared = shared_vocabulary(teacher_vocab, student.vocabulary)

    def generate(indexed) -> Rollout:
        i, prompt = indexed
        rng = make_rng(sampling.seed, _stream_id(_STREAM_ROLLOUT, step, i))
        return make_rollout(student, teacher_vocab, prompt, sampling, rng)

    rollouts = _ordered_map(generate, list(enumerate(prompts)), parallelism)
    partitions = [r.partition for r in rollouts]

    eval_space = build_space(shared, partitions, SpaceMode.SIMCT)
    shared_n = eval_space.n_shared
    shared_units = eval_space.units[:shared_n]

    plain = cfg.lambda_units >= 1.0 and cfg.merge_k == 1
    if mode is SpaceMode.SIMCT and plain:
        train_space = eval_space
    elif mode is SpaceMode.SHARED:
        train_space = SupervisionSpace(shared_units, SpaceMode.SHARED)
    else:
        train_partitions = partitions
        if cfg.merge_k != 1:
            train_partitions = [
                merge_adjacent_units(p, cfg.merge_k)[0] for p in partitions
            ]
        unit_filter = None
        if cfg.lambda_units < 1.0:
            drop_rng = make_rng(sampling.seed, _stream_id(_STREAM_UNIT_DROP, step, 0))
            lam = cfg.lambda_units
            unit_filter = lambda unit: drop_rng.random() < lam
        train_space = build_space(
            shared, train_partitions, SpaceMode.SIMCT, unit_filter=unit_filter
        )

    def evaluate(indexed):
        i, rollout = indexed
        positions = supervised_positions(rollout)
        eval_losses: list[float] = []
        shared_losses: list[float] = []
        train_losses: list[float] = []
        deltas: list[float] = []
        grads: dict[tuple[int, ...], np.ndarray] = {}
        for pos in positions:
            s_eval = unit_scores(student, pos.student_context, eval_space, Side.STUDENT, norm)
            t_eval = unit_scores(teacher, pos.teacher_context, eval_space, Side.TEACHER, norm)
            qs_eval, lqs_eval = softmax_with_logs(s_eval)
            qt_eval, lqt_eval = softmax_with_logs(t_eval)
            eval_losses.append(kl_divergence(qs_eval, qt_eval, lqs_eval, lqt_eval))

            qs_shared, lqs_shared = softmax_with_logs(s_eval[:shared_n])
            qt_shared, lqt_shared = softmax_with_logs(t_eval[:shared_n])
            shared_losses.append(
                kl_divergence(qs_shared, qt_shared, lqs_shared, lqt_shared)
            )

            if train_space is eval_space:
                qs_tr, lqs_tr, qt_tr, lqt_tr = qs_eval, lqs_eval, qt_eval, lqt_eval
            elif mode is SpaceMode.SHARED:
                qs_tr, lqs_tr, qt_tr, lqt_tr = (
                    qs_shared,
                    lqs_shared,
                    qt_shared,
                    lqt_shared,
                )
            else:
                s_tr = unit_scores(student, pos.student_context, train_space, Side.STUDENT, norm)
                t_tr = unit_scores(teacher, pos.teacher_context, train_space, Side.TEACHER, norm)
                qs_tr, lqs_tr = softmax_with_logs(s_tr)
                qt_tr, lqt_tr = softmax_with_logs(t_tr)
            train_losses.append(kl_divergence(qs_tr, qt_tr, lqs_tr, lqt_tr))

            _accumulate_gradient(
                grads,
                student,
                pos.student_context,
                train_space,
                qs_tr,
                lqs_tr,
                lqt_tr,
                norm,
            )

        if compute_delta:
            deltas = delta_for_rollout(student, teacher, rollout, cfg.merge_k, norm)
        return eval_losses, shared_losses, train_losses, deltas, grads

    results = _ordered_map(evaluate, list(enumerate(rollouts)), parallelism)

    eval_losses = [x for r in results for x in r[0]]
    shared_losses = [x for r in results for x in r[1]]
    train_losses = [x for r in results for x in r[2]]
    deltas = [x for r in results for x in r[3]]
    n_positions = len(eval_losses)

    total_grad: dict[tuple[int, ...], np.ndarray] = {}
    for result in results:
        for key, grad in result[4].items():
            row = total_grad.get(key)
            if row is None:
                total_grad[key] = grad.copy()
            else:
                row += grad

    if apply_update and n_positions > 0 and total_grad:
        mean_grad = {k: g / n_positions for k, g in total_grad.items()}
        student.apply_gradient(mean_grad, cfg.lr)

    def mean(values: list[float]) -> float:
        return pairwise_sum(values) / len(values) if values else 0.0

    space_kl = mean(eval_losses)
    loss_simple = mean(shared_losses)
    loss_simct = mean(train_losses) if mode is SpaceMode.SIMCT else space_kl

    histogram = Counter(
        f"{len(u.teacher_tokens)}x{len(u.student_tokens)}"
        for r in rollouts
        for u in r.partition.units
    )
    return StepReport(
        step=step,
        loss_simct=loss_simct,
        loss_simple=loss_simple,
        space_kl=space_kl,
        positions=n_positions,
        unit_histogram=dict(histogram),
        delta_estimate=mean(deltas) if compute_delta else None,
        delta_positions=len(deltas),
    )


def _accumulate_gradient(
    grads: dict[tuple[int, ...], np.ndarray],
    student: StudentLogitTable,
    student_context: tuple[int, ...],
    space: SupervisionSpace,
    qs: np.ndarray,
    lqs: np.ndarray,
    lqt: np.ndarray,
    norm: LengthNorm,
) -> None:
    # Same chain as toymodel.loss_gradient, reusing already-computed
    # projections: dL/ds_u = q_u * (r_u - E_q r), then through the score
    # normalization into each step's log-softmax.
    ratio = lqs - lqt
    dscore = qs * (ratio - float(np.dot(qs, ratio)))
    size = len(student.vocabulary)
    id_of = student.vocabulary.id_of
    for i, unit in enumerate(space.units):
        realization = unit.realization(Side.STUDENT)
        if norm is LengthNorm.MEAN:
            coeff = dscore[i] / len(realization)
        elif norm is LengthNorm.NONE:
            coeff = dscore[i]
        else:
            coeff = dscore[i] / len(unit.surface)
        ctx = list(student_context)
        for tok in realization:
            token_id = id_of[tok]
            key = student.context_key(ctx)
            probs = np.exp(student.next_token_logprobs(ctx))
            grad = grads.get(key)
            if grad is None:
                grad = grads[key] = np.zeros(size)
            grad -= coeff * probs
            grad[token_id] += coeff
            ctx.append(token_id)


def run_distillation(
    student: StudentLogitTable,
    teacher: NGramTable,
    prompts: Sequence[bytes | str],
    cfg: OpdConfig,
    steps: int,
    mode: SpaceMode,
    *,
    parallelism: int = 1,
    compute_delta: bool = False,
    final_eval_repeat: int = 4,
) -> list[StepReport]:
    """Run ``steps`` updates plus one final evaluation-only report.

    Report i carries metrics measured before update i, so the first
    entry is the initial state and the last entry (step index = steps)
    is the trained state. The final entry samples the prompt pool
    ``final_eval_repeat`` times for a lower-variance estimate.
    ``steps == 0`` therefore reports initial losses only and changes
    nothing.
    """
    if not prompts:
        raise ConfigError("run_distillation requires at least one prompt")
    batch = cfg.batch_size or len(prompts)
    reports: list[StepReport] = []

    def batch_for(step: int) -> list:
        return [prompts[(step * batch + j) % len(prompts)] for j in range(batch)]

    for step in range(steps):
        reports.append(
            opd_step(
                student,
                teacher,
                batch_for(step),
                cfg,
                mode,
                step=step,
                parallelism=parallelism,
                apply_update=True,
                compute_delta=compute_delta,
            )
        )
    reports.append(
        opd_step(
            student,
            teacher,
            list(prompts) * max(1, final_eval_repeat),
            cfg,
            mode,
            step=steps,
            parallelism=parallelism,
            apply_update=False,
            compute_delta=compute_delta,
        )
    )
    return reports


def recovery_ablation(
    lam: float,
    student: StudentLogitTable,
    teacher: NGramTable,
    prompts: Sequence[bytes | str],
    cfg: OpdConfig,
    steps: int,
    *,
    parallelism: int = 1,
) -> list[StepReport]:
    """Train with each aligned unit admitted with probability ``lam``.

    Shared tokens are always kept; inclusion draws are seeded, one per
    candidate surface, from a stream separate from rollout sampling, so
    lam=0 reproduces shared-only training and lam=1 the full space.
    """
    run_cfg = replace(cfg, lambda_units=lam)
    return run_distillation(
        student, teacher, prompts, run_cfg, steps, SpaceMode.SIMCT, parallelism=parallelism
    )


def coarsening_ablation(
    merge_k: int | None,
    student: StudentLogitTable,
    teacher: NGramTable,
    prompts: Sequence[bytes | str],
    cfg: OpdConfig,
    steps: int,
    *,
    parallelism: int = 1,
) -> tuple[float, list[StepReport]]:
    """Train on units merged in runs of ``merge_k`` (None: whole runs).

    Returns the run-level removed-KL estimate (per-position mean over
    every supervised prefix of the run) together with the step reports.
    """
    run_cfg = replace(cfg, merge_k=merge_k)
    reports = run_distillation(
        student,
        teacher,
        prompts,
        run_cfg,
        steps,
        SpaceMode.SIMCT,
        parallelism=parallelism,
        compute_delta=True,
    )
    weighted = [
        (r.delta_estimate or 0.0) * r.delta_positions for r in reports
    ]
    count = sum(r.delta_positions for r in reports)
    overall = pairwise_sum(weighted) / count if count else 0.0
    return overall, reports


def rollout_from_text(
    teacher_vocab: Vocabulary,
    student_vocab: Vocabulary,
    text: bytes | str,
    prompt: bytes | str = b"",
) -> Rollout:
    """Build a rollout record for externally provided text (no sampling)."""
    text_bytes = text.encode("utf-8") if isinstance(text, str) else bytes(text)
    prompt_bytes = prompt.encode("utf-8") if isinstance(prompt, str) else bytes(prompt)
    student_seg = segment_greedy(student_vocab, text_bytes)
    teacher_seg = segment_greedy(teacher_vocab, text_bytes)
    partition = minimal_aligned_units(teacher_seg, student_seg)
    prompt_student = (
        segment_greedy(student_vocab, prompt_bytes).token_ids() if prompt_bytes else ()
    )
    prompt_teacher = (
        segment_greedy(teacher_vocab, prompt_bytes).token_ids() if prompt_bytes else ()
    )
    return Rollout(
        prompt_bytes,
        text_bytes,
        student_seg,
        teacher_seg,
        partition,
        prompt_student,
        prompt_teacher,
    )


def evaluate_rollouts(
    student,
    teacher: NGramTable,
    rollouts: Sequence[Rollout],
    *,
    parallelism: int = 1,
    norm: LengthNorm = LengthNorm.MEAN,
) -> tuple[list[dict], dict]:
    """Per-rollout and aggregate losses on one batch space (no update)."""
    shared = shared_vocabulary(teacher.vocabulary, student.vocabulary)
    eval_space = build_space(shared, [r.partition for r in rollouts], SpaceMode.SIMCT)
    shared_n = eval_space.n_shared

    def work(rollout: Rollout):
        eval_losses: list[float] = []
        shared_losses: list[float] = []
        for pos in supervised_positions(rollout):
            s_scores = unit_scores(student, pos.student_context, eval_space, Side.STUDENT, norm)
            t_scores = unit_scores(teacher, pos.teacher_context, eval_space, Side.TEACHER, norm)
            qs, lqs = softmax_with_logs(s_scores)
            qt, lqt = softmax_with_logs(t_scores)
            eval_losses.append(kl_divergence(qs, qt, lqs, lqt))
            qs_sh, lqs_sh = softmax_with_logs(s_scores[:shared_n])
            qt_sh, lqt_sh = softmax_with_logs(t_scores[:shared_n])
            shared_losses.append(kl_divergence(qs_sh, qt_sh, lqs_sh, lqt_sh))
        return eval_losses, shared_losses

    results = _ordered_map(work, list(rollouts), parallelism)

    def mean(values: list[float]) -> float:
        return pairwise_sum(values) / len(values) if values else 0.0

    per_rollout = []
    for i, (eval_losses, shared_losses) in enumerate(results):
        per_rollout.append(
            {
                "index": i,
                "positions": len(eval_losses),
                "loss_simct": mean(eval_losses),
                "loss_simple": mean(shared_losses),
                "space_kl": mean(eval_losses),
            }
        )
    all_eval = [x for r in results for x in r[0]]
    all_shared = [x for r in results for x in r[1]]
    totals = {
        "rollouts": len(rollouts),
        "positions": len(all_eval),
        "mean_loss_simct": mean(all_eval),
        "mean_loss_simple": mean(all_shared),
        "mean_space_kl": mean(all_eval),
    }
    return per_rollout, totals


def mismatch_stats(
    corpus: Iterable[bytes | str],
    teacher_vocab: Vocabulary,
    student_vocab: Vocabulary,
    teacher: NGramTable,
    *,
    parallelism: int = 1,
) -> MismatchReport:
    """Alignment and out-of-shared-vocabulary mass diagnostics.

    The unaligned fraction counts tokens that are not part of a 1:1
    unit; out-of-shared-vocab mass averages, over 1:1-aligned positions,
    the teacher probability falling outside the shared vocabulary.
    Documents neither tokenizer can segment are skipped and counted.
    """
    shared = shared_vocabulary(teacher_vocab, student_vocab)
    oosv_mask = np.ones(len(teacher_vocab))
    for surface in shared:
        oosv_mask[teacher_vocab.id_of[surface]] = 0.0

    docs = [d.encode("utf-8") if isinstance(d, str) else bytes(d) for d in corpus]

    def analyze(doc: bytes):
        try:
            teacher_seg = segment_greedy(teacher_vocab, doc)
            student_seg = segment_greedy(student_vocab, doc)
        except UnsegmentableTextError:
            return None
        partition = minimal_aligned_units(teacher_seg, student_seg)
        teacher_total = len(teacher_seg.spans)
        student_total = len(student_seg.spans)
        teacher_unaligned = sum(
            len(u.teacher_tokens) for u in partition.units if is_mismatch_unit(u)
        )
        student_unaligned = sum(
            len(u.student_tokens) for u in partition.units if is_mismatch_unit(u)
        )
        t_ids: list[int] = []
        ti = 0
        spans = teacher_seg.spans
        oosv_total = 0.0
        aligned_positions = 0
        for unit in partition.units:
            while ti < len(spans) and spans[ti].end <= unit.start:
                t_ids.append(spans[ti].token_id)
                ti += 1
            if not is_mismatch_unit(unit):
                probs = np.exp(teacher.next_token_logprobs(tuple(t_ids)))
                oosv_total += float(probs @ oosv_mask)
                aligned_positions += 1
        return (
            teacher_total,
            student_total,
            teacher_unaligned,
            student_unaligned,
            oosv_total,
            aligned_positions,
        )

    results = _ordered_map(analyze, docs, parallelism)
    skipped = sum(1 for r in results if r is None)
    kept = [r for r in results if r is not None]
    teacher_tokens = sum(r[0] for r in kept)
    student_tokens = sum(r[1] for r in kept)
    teacher_unaligned = sum(r[2] for r in kept)
    student_unaligned = sum(r[3] for r in kept)
    oosv_total = pairwise_sum([r[4] for r in kept])
    aligned_positions = sum(r[5] for r in kept)
    return MismatchReport(
        teacher_unaligned_frac=teacher_unaligned / teacher_tokens if teacher_tokens else 0.0,
        student_unaligned_frac=student_unaligned / student_tokens if student_tokens else 0.0,
        mean_oosv_teacher_mass=(
            min(1.0, max(0.0, oosv_total / aligned_positions)) if aligned_positions else 0.0
        ),
        documents=len(kept),
        skipped_documents=skipped,
        teacher_tokens=teacher_tokens,
        student_tokens=student_tokens,
        aligned_positions=aligned_positions,
    )
