"""Acceptance gate: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
"""

import json
import math
import os
import time

import numpy as np
import pytest

from simct.alignment import (
    MinimalityVerdict,
    brute_force_units,
    minimal_aligned_units,
    verify_minimality,
)
from simct.cli import main
from simct.divergence import (
    Coarsening,
    decomposition_check,
    kl_divergence,
    removed_kl_signal,
    reverse_kl,
)
from simct.opdloop import coarsening_ablation, recovery_ablation, run_distillation
from simct.reports import fixture_path, strip_timestamps
from simct.supervision import (
    Side,
    SpaceMode,
    build_space,
    project,
    project_scores,
    shared_vocabulary,
)
from simct.tokenizer import Vocabulary, segment_greedy
from simct.toymodel import StudentLogitTable, fit_ngram, loss_gradient, make_rng
from simct.synthetic import default_opd_config, fresh_student, synthetic_prompts

from fuzztools import (
    VectorSource,
    random_gradient_config,
    random_nontrivial_coarsening,
    random_pair_and_text,
    random_positive_distribution,
)
from test_toymodel import fd_gradient


def report(name: str) -> None:
    print(f"\nACCEPTANCE {name}: PASS")


def test_worked_example_reproduction(happy_vocabs):
    teacher_vocab, student_vocab = happy_vocabs
    started = time.monotonic()
    teacher = segment_greedy(teacher_vocab, b"happy")
    student = segment_greedy(student_vocab, b"happy")
    partition = minimal_aligned_units(teacher, student)
    elapsed = time.monotonic() - started
    assert teacher.token_bytes() == (b"hap", b"py")
    assert student.token_bytes() == (b"ha", b"pp", b"y")
    assert len(partition.units) == 1
    unit = partition.units[0]
    assert (unit.start, unit.end) == (0, 5)
    assert (unit.k_teacher, unit.k_student) == (2, 3)
    assert elapsed < 1.0
    report("worked-example reproduction")


def test_minimal_unit_equivalence_suite():
    rng = make_rng(20240601)
    started = time.monotonic()
    failures = 0
    for case in range(1000):
        teacher_vocab, student_vocab, text = random_pair_and_text(rng, max_text=32)
        teacher = segment_greedy(teacher_vocab, text)
        student = segment_greedy(student_vocab, text)
        sweep = minimal_aligned_units(teacher, student)
        graph = brute_force_units(teacher, student)
        if sweep != graph:
            failures += 1
        if verify_minimality(sweep, teacher, student) is not MinimalityVerdict.OK:
            failures += 1
    elapsed = time.monotonic() - started
    assert failures == 0
    assert elapsed < 30.0
    report(f"minimality suite (1000 cases, {elapsed:.1f}s)")


def test_coarsening_signal_suite():
    rng = make_rng(20240602)
    for case in range(1000):
        n = int(rng.integers(2, 10))
        q_s = random_positive_distribution(rng, n)
        q_t = random_positive_distribution(rng, n)
        coarsening = random_nontrivial_coarsening(rng, n)
        kl_min = kl_divergence(q_s, q_t)
        kl_coarse = kl_min - removed_kl_signal(q_s, q_t, coarsening)
        assert kl_min >= kl_coarse
        assert decomposition_check(q_s, q_t, coarsening) <= 1e-9

    # worked case, expected value computed from the defining sum
    q_s = np.array([0.2, 0.3, 0.5])
    q_t = np.array([0.4, 0.1, 0.5])
    delta = removed_kl_signal(q_s, q_t, Coarsening.from_lists([[0, 1], [2]]))
    expected = 0.2 * math.log(0.2 / 0.4) + 0.3 * math.log(0.3 / 0.1)
    assert abs(delta - expected) <= 1e-6
    report("coarsening signal suite (1000 cases + worked case)")


def test_projection_contract():
    rng = make_rng(20240603)
    # normalization on projections over genuine aligned spaces
    checked = 0
    while checked < 100:
        teacher_vocab, student_vocab, text = random_pair_and_text(rng, max_text=16)
        if len(text) < 2:
            continue
        teacher_seg = segment_greedy(teacher_vocab, text)
        student_seg = segment_greedy(student_vocab, text)
        partition = minimal_aligned_units(teacher_seg, student_seg)
        shared = shared_vocabulary(teacher_vocab, student_vocab)
        space = build_space(shared, [partition], SpaceMode.SIMCT)
        if len(space) == 0:
            continue
        source = VectorSource(student_vocab)
        context_pool = [(), (0,), (1, 0)]
        for key in context_pool:
            raw = rng.exponential(1.0, size=len(student_vocab)) + 1e-4
            source.rows[key] = raw / raw.sum()
        dist = project(source, (), space, Side.STUDENT)
        assert abs(float(dist.probs.sum()) - 1.0) <= 1e-12
        assert np.all(dist.probs >= 0)
        checked += 1

    # shared-mode projection equals the renormalized restriction
    vocab = Vocabulary([bytes([c]) for c in b"abcdefgh"])
    for _ in range(100):
        raw = rng.exponential(1.0, size=8) + 1e-4
        probs = raw / raw.sum()
        source = VectorSource(vocab, {(): probs})
        space = build_space({b"a", b"c", b"f", b"h"}, [], SpaceMode.SHARED)
        dist = project(source, (), space, Side.TEACHER)
        ids = [vocab.id_of[s] for s in space.surfaces()]
        expected = probs[ids] / probs[ids].sum()
        assert float(np.max(np.abs(dist.probs - expected))) <= 1e-10

    # score-shift invariance
    from simct.supervision import SupervisionSpace, SupervisionUnit

    space = SupervisionSpace(
        tuple(SupervisionUnit.shared(f"u{i}".encode()) for i in range(7)), SpaceMode.SHARED
    )
    for _ in range(100):
        scores = rng.normal(0, 4, size=7)
        shift = float(rng.normal(0, 40))
        a = project_scores(space, scores)
        b = project_scores(space, scores + shift)
        assert float(np.max(np.abs(a.probs - b.probs))) <= 1e-12
    report("projection contract (normalization, restriction, shift invariance)")


def test_gradient_check():
    rng = make_rng(20240604)
    worst = 0.0
    for config in range(100):
        student, teacher, s_ctx, t_ctx, space = random_gradient_config(rng)
        grads = loss_gradient(student, teacher, s_ctx, t_ctx, space)
        for key, row in grads.items():
            for token_id in range(len(row)):
                analytic = float(row[token_id])
                numeric = fd_gradient(student, teacher, s_ctx, t_ctx, space, key, token_id)
                err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-4)
                worst = max(worst, err)
    assert worst <= 1e-5

    # exactly zero gradient when the student already matches the teacher
    vocab = Vocabulary([b"a", b"b", b"c"])
    teacher = fit_ngram([[0, 1, 2, 0, 1], [2, 2, 1, 0]], order=2, alpha=0.4, vocab=vocab)
    student = StudentLogitTable(vocab, order=2)
    for ctx in teacher.contexts():
        student.set_row(ctx, teacher.next_token_logprobs(ctx))
    space = build_space(shared_vocabulary(vocab, vocab), [], SpaceMode.SHARED)
    grads = loss_gradient(student, teacher, (0,), (0,), space)
    stationary = max(float(np.abs(g).max()) for g in grads.values())
    assert stationary <= 1e-10
    report(f"gradient check (100 configs, max rel err {worst:.2e})")


@pytest.fixture(scope="module")
def bundled():
    from simct.synthetic import synthetic_teacher

    return synthetic_teacher()


def test_opd_descent(bundled):
    started = time.monotonic()
    wins = 0
    for seed in range(5):
        cfg = default_opd_config(seed=seed)
        simct_student = fresh_student()
        simct_reports = run_distillation(
            simct_student, bundled, synthetic_prompts(), cfg, 200, SpaceMode.SIMCT
        )
        simple_student = fresh_student()
        simple_reports = run_distillation(
            simple_student, bundled, synthetic_prompts(), cfg, 200, SpaceMode.SHARED
        )
        initial = simct_reports[0].space_kl
        final = simct_reports[-1].space_kl
        assert final <= 0.5 * initial, f"seed {seed}: {final} vs initial {initial}"
        if final <= simple_reports[-1].space_kl:
            wins += 1
    elapsed = time.monotonic() - started
    assert wins >= 4
    assert elapsed < 120.0
    report(f"descent (5 seeds, {wins}/5 wins over shared-only, {elapsed:.0f}s)")


def spearman(xs, ys):
    def ranks(values):
        order = sorted(range(len(values)), key=lambda i: values[i])
        out = [0.0] * len(values)
        for rank, idx in enumerate(order):
            out[idx] = float(rank)
        return out

    rx = np.array(ranks(xs))
    ry = np.array(ranks(ys))
    rx -= rx.mean()
    ry -= ry.mean()
    return float(np.dot(rx, ry) / math.sqrt(np.dot(rx, rx) * np.dot(ry, ry)))


def test_ablation_analogues(bundled):
    lam_finals = []
    for lam in (0.0, 0.5, 1.0):
        finals = []
        for seed in range(5):
            student = fresh_student()
            reports = recovery_ablation(
                lam, student, bundled, synthetic_prompts(), default_opd_config(seed=seed), 200
            )
            finals.append(reports[-1].space_kl)
        lam_finals.append(float(np.mean(finals)))
    assert lam_finals[0] >= lam_finals[1] >= lam_finals[2], lam_finals

    deltas = []
    kl_finals = []
    for merge_k in (1, 2, 4, None):
        run_deltas = []
        finals = []
        for seed in range(5):
            student = fresh_student()
            delta, reports = coarsening_ablation(
                merge_k, student, bundled, synthetic_prompts(), default_opd_config(seed=seed), 200
            )
            run_deltas.append(delta)
            finals.append(reports[-1].space_kl)
        deltas.append(float(np.mean(run_deltas)))
        kl_finals.append(float(np.mean(finals)))
    assert all(a < b for a, b in zip(deltas, deltas[1:])), deltas
    rho = spearman(deltas, kl_finals)
    assert rho >= 0.9, (deltas, kl_finals, rho)
    report(
        "ablations (final KL non-increasing in lambda; "
        f"delta strictly increasing in k, rank corr {rho:.2f})"
    )


def test_cli_determinism(tmp_path):
    from simct.synthetic import write_synthetic_files

    files = write_synthetic_files(tmp_path / "bundle", seed=7)
    max_workers = os.cpu_count() or 2

    align_outputs = []
    corpus = tmp_path / "corpus.jsonl"
    corpus.write_text("".join(json.dumps({"text": "abcdef"}) + "\n" for _ in range(30)))
    for parallelism in (1, max_workers):
        out = tmp_path / f"align{parallelism}.jsonl"
        assert (
            main(
                [
                    "align",
                    "--corpus",
                    str(corpus),
                    "--teacher-vocab",
                    files["teacher_vocab"],
                    "--student-vocab",
                    files["student_vocab"],
                    "--parallelism",
                    str(parallelism),
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        align_outputs.append(out.read_bytes())
    assert align_outputs[0] == align_outputs[1]

    stats_outputs = []
    for parallelism in (1, max_workers):
        out = tmp_path / f"stats{parallelism}.json"
        assert (
            main(
                [
                    "stats",
                    "--corpus",
                    files["corpus"],
                    "--teacher-vocab",
                    files["teacher_vocab"],
                    "--student-vocab",
                    files["student_vocab"],
                    "--teacher-model",
                    files["teacher_model"],
                    "--parallelism",
                    str(parallelism),
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        stats_outputs.append(strip_timestamps(out.read_text()))
    assert stats_outputs[0] == stats_outputs[1]

    coarsen_outputs = []
    for _ in range(2):
        out = tmp_path / "coarsen.json"
        assert (
            main(
                [
                    "coarsen",
                    "--student-dist",
                    str(fixture_path("coarsen_student.json")),
                    "--teacher-dist",
                    str(fixture_path("coarsen_teacher.json")),
                    "--merge-k",
                    "2",
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        coarsen_outputs.append(strip_timestamps(out.read_text()))
    assert coarsen_outputs[0] == coarsen_outputs[1]

    distill_runs = []
    for parallelism in (1, max_workers):
        outdir = tmp_path / f"run{parallelism}"
        assert (
            main(
                [
                    "distill",
                    "--config",
                    files["config"],
                    "--steps",
                    "3",
                    "--seed",
                    "31",
                    "--max-len",
                    "8",
                    "--parallelism",
                    str(parallelism),
                    "--out",
                    str(outdir),
                ]
            )
            == 0
        )
        run = {}
        for name in sorted(os.listdir(outdir)):
            run[name] = strip_timestamps((outdir / name).read_text())
        distill_runs.append(run)
    assert distill_runs[0] == distill_runs[1]
    report("CLI determinism (align, stats, coarsen, distill; 1 vs max cores)")
