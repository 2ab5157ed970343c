"""Binding parity: bit-identical results versus the core and its CLI."""

import json
import math

import numpy as np
import pytest

import simct
from simct.alignment import minimal_aligned_units
from simct.cli import main
from simct.divergence import kl_divergence
from simct.errors import GapOrOverlapError, SpaceMismatchError, TokenMismatchError
from simct.reports import unit_record
from simct.supervision import (
    Side,
    SpaceMode,
    SupervisionSpace,
    SupervisionUnit,
    build_space,
    project,
    project_scores,
    shared_vocabulary,
)
from simct.tokenizer import Vocabulary, segment_greedy
from simct.toymodel import make_rng

import simct_bindings as b


def random_vocab(rng, alphabet: bytes, extras: int) -> Vocabulary:
    tokens = [bytes([c]) for c in alphabet]
    seen = set(tokens)
    for _ in range(extras * 10):
        if len(tokens) >= len(alphabet) + extras:
            break
        size = int(rng.integers(2, 5))
        tok = bytes(rng.choice(list(alphabet), size=size).tolist())
        if tok not in seen:
            seen.add(tok)
            tokens.append(tok)
    return Vocabulary(tokens)


def random_case(rng):
    alphabet = b"abcde"[: int(rng.integers(2, 5))]
    teacher = random_vocab(rng, alphabet, int(rng.integers(2, 8)))
    student = random_vocab(rng, alphabet, int(rng.integers(2, 8)))
    length = int(rng.integers(1, 28))
    text = bytes(rng.choice(list(alphabet), size=length).tolist())
    return teacher, student, text


class TestVersion:
    def test_matches_core(self):
        assert b.__version__ == simct.__version__


class TestBindAlign:
    def test_worked_example(self):
        records = b.bind_align("happy", ["hap", "py"], ["ha", "pp", "y"])
        assert records == [
            {
                "start": 0,
                "end": 5,
                "surface": "happy",
                "teacher_tokens": ["hap", "py"],
                "student_tokens": ["ha", "pp", "y"],
            }
        ]

    def test_error_codes_surface(self):
        with pytest.raises(GapOrOverlapError) as info:
            b.bind_align("happy", ["hap", "p"], ["ha", "pp", "y"])
        assert info.value.code == "gap_or_overlap"
        with pytest.raises(TokenMismatchError) as info:
            b.bind_align("happy", ["hap", "py"], ["ha", "pp", "q"])
        assert info.value.code == "token_mismatch"

    def test_fuzz_parity_with_core(self):
        rng = make_rng(424201)
        for _ in range(500):
            teacher_vocab, student_vocab, text = random_case(rng)
            teacher = segment_greedy(teacher_vocab, text)
            student = segment_greedy(student_vocab, text)
            core_records = [
                unit_record(u) for u in minimal_aligned_units(teacher, student).units
            ]
            bound_records = b.bind_align(
                text,
                [t.decode() for t in teacher.token_bytes()],
                [t.decode() for t in student.token_bytes()],
            )
            assert bound_records == core_records

    def test_parity_with_cli(self, tmp_path, capsys):
        rng = make_rng(424202)
        for batch in range(20):
            teacher_vocab, student_vocab, _ = random_case(rng)
            tpath = tmp_path / f"t{batch}.txt"
            spath = tmp_path / f"s{batch}.txt"
            tpath.write_text("".join(t.decode() + "\n" for t in teacher_vocab.tokens))
            spath.write_text("".join(t.decode() + "\n" for t in student_vocab.tokens))
            texts = []
            alphabet = sorted({bytes([c]) for tok in teacher_vocab.tokens for c in tok})
            for _ in range(25):
                n = int(rng.integers(1, 24))
                texts.append(b"".join(alphabet[int(rng.integers(0, len(alphabet)))] for _ in range(n)))
            corpus = tmp_path / f"c{batch}.jsonl"
            corpus.write_text("".join(json.dumps({"text": t.decode()}) + "\n" for t in texts))
            code = main(
                [
                    "align",
                    "--corpus",
                    str(corpus),
                    "--teacher-vocab",
                    str(tpath),
                    "--student-vocab",
                    str(spath),
                ]
            )
            assert code == 0
            cli_lines = capsys.readouterr().out.strip().splitlines()
            bound_lines = []
            for doc, text in enumerate(texts):
                teacher_seg = segment_greedy(teacher_vocab, text)
                student_seg = segment_greedy(student_vocab, text)
                for record in b.bind_align(
                    text,
                    [t.decode() for t in teacher_seg.token_bytes()],
                    [t.decode() for t in student_seg.token_bytes()],
                ):
                    record = dict(record)
                    record["doc"] = doc
                    bound_lines.append(
                        json.dumps(record, sort_keys=True, separators=(",", ":"))
                    )
            assert bound_lines == cli_lines


class TestBindProject:
    def test_softmax_arithmetic(self):
        space = [
            {"kind": "shared_token", "surface": "x"},
            {"kind": "shared_token", "surface": "y"},
        ]
        probs = b.bind_project([0.0, math.log(2.0)], space)
        assert probs[0] == pytest.approx(1 / 3, abs=1e-12)
        assert probs[1] == pytest.approx(2 / 3, abs=1e-12)

    def test_scores_parity_bitwise(self):
        rng = make_rng(424203)
        for _ in range(500):
            n = int(rng.integers(2, 12))
            scores = rng.normal(0, 4, size=n)
            records = [{"kind": "shared_token", "surface": f"u{i}"} for i in range(n)]
            space = SupervisionSpace(
                tuple(SupervisionUnit.shared(f"u{i}".encode()) for i in range(n)),
                SpaceMode.SIMCT,
            )
            core = [float(p) for p in project_scores(space, scores).probs]
            bound = b.bind_project(list(scores), records)
            assert bound == core  # bit-identical floats

    def test_callback_parity_with_core_projection(self):
        rng = make_rng(424204)
        for _ in range(50):
            teacher_vocab, student_vocab, text = random_case(rng)
            teacher_seg = segment_greedy(teacher_vocab, text)
            student_seg = segment_greedy(student_vocab, text)
            partition = minimal_aligned_units(teacher_seg, student_seg)
            shared = shared_vocabulary(teacher_vocab, student_vocab)
            space = build_space(shared, [partition], SpaceMode.SIMCT)
            if len(space) == 0:
                continue

            rows = {}

            # a deterministic fake model over the student vocabulary
            class FakeModel:
                vocabulary = student_vocab

                def _row(self, context):
                    key = tuple(context)
                    row = rows.get(key)
                    if row is None:
                        seed = (hash(key) & 0xFFFFFF) + 1
                        raw = make_rng(seed).exponential(1.0, size=len(student_vocab)) + 1e-4
                        row = rows[key] = np.log(raw / raw.sum())
                    return row

                def next_token_logprobs(self, context):
                    return self._row(context)

                def next_token_logprob(self, context, token_id):
                    return float(self._row(context)[token_id])

            model = FakeModel()
            core = project(model, (), space, Side.STUDENT)

            def host_logprob(context_tokens, token):
                ids = tuple(student_vocab.id_of[t] for t in context_tokens)
                return model.next_token_logprob(ids, student_vocab.id_of[token])

            records = []
            for unit in space.units:
                records.append(
                    {
                        "kind": unit.kind.value,
                        "surface": unit.surface.decode(),
                        "teacher_realization": [t.decode() for t in unit.teacher_realization],
                        "student_realization": [t.decode() for t in unit.student_realization],
                    }
                )
            bound = b.bind_project(host_logprob, records, side="student")
            assert bound == [float(p) for p in core.probs]

    def test_space_handle_reuse_and_close(self):
        records = [
            {"kind": "shared_token", "surface": "x"},
            {"kind": "shared_token", "surface": "y"},
        ]
        handle = b.open_space(records)
        first = b.bind_project([0.0, 0.0], handle)
        second = b.bind_project([1.0, 1.0], handle)
        assert first == second == [0.5, 0.5]
        handle.close()
        with pytest.raises(b.ClosedHandleError) as info:
            b.bind_project([0.0, 0.0], handle)
        assert info.value.code == "closed_handle"

    def test_duplicate_surfaces_rejected(self):
        records = [
            {"kind": "shared_token", "surface": "x"},
            {"kind": "shared_token", "surface": "x"},
        ]
        with pytest.raises(SpaceMismatchError):
            b.bind_project([0.0, 0.0], records)


class TestBindLoss:
    def test_identity_zero(self):
        assert b.bind_loss([0.25, 0.75], [0.25, 0.75]) == 0.0

    def test_fuzz_parity_bitwise(self):
        rng = make_rng(424205)
        for _ in range(500):
            n = int(rng.integers(2, 10))
            raw_s = rng.exponential(1.0, size=n) + 1e-3
            raw_t = rng.exponential(1.0, size=n) + 1e-3
            q_s = raw_s / raw_s.sum()
            q_t = raw_t / raw_t.sum()
            assert b.bind_loss(list(q_s), list(q_t)) == kl_divergence(q_s, q_t)

    def test_worked_value(self):
        expected = 0.5 * math.log(2.0) + 0.5 * math.log(2.0 / 3.0)
        assert b.bind_loss([0.5, 0.5], [0.25, 0.75]) == pytest.approx(expected, abs=1e-12)


class TestVocabularyHandle:
    def test_open_and_close(self):
        handle = b.open_vocabulary(["a", "b"])
        assert len(handle.get()) == 2
        handle.close()
        with pytest.raises(b.ClosedHandleError):
            handle.get()

    def test_context_manager(self):
        with b.open_vocabulary(["a"]) as handle:
            assert handle.get() is not None
        with pytest.raises(b.ClosedHandleError):
            handle.get()
