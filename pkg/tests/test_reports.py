"""Report serialization: dumps, schemas and the escape convention."""

import json

import jsonschema
import pytest

from simct.alignment import minimal_aligned_units
from simct.errors import DistributionError
from simct.reports import (
    dump_distribution,
    load_distribution,
    load_schema,
    space_dump,
    strip_timestamps,
    unit_record,
)
from simct.supervision import SpaceMode, build_space, shared_vocabulary


class TestSpaceDump:
    def test_shape_and_schema(self, happy_vocabs, happy_segmentations):
        teacher_vocab, student_vocab = happy_vocabs
        teacher_seg, student_seg = happy_segmentations
        partition = minimal_aligned_units(teacher_seg, student_seg)
        shared = shared_vocabulary(teacher_vocab, student_vocab)
        space = build_space(shared, [partition], SpaceMode.SIMCT)
        records = space_dump(space)
        jsonschema.validate(records, load_schema("space_dump"))
        by_surface = {r["surface"]: r for r in records}
        assert by_surface["happy"] == {
            "kind": "aligned_unit",
            "surface": "happy",
            "k_teacher": 2,
            "k_student": 3,
        }
        assert by_surface["ha"]["kind"] == "shared_token"
        assert by_surface["ha"]["k_teacher"] == by_surface["ha"]["k_student"] == 1


class TestDistributionDump:
    def test_seventeen_digit_round_trip(self, tmp_path):
        units = [b"u0", b"u1", b"u2"]
        probs = [1 / 3, 1 / 7, 1 - 1 / 3 - 1 / 7]
        text = dump_distribution(units, probs)
        path = tmp_path / "d.json"
        path.write_text(text)
        back_units, back_probs = load_distribution(path)
        assert back_units == units
        assert back_probs == probs  # 17 significant digits round-trip doubles

    def test_digit_count(self):
        text = dump_distribution([b"u"], [1 / 3])
        assert "0.33333333333333331" in text

    def test_invalid_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"units": ["a"], "probs": [0.5, 0.5]}')
        with pytest.raises(DistributionError):
            load_distribution(path)


class TestUnitRecord:
    def test_escaped_surfaces(self, tmp_path):
        from simct.tokenizer import Vocabulary, segment_greedy

        vocab = Vocabulary([b"a", b"\n", b"a\n"])
        seg = segment_greedy(vocab, b"a\na")
        partition = minimal_aligned_units(seg, seg)
        records = [unit_record(u) for u in partition.units]
        assert records[0]["surface"] == "a\\n"
        json.dumps(records)  # serializable


class TestStripTimestamps:
    def test_normalizes_only_timestamp(self):
        a = '{"timestamp": "2026-08-09T01:02:03+00:00", "x": 1}'
        b = '{"timestamp": "2026-08-09T09:08:07+00:00", "x": 1}'
        assert strip_timestamps(a) == strip_timestamps(b)
        c = '{"timestamp": "t", "x": 2}'
        assert strip_timestamps(a) != strip_timestamps(c)
