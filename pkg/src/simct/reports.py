"""Machine-readable report construction, serialization and validation.

Reports are deterministic for a given (config, seed): keys are sorted,
floats use shortest round-trip repr (distribution dumps use 17
significant digits), and the only varying field is a single top-level
timestamp. Every report is validated against its shipped JSON schema
before it is written.
"""

from __future__ import annotations

import datetime as _dt
import json
from importlib import resources
from pathlib import Path
from typing import Sequence

import jsonschema

from .alignment import AlignedUnit
from .errors import DistributionError, InternalCheckError, SpaceMismatchError
from .opdloop import MismatchReport, StepReport
from .supervision import SupervisionSpace
from .textbytes import escape_token, unescape_token

_SCHEMA_CACHE: dict[str, dict] = {}


def load_schema(name: str) -> dict:
    schema = _SCHEMA_CACHE.get(name)
    if schema is None:
        text = resources.files("simct").joinpath(f"schemas/{name}.schema.json").read_text()
        schema = _SCHEMA_CACHE[name] = json.loads(text)
    return schema


def validate_report(obj, name: str) -> None:
    """Check a report against its schema; failures are internal errors."""
    try:
        jsonschema.validate(obj, load_schema(name))
    except jsonschema.ValidationError as exc:
        raise InternalCheckError(f"report failed schema {name}: {exc.message}") from exc


def fixture_path(name: str) -> Path:
    """Path of a bundled data file (worked-example fixtures)."""
    return Path(str(resources.files("simct").joinpath(f"data/{name}")))


def timestamp() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def dump_jsonl_line(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def unit_record(unit: AlignedUnit, doc: int | None = None) -> dict:
    record = {
        "start": unit.start,
        "end": unit.end,
        "surface": escape_token(unit.surface),
        "teacher_tokens": [escape_token(t) for t in unit.teacher_bytes()],
        "student_tokens": [escape_token(t) for t in unit.student_bytes()],
    }
    if doc is not None:
        record["doc"] = doc
    validate_report(record, "unit_record")
    return record


def step_report_record(report: StepReport) -> dict:
    record = {
        "schema": "simct/step_report/v1",
        "step": report.step,
        "loss_simct": report.loss_simct,
        "loss_simple": report.loss_simple,
        "space_kl": report.space_kl,
        "positions": report.positions,
        "unit_histogram": dict(sorted(report.unit_histogram.items())),
        "delta_estimate": report.delta_estimate,
        "delta_positions": report.delta_positions,
    }
    validate_report(record, "step_report")
    return record


def mismatch_report_record(report: MismatchReport) -> dict:
    record = {
        "schema": "simct/mismatch_report/v1",
        "timestamp": timestamp(),
        "teacher_unaligned_frac": report.teacher_unaligned_frac,
        "student_unaligned_frac": report.student_unaligned_frac,
        "mean_oosv_teacher_mass": report.mean_oosv_teacher_mass,
        "documents": report.documents,
        "skipped_documents": report.skipped_documents,
        "teacher_tokens": report.teacher_tokens,
        "student_tokens": report.student_tokens,
        "aligned_positions": report.aligned_positions,
    }
    validate_report(record, "mismatch_report")
    return record


def coarsen_report_record(
    kl_min: float,
    kl_coarse: float,
    delta: float,
    residual: float,
    groups: Sequence[Sequence[int]],
) -> dict:
    record = {
        "schema": "simct/coarsen_report/v1",
        "timestamp": timestamp(),
        "kl_min": kl_min,
        "kl_coarse": kl_coarse,
        "delta": delta,
        "decomposition_residual": residual,
        "groups": [list(g) for g in groups],
    }
    validate_report(record, "coarsen_report")
    return record


def space_dump(space: SupervisionSpace) -> list[dict]:
    records = [
        {
            "kind": unit.kind.value,
            "surface": escape_token(unit.surface),
            "k_teacher": len(unit.teacher_realization) if unit.teacher_realization else 0,
            "k_student": len(unit.student_realization) if unit.student_realization else 0,
        }
        for unit in space.units
    ]
    validate_report(records, "space_dump")
    return records


def dump_distribution(units: Sequence[bytes], probs: Sequence[float]) -> str:
    """Serialize a distribution with 17-significant-digit probabilities."""
    if len(units) != len(probs):
        raise SpaceMismatchError("units and probs have different lengths")
    unit_json = json.dumps([escape_token(u) for u in units])
    prob_text = ", ".join(f"{p:.17g}" for p in probs)
    return f'{{"units": {unit_json}, "probs": [{prob_text}]}}\n'


def load_distribution(path: str | Path) -> tuple[list[bytes], list[float]]:
    try:
        doc = json.loads(Path(path).read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise DistributionError(f"{path}: invalid JSON: {exc}") from exc
    try:
        validate_report(doc, "distribution_dump")
    except InternalCheckError as exc:
        raise DistributionError(f"{path}: {exc}") from exc
    units = [unescape_token(u) for u in doc["units"]]
    probs = [float(p) for p in doc["probs"]]
    if len(units) != len(probs):
        raise DistributionError(f"{path}: units and probs have different lengths")
    return units, probs


def strip_timestamps(text: str) -> str:
    """Normalize report text for determinism comparisons."""
    import re

    return re.sub(r'"timestamp":\s*"[^"]*"', '"timestamp": "X"', text)
