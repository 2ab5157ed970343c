"""Command-line surface: align, stats, loss, coarsen, distill, selfcheck.

Exit codes: 0 success, 2 invalid input (with a diagnostic naming the
offending file, document or offset), 3 internal invariant violation.
The SIMCT_LOG environment variable sets the log level and nothing else.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .alignment import (
    MinimalityVerdict,
    brute_force_units,
    minimal_aligned_units,
    verify_minimality,
)
from .config import RunConfig, infer_vocab_format, parse_merge_k
from .divergence import Coarsening, decomposition_check, kl_divergence, removed_kl_signal
from .errors import (
    ConfigError,
    DistributionError,
    InternalCheckError,
    SimctError,
    SpaceMismatchError,
    UnsegmentableTextError,
    INPUT_ERRORS,
)
from .opdloop import (
    OpdConfig,
    evaluate_rollouts,
    mismatch_stats,
    rollout_from_text,
    run_distillation,
)
from .reports import (
    coarsen_report_record,
    dump_json,
    dump_jsonl_line,
    load_distribution,
    mismatch_report_record,
    step_report_record,
    timestamp,
    unit_record,
    validate_report,
)
from .supervision import SpaceMode, project_scores
from .textbytes import unescape_token
from .tokenizer import Vocabulary, load_vocabulary, segment_greedy
from .toymodel import NGramTable, SamplingConfig, StudentLogitTable

log = logging.getLogger("simct")


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    for key in (
        "teacher_vocab",
        "student_vocab",
        "vocab_format",
        "teacher_model",
        "student_model",
        "student_order",
        "corpus",
        "prompts",
        "text",
        "rollouts",
        "student_dist",
        "teacher_dist",
        "mode",
        "steps",
        "lr",
        "batch_size",
        "lambda_units",
        "top_k_shared",
        "temperature",
        "top_p",
        "max_len",
        "seed",
        "out",
        "parallelism",
    ):
        if hasattr(args, key):
            overrides[key] = getattr(args, key)
    cfg.apply_overrides(overrides)
    if getattr(args, "merge_k", None) is not None:
        cfg.merge_k = parse_merge_k(args.merge_k)
    if getattr(args, "groups", None) is not None:
        try:
            cfg.groups = json.loads(args.groups)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--groups must be a JSON list of lists: {exc}") from exc
    return cfg


def _load_vocab(path: str, fmt: str | None) -> Vocabulary:
    return load_vocabulary(path, infer_vocab_format(path, fmt))


def _load_model(path: str, vocab: Vocabulary):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"model file not found: {p}")
    try:
        doc = json.loads(p.read_text("utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON: {exc}") from exc
    kind = doc.get("kind")
    if kind == "ngram":
        return NGramTable.from_checkpoint(doc, vocab)
    if kind == "logit_table":
        return StudentLogitTable.from_checkpoint(doc, vocab)
    raise ConfigError(f"{p}: unknown model kind {kind!r}")


def _read_jsonl_texts(path: str, field: str = "text") -> list[dict]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"file not found: {p}")
    docs = []
    for lineno, line in enumerate(p.read_text("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}:{lineno}: invalid JSON: {exc}") from exc
        if not isinstance(doc, dict) or field not in doc:
            raise ConfigError(f'{p}:{lineno}: expected an object with a "{field}" key')
        docs.append(doc)
    return docs


def _write_output(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def cmd_align(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    cfg.require_files("teacher_vocab", "student_vocab")
    teacher_vocab = _load_vocab(cfg.teacher_vocab, cfg.vocab_format)
    student_vocab = _load_vocab(cfg.student_vocab, cfg.vocab_format)
    if (cfg.text is None) == (cfg.corpus is None):
        raise ConfigError("provide exactly one of --text or --corpus")

    if cfg.text is not None:
        texts = [unescape_token(cfg.text)]
        with_doc = False
    else:
        texts = [d["text"].encode("utf-8") for d in _read_jsonl_texts(cfg.corpus)]
        with_doc = True

    lines: list[str] = []
    for doc_index, text in enumerate(texts):
        try:
            teacher_seg = segment_greedy(teacher_vocab, text)
            student_seg = segment_greedy(student_vocab, text)
        except UnsegmentableTextError as exc:
            raise UnsegmentableTextError(
                f"document {doc_index}: {exc}", offset=exc.offset
            ) from exc
        partition = minimal_aligned_units(teacher_seg, student_seg)
        if verify_minimality(partition, teacher_seg, student_seg) is not MinimalityVerdict.OK:
            raise InternalCheckError(f"document {doc_index}: partition failed minimality")
        for unit in partition.units:
            lines.append(dump_jsonl_line(unit_record(unit, doc_index if with_doc else None)))
    _write_output("".join(lines), cfg.out)
    return 0


def cmd_stats(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    cfg.require_files("teacher_vocab", "student_vocab", "teacher_model", "corpus")
    teacher_vocab = _load_vocab(cfg.teacher_vocab, cfg.vocab_format)
    student_vocab = _load_vocab(cfg.student_vocab, cfg.vocab_format)
    teacher = _load_model(cfg.teacher_model, teacher_vocab)
    if not isinstance(teacher, NGramTable):
        raise ConfigError("stats requires an ngram teacher model")
    docs = [d["text"].encode("utf-8") for d in _read_jsonl_texts(cfg.corpus)]
    report = mismatch_stats(
        docs, teacher_vocab, student_vocab, teacher, parallelism=cfg.effective_parallelism()
    )
    _write_output(dump_json(mismatch_report_record(report)), cfg.out)
    return 0


def cmd_loss(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    cfg.require_files(
        "teacher_vocab", "student_vocab", "teacher_model", "student_model", "rollouts"
    )
    teacher_vocab = _load_vocab(cfg.teacher_vocab, cfg.vocab_format)
    student_vocab = _load_vocab(cfg.student_vocab, cfg.vocab_format)
    teacher = _load_model(cfg.teacher_model, teacher_vocab)
    student = _load_model(cfg.student_model, student_vocab)
    items = _read_jsonl_texts(cfg.rollouts)
    rollouts = [
        rollout_from_text(
            teacher_vocab,
            student_vocab,
            item["text"].encode("utf-8"),
            item.get("prompt", "").encode("utf-8"),
        )
        for item in items
    ]
    per_rollout, totals = evaluate_rollouts(
        student, teacher, rollouts, parallelism=cfg.effective_parallelism()
    )
    record = {
        "schema": "simct/loss_report/v1",
        "timestamp": timestamp(),
        "per_rollout": per_rollout,
        **totals,
    }
    validate_report(record, "loss_report")
    _write_output(dump_json(record), cfg.out)
    return 0


def _as_distribution(units: list[bytes], probs: list[float], path: str) -> np.ndarray:
    arr = np.asarray(probs, dtype=np.float64)
    if np.any(arr < 0):
        raise DistributionError(f"{path}: negative probability")
    if abs(float(arr.sum()) - 1.0) > 1e-12:
        raise DistributionError(f"{path}: probabilities sum to {arr.sum()!r}, not 1")
    return arr


def cmd_coarsen(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    cfg.require_files("student_dist", "teacher_dist")
    s_units, s_probs = load_distribution(cfg.student_dist)
    t_units, t_probs = load_distribution(cfg.teacher_dist)
    if s_units != t_units:
        raise SpaceMismatchError(
            "student and teacher distributions list different units"
        )
    q_s = _as_distribution(s_units, s_probs, cfg.student_dist)
    q_t = _as_distribution(t_units, t_probs, cfg.teacher_dist)
    n = len(q_s)
    if cfg.groups is not None:
        coarsening = Coarsening.from_lists(cfg.groups)
    elif cfg.merge_k is None:
        coarsening = Coarsening.merge_all(n)
    else:
        coarsening = Coarsening.merge_adjacent(n, cfg.merge_k)
    if coarsening.n != n:
        raise SpaceMismatchError(
            f"grouping covers {coarsening.n} units, distributions have {n}"
        )
    kl_min = kl_divergence(q_s, q_t)
    delta = removed_kl_signal(q_s, q_t, coarsening)
    residual = decomposition_check(q_s, q_t, coarsening)
    record = coarsen_report_record(
        kl_min=kl_min,
        kl_coarse=kl_min - delta,
        delta=delta,
        residual=residual,
        groups=coarsening.groups,
    )
    _write_output(dump_json(record), cfg.out)
    return 0


def cmd_distill(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    cfg.require_files("teacher_vocab", "student_vocab", "teacher_model", "prompts")
    seed = cfg.require_seed()
    if cfg.out is None:
        raise ConfigError("distill requires --out (an output directory)")
    if cfg.mode not in ("simct", "simple"):
        raise ConfigError(f"mode must be 'simct' or 'simple', got {cfg.mode!r}")
    teacher_vocab = _load_vocab(cfg.teacher_vocab, cfg.vocab_format)
    student_vocab = _load_vocab(cfg.student_vocab, cfg.vocab_format)
    teacher = _load_model(cfg.teacher_model, teacher_vocab)
    if not isinstance(teacher, NGramTable):
        raise ConfigError("distill requires an ngram teacher model")
    if cfg.student_model is not None:
        cfg.require_files("student_model")
        student = _load_model(cfg.student_model, student_vocab)
        if not isinstance(student, StudentLogitTable):
            raise ConfigError("the student model must be a logit table")
    else:
        student = StudentLogitTable(student_vocab, cfg.student_order)
    prompts = [d["text"].encode("utf-8") for d in _read_jsonl_texts(cfg.prompts)]

    opd_cfg = OpdConfig(
        sampling=SamplingConfig(
            seed=seed, max_len=cfg.max_len, temperature=cfg.temperature, top_p=cfg.top_p
        ),
        lr=cfg.lr,
        batch_size=cfg.batch_size,
        lambda_units=cfg.lambda_units,
        merge_k=cfg.merge_k,
        top_k_shared=cfg.top_k_shared,
    )
    mode = SpaceMode.SIMCT if cfg.mode == "simct" else SpaceMode.SHARED
    reports = run_distillation(
        student,
        teacher,
        prompts,
        opd_cfg,
        cfg.steps,
        mode,
        parallelism=cfg.effective_parallelism(),
    )

    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    # The echoed config omits fields that cannot affect results, so
    # reruns at a different parallelism stay byte-identical.
    echo = {
        k: v
        for k, v in dataclasses.asdict(cfg).items()
        if k not in ("out", "parallelism") and v is not None
    }
    header = {"schema": "simct/run_header/v1", "timestamp": timestamp(), "config": echo}
    validate_report(header, "run_header")
    lines = [dump_jsonl_line(header)]
    lines.extend(dump_jsonl_line(step_report_record(r)) for r in reports)
    (outdir / "steps.jsonl").write_text("".join(lines))
    (outdir / "student.json").write_text(
        json.dumps(student.to_checkpoint(cfg.student_vocab), sort_keys=True, indent=2) + "\n"
    )
    return 0


def cmd_selfcheck(args: argparse.Namespace) -> int:
    failures: list[str] = []

    def check(name: str, ok: bool) -> None:
        print(f"{'PASS' if ok else 'FAIL'}: {name}")
        if not ok:
            failures.append(name)

    teacher_vocab = Vocabulary([b"h", b"a", b"p", b"y", b"ha", b"hap", b"py"])
    student_vocab = Vocabulary([b"h", b"a", b"p", b"y", b"ha", b"pp"])
    teacher_seg = segment_greedy(teacher_vocab, b"happy")
    student_seg = segment_greedy(student_vocab, b"happy")
    check("teacher segments 'happy' as hap|py", teacher_seg.token_bytes() == (b"hap", b"py"))
    check(
        "student segments 'happy' as ha|pp|y",
        student_seg.token_bytes() == (b"ha", b"pp", b"y"),
    )
    partition = minimal_aligned_units(teacher_seg, student_seg)
    one_unit = (
        len(partition.units) == 1
        and partition.units[0].start == 0
        and partition.units[0].end == 5
        and partition.units[0].k_teacher == 2
        and partition.units[0].k_student == 3
    )
    check("'happy' aligns to one unit with realizations (2, 3)", one_unit)
    check(
        "sweep construction matches the fragment-graph oracle",
        brute_force_units(teacher_seg, student_seg) == partition,
    )
    check(
        "partition is minimal",
        verify_minimality(partition, teacher_seg, student_seg) is MinimalityVerdict.OK,
    )

    q_s = np.array([0.2, 0.3, 0.5])
    q_t = np.array([0.4, 0.1, 0.5])
    coarsening = Coarsening.from_lists([[0, 1], [2]])
    delta = removed_kl_signal(q_s, q_t, coarsening)
    expected = 0.2 * math.log(0.2 / 0.4) + 0.3 * math.log(0.3 / 0.1)
    check("removed KL matches the worked value", abs(delta - expected) <= 1e-9)
    within = 0.5 * (0.4 * math.log(0.4 / 0.8) + 0.6 * math.log(0.6 / 0.2))
    check("removed KL equals the within-group weighted KL", abs(delta - within) <= 1e-9)
    check(
        "chain-rule decomposition residual <= 1e-9",
        decomposition_check(q_s, q_t, coarsening) <= 1e-9,
    )

    from .supervision import SupervisionSpace, SupervisionUnit

    space = SupervisionSpace(
        (SupervisionUnit.shared(b"x"), SupervisionUnit.shared(b"y")), SpaceMode.SHARED
    )
    dist = project_scores(space, np.array([0.0, math.log(2.0)]))
    check(
        "softmax of scores (0, ln 2) is (1/3, 2/3)",
        abs(dist.probs[0] - 1 / 3) <= 1e-12 and abs(dist.probs[1] - 2 / 3) <= 1e-12,
    )

    if failures:
        raise InternalCheckError(f"selfcheck failed: {', '.join(failures)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="simct",
        description="Cross-tokenizer supervision: alignment, projection, losses, distillation",
    )
    parser.add_argument("--version", action="version", version=f"simct {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file; flags override its fields")
        p.add_argument("--out", help="output path (default: stdout)")
        p.add_argument("--seed", type=int)
        p.add_argument("--parallelism", type=int)

    def add_vocab(p: argparse.ArgumentParser) -> None:
        p.add_argument("--teacher-vocab", dest="teacher_vocab")
        p.add_argument("--student-vocab", dest="student_vocab")
        p.add_argument(
            "--vocab-format", dest="vocab_format", choices=("lines", "json")
        )

    p_align = sub.add_parser("align", help="minimal aligned units as JSONL")
    add_common(p_align)
    add_vocab(p_align)
    p_align.add_argument("--text", help="inline text (escape convention allowed)")
    p_align.add_argument("--corpus", help='JSONL file of {"text": ...} documents')
    p_align.set_defaults(func=cmd_align)

    p_stats = sub.add_parser("stats", help="corpus mismatch diagnostics")
    add_common(p_stats)
    add_vocab(p_stats)
    p_stats.add_argument("--corpus")
    p_stats.add_argument("--teacher-model", dest="teacher_model")
    p_stats.set_defaults(func=cmd_stats)

    p_loss = sub.add_parser("loss", help="one-shot loss evaluation on rollouts")
    add_common(p_loss)
    add_vocab(p_loss)
    p_loss.add_argument("--teacher-model", dest="teacher_model")
    p_loss.add_argument("--student-model", dest="student_model")
    p_loss.add_argument("--rollouts", help='JSONL of {"text", optional "prompt"}')
    p_loss.set_defaults(func=cmd_loss)

    p_coarsen = sub.add_parser("coarsen", help="removed-KL report for a grouping")
    add_common(p_coarsen)
    p_coarsen.add_argument("--student-dist", dest="student_dist")
    p_coarsen.add_argument("--teacher-dist", dest="teacher_dist")
    p_coarsen.add_argument("--merge-k", dest="merge_k", help="integer or 'all'")
    p_coarsen.add_argument("--groups", help="explicit JSON groups, e.g. [[0,1],[2]]")
    p_coarsen.set_defaults(func=cmd_coarsen)

    p_distill = sub.add_parser("distill", help="run on-policy distillation")
    add_common(p_distill)
    add_vocab(p_distill)
    p_distill.add_argument("--teacher-model", dest="teacher_model")
    p_distill.add_argument("--student-model", dest="student_model")
    p_distill.add_argument("--student-order", dest="student_order", type=int)
    p_distill.add_argument("--prompts", help='JSONL of {"text": ...} prompts')
    p_distill.add_argument("--mode", choices=("simct", "simple"))
    p_distill.add_argument("--steps", type=int)
    p_distill.add_argument("--lr", type=float)
    p_distill.add_argument("--batch-size", dest="batch_size", type=int)
    p_distill.add_argument("--lambda", dest="lambda_units", type=float)
    p_distill.add_argument("--merge-k", dest="merge_k", help="integer or 'all'")
    p_distill.add_argument("--top-k-shared", dest="top_k_shared", type=int)
    p_distill.add_argument("--temperature", type=float)
    p_distill.add_argument("--top-p", dest="top_p", type=float)
    p_distill.add_argument("--max-len", dest="max_len", type=int)
    p_distill.set_defaults(func=cmd_distill)

    p_self = sub.add_parser("selfcheck", help="run the bundled worked examples")
    p_self.set_defaults(func=cmd_selfcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("SIMCT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except INPUT_ERRORS as exc:
        print(f"error ({exc.code}): {exc}", file=sys.stderr)
        return 2
    except SimctError as exc:
        print(f"internal error ({exc.code}): {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
