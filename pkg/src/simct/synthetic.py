"""Bundled mismatched tokenizer pair and toy corpus.

A six-letter byte alphabet with two 30-token vocabularies whose merge
inventories overlap in just two strings, so almost every multi-byte
token segments differently under the two tokenizers. The corpus comes
from a seeded first-order byte chain with a strong successor structure
for the teacher to learn.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .opdloop import OpdConfig
from .tokenizer import Vocabulary, segment_greedy
from .toymodel import NGramTable, SamplingConfig, StudentLogitTable, fit_ngram, make_rng

ALPHABET = [b"a", b"b", b"c", b"d", b"e", b"f"]

# Merge inventories share exactly {"ab", "ef"}.
TEACHER_MERGES = [
    "ab", "bc", "cd", "de", "ef", "fa",
    "abc", "bcd", "cde", "def", "efa", "fab",
    "abcd", "bcde", "cdef", "defa",
    "ace", "bdf", "ad", "be", "cf", "da", "eb", "fc",
]
STUDENT_MERGES = [
    "ab", "ef", "ba", "dc", "fe", "ed",
    "ca", "db", "ae", "bf", "ce", "df",
    "eca", "adb", "bec", "cfd", "dae", "ebf",
    "aba", "bab", "cdc", "ded", "efe", "faf",
]

CORPUS_SEED = 20240501
DEFAULT_PROMPTS = [b"abc", b"cde", b"efa", b"bcd"]


def synthetic_teacher_vocabulary() -> Vocabulary:
    return Vocabulary(ALPHABET + [m.encode() for m in TEACHER_MERGES])


def synthetic_student_vocabulary() -> Vocabulary:
    return Vocabulary(ALPHABET + [m.encode() for m in STUDENT_MERGES])


def synthetic_corpus(seed: int = CORPUS_SEED, docs: int = 160) -> list[bytes]:
    """Byte sequences from a seeded first-order chain over the alphabet."""
    rng = make_rng(seed)
    n = len(ALPHABET)
    transition = np.full((n, n), 0.05)
    for i in range(n):
        transition[i, (i + 1) % n] = 0.55
        transition[i, (i + 2) % n] = 0.25
    transition /= transition.sum(axis=1, keepdims=True)
    out: list[bytes] = []
    for _ in range(docs):
        length = int(rng.integers(24, 49))
        state = int(rng.integers(0, n))
        chars = [ALPHABET[state]]
        for _ in range(length - 1):
            state = int(rng.choice(n, p=transition[state]))
            chars.append(ALPHABET[state])
        out.append(b"".join(chars))
    return out


def synthetic_teacher(corpus: list[bytes] | None = None) -> NGramTable:
    """Order-2 teacher fitted on the teacher tokenization of the corpus."""
    vocab = synthetic_teacher_vocabulary()
    if corpus is None:
        corpus = synthetic_corpus()
    sequences = [segment_greedy(vocab, doc).token_ids() for doc in corpus]
    return fit_ngram(sequences, order=2, alpha=0.1, vocab=vocab)


def fresh_student(order: int = 2) -> StudentLogitTable:
    return StudentLogitTable(synthetic_student_vocabulary(), order)


def synthetic_prompts() -> list[bytes]:
    return list(DEFAULT_PROMPTS)


def default_opd_config(seed: int, *, lr: float = 4.0, max_len: int = 16) -> OpdConfig:
    """Training knobs used by the bundled experiments."""
    return OpdConfig(
        sampling=SamplingConfig(seed=seed, max_len=max_len),
        lr=lr,
        batch_size=4,
    )


def write_synthetic_files(outdir: str | Path, seed: int = 7) -> dict[str, str]:
    """Materialize the bundled pair as CLI-consumable files."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    teacher_vocab_path = outdir / "teacher_vocab.txt"
    student_vocab_path = outdir / "student_vocab.txt"
    teacher_vocab_path.write_text(
        "".join(t.decode() + "\n" for t in synthetic_teacher_vocabulary().tokens)
    )
    student_vocab_path.write_text(
        "".join(t.decode() + "\n" for t in synthetic_student_vocabulary().tokens)
    )

    corpus = synthetic_corpus()
    corpus_path = outdir / "corpus.jsonl"
    corpus_path.write_text("".join(json.dumps({"text": d.decode()}) + "\n" for d in corpus))

    teacher = synthetic_teacher(corpus)
    teacher_path = outdir / "teacher_model.json"
    teacher_path.write_text(
        json.dumps(teacher.to_checkpoint("teacher_vocab.txt"), sort_keys=True, indent=2) + "\n"
    )

    prompts_path = outdir / "prompts.jsonl"
    prompts_path.write_text(
        "".join(json.dumps({"text": p.decode()}) + "\n" for p in synthetic_prompts())
    )

    config = {
        "schema_version": 1,
        "teacher_vocab": str(teacher_vocab_path),
        "student_vocab": str(student_vocab_path),
        "teacher_model": str(teacher_path),
        "prompts": str(prompts_path),
        "corpus": str(corpus_path),
        "mode": "simct",
        "steps": 200,
        "lr": 4.0,
        "batch_size": 4,
        "temperature": 0.6,
        "top_p": 0.95,
        "max_len": 16,
        "seed": seed,
    }
    config_path = outdir / "config.json"
    config_path.write_text(json.dumps(config, sort_keys=True, indent=2) + "\n")
    return {
        "teacher_vocab": str(teacher_vocab_path),
        "student_vocab": str(student_vocab_path),
        "teacher_model": str(teacher_path),
        "prompts": str(prompts_path),
        "corpus": str(corpus_path),
        "config": str(config_path),
    }
