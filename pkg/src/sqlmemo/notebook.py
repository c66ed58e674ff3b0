"""The dual experience notebooks: append-only, persisted, similarity-searchable.

A knowledge base holds a correct notebook (solved questions with their SQL and
reasoning) and a mistake notebook (failed questions with the erroneous SQL,
the gold SQL, and a reflection tip). Retrieval picks the k most similar
entries split between the two notebooks at a configurable correct-rate.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedding import EncoderConfig, embed

CORRECT_FILE = "correct.jsonl"
MISTAKE_FILE = "mistakes.jsonl"
MANIFEST_FILE = "manifest.json"

ORIGINS = ("seed", "accumulated")


class NotebookFormatError(Exception):
    """A persisted notebook file failed to parse or validate."""


@dataclass(frozen=True)
class CorrectEntry:
    """One solved task: question, hint, final SQL, and the reasoning behind it."""

    seq: int
    question: str
    hint: str
    sql: str
    thought: str
    embedding: tuple
    origin: str
    db_id: str = ""

    def to_record(self) -> dict:
        return {
            "seq": self.seq,
            "question": self.question,
            "hint": self.hint,
            "sql": self.sql,
            "thought": self.thought,
            "embedding": list(self.embedding),
            "origin": self.origin,
            "db_id": self.db_id,
        }

    @classmethod
    def from_record(cls, d: dict) -> "CorrectEntry":
        return cls(
            seq=d["seq"],
            question=d["question"],
            hint=d["hint"],
            sql=d["sql"],
            thought=d["thought"],
            embedding=tuple(d["embedding"]),
            origin=d["origin"],
            db_id=d.get("db_id", ""),
        )


@dataclass(frozen=True)
class MistakeEntry:
    """One failed task: what was generated, what went wrong, and the lesson.

    ``exec_error`` and ``reflected_sql`` are None unless a reflection pass ran
    (i.e. the first SQL raised an engine error and was re-generated).
    """

    seq: int
    question: str
    hint: str
    first_sql: str
    gold_sql: str
    tip: str
    embedding: tuple
    origin: str
    exec_error: str | None = None
    reflected_sql: str | None = None
    db_id: str = ""

    def to_record(self) -> dict:
        return {
            "seq": self.seq,
            "question": self.question,
            "hint": self.hint,
            "first_sql": self.first_sql,
            "exec_error": self.exec_error,
            "reflected_sql": self.reflected_sql,
            "gold_sql": self.gold_sql,
            "tip": self.tip,
            "embedding": list(self.embedding),
            "origin": self.origin,
            "db_id": self.db_id,
        }

    @classmethod
    def from_record(cls, d: dict) -> "MistakeEntry":
        return cls(
            seq=d["seq"],
            question=d["question"],
            hint=d["hint"],
            first_sql=d["first_sql"],
            exec_error=d.get("exec_error"),
            reflected_sql=d.get("reflected_sql"),
            gold_sql=d["gold_sql"],
            tip=d["tip"],
            embedding=tuple(d["embedding"]),
            origin=d["origin"],
            db_id=d.get("db_id", ""),
        )


@dataclass(frozen=True)
class DemonstrationPlan:
    """Total demonstration count k and the share drawn from the correct notebook."""

    k: int
    correct_rate: float

    def __post_init__(self) -> None:
        if self.k < 0:
            raise ValueError(f"k must be non-negative, got {self.k}")
        if not 0.0 <= self.correct_rate <= 1.0:
            raise ValueError(f"correct_rate must be in [0, 1], got {self.correct_rate}")


@dataclass(frozen=True)
class DemonstrationSet:
    """Retrieved picks, each list similarity-descending."""

    correct_picks: tuple
    mistake_picks: tuple

    def __len__(self) -> int:
        return len(self.correct_picks) + len(self.mistake_picks)


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def top_k(entries, query_vec, n: int):
    """The n most similar entries, cosine-descending, older entry winning ties.

    Exhaustive scan; notebooks stay small enough that an index would only add
    moving parts.
    """
    if n < 0:
        raise ValueError(f"n must be non-negative, got {n}")
    if n == 0 or not entries:
        return []
    q = np.asarray(query_vec, dtype=np.float64)
    scored = []
    for e in entries:
        v = np.asarray(e.embedding, dtype=np.float64)
        if v.shape != q.shape:
            raise ValueError(f"dimension mismatch: entry {e.seq} has {v.shape[0]}, query has {q.shape[0]}")
        scored.append((-float(np.dot(v, q)), e.seq, e))
    scored.sort(key=lambda t: (t[0], t[1]))
    return [e for _, _, e in scored[:n]]


class KnowledgeBase:
    """Append-only store of both notebooks sharing one encoder config."""

    def __init__(self, encoder: EncoderConfig | None = None):
        self.encoder = encoder or EncoderConfig()
        self.correct: list[CorrectEntry] = []
        self.mistakes: list[MistakeEntry] = []

    def add_correct(self, question: str, hint: str, sql: str, thought: str,
                    origin: str = "accumulated", db_id: str = "") -> int:
        if not sql:
            raise ValueError("sql must be non-empty")
        if origin not in ORIGINS:
            raise ValueError(f"origin must be one of {ORIGINS}, got {origin!r}")
        entry = CorrectEntry(
            seq=len(self.correct) + 1,
            question=question,
            hint=hint,
            sql=sql,
            thought=thought,
            embedding=tuple(float(x) for x in embed(question, self.encoder)),
            origin=origin,
            db_id=db_id,
        )
        self.correct.append(entry)
        return entry.seq

    def add_mistake(self, question: str, hint: str, first_sql: str, gold_sql: str, tip: str,
                    exec_error: str | None = None, reflected_sql: str | None = None,
                    origin: str = "accumulated", db_id: str = "") -> int:
        if not gold_sql:
            raise ValueError("gold_sql must be non-empty")
        if origin not in ORIGINS:
            raise ValueError(f"origin must be one of {ORIGINS}, got {origin!r}")
        entry = MistakeEntry(
            seq=len(self.mistakes) + 1,
            question=question,
            hint=hint,
            first_sql=first_sql,
            exec_error=exec_error,
            reflected_sql=reflected_sql,
            gold_sql=gold_sql,
            tip=tip,
            embedding=tuple(float(x) for x in embed(question, self.encoder)),
            origin=origin,
            db_id=db_id,
        )
        self.mistakes.append(entry)
        return entry.seq

    def select_demonstrations(self, query_vec, plan: DemonstrationPlan) -> DemonstrationSet:
        """Split plan.k picks between the notebooks at plan.correct_rate.

        The correct-notebook target is round-half-up of k * rate; when one
        notebook cannot fill its target the other backfills, so early in a run
        (e.g. an empty mistake notebook) the prompt still gets min(k, total)
        demonstrations.
        """
        c_target = _round_half_up(plan.k * plan.correct_rate)
        m_target = plan.k - c_target
        correct_picks = top_k(self.correct, query_vec, c_target)
        mistake_picks = top_k(self.mistakes, query_vec, m_target)
        shortfall = plan.k - len(correct_picks) - len(mistake_picks)
        if shortfall > 0 and len(mistake_picks) < len(self.mistakes):
            mistake_picks = top_k(self.mistakes, query_vec, len(mistake_picks) + shortfall)
            shortfall = plan.k - len(correct_picks) - len(mistake_picks)
        if shortfall > 0 and len(correct_picks) < len(self.correct):
            correct_picks = top_k(self.correct, query_vec, len(correct_picks) + shortfall)
        return DemonstrationSet(
            correct_picks=tuple(correct_picks),
            mistake_picks=tuple(mistake_picks),
        )


def _dump_record(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, sort_keys=True, separators=(",", ":"))


def persist(kb: KnowledgeBase, directory) -> None:
    """Write the notebooks as line-delimited records plus a manifest.

    Refuses to overwrite a directory whose manifest records a different
    encoder config: embeddings are frozen at insert time and a store never
    mixes configs.
    """
    directory = Path(directory)
    manifest_path = directory / MANIFEST_FILE
    if manifest_path.exists():
        existing = json.loads(manifest_path.read_text(encoding="utf-8"))
        if existing.get("encoder") != kb.encoder.to_dict():
            raise NotebookFormatError(
                f"encoder config mismatch with existing store at {directory}"
            )
    directory.mkdir(parents=True, exist_ok=True)
    correct_lines = "".join(_dump_record(e.to_record()) + "\n" for e in kb.correct)
    mistake_lines = "".join(_dump_record(e.to_record()) + "\n" for e in kb.mistakes)
    (directory / CORRECT_FILE).write_text(correct_lines, encoding="utf-8")
    (directory / MISTAKE_FILE).write_text(mistake_lines, encoding="utf-8")
    manifest = {
        "encoder": kb.encoder.to_dict(),
        "correct_count": len(kb.correct),
        "mistake_count": len(kb.mistakes),
    }
    manifest_path.write_text(
        json.dumps(manifest, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )


def _load_lines(path: Path, parse, dimension: int) -> list:
    entries = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                record = json.loads(line)
                entry = parse(record)
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise NotebookFormatError(f"{path.name}:{lineno}: malformed record: {exc}") from exc
            if len(entry.embedding) != dimension:
                raise NotebookFormatError(
                    f"{path.name}:{lineno}: embedding dimension {len(entry.embedding)}, store expects {dimension}"
                )
            if entry.seq != len(entries) + 1:
                raise NotebookFormatError(
                    f"{path.name}:{lineno}: seq {entry.seq} out of order (expected {len(entries) + 1})"
                )
            entries.append(entry)
    return entries


def load(directory) -> KnowledgeBase:
    """Read a persisted store back; malformed lines fail the whole load."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_FILE
    if not manifest_path.is_file():
        raise NotebookFormatError(f"no manifest at {directory}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    kb = KnowledgeBase(EncoderConfig.from_dict(manifest["encoder"]))
    kb.correct = _load_lines(directory / CORRECT_FILE, CorrectEntry.from_record, kb.encoder.dimension)
    kb.mistakes = _load_lines(directory / MISTAKE_FILE, MistakeEntry.from_record, kb.encoder.dimension)
    if len(kb.correct) != manifest.get("correct_count") or len(kb.mistakes) != manifest.get("mistake_count"):
        raise NotebookFormatError(
            f"manifest counts disagree with notebook files at {directory}"
        )
    return kb


def load_fixed_examples(kb: KnowledgeBase, path) -> int:
    """Seed a completely empty store from a hand-written examples file.

    The file is a JSON object with "correct" and "mistake" lists mirroring the
    notebook record fields (minus seq and embedding). Only applied when both
    notebooks are empty; returns the number of entries added.
    """
    if kb.correct or kb.mistakes:
        return 0
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    added = 0
    for rec in data.get("correct", []):
        kb.add_correct(
            question=rec["question"],
            hint=rec.get("hint", ""),
            sql=rec["sql"],
            thought=rec.get("thought", ""),
            origin="seed",
            db_id=rec.get("db_id", ""),
        )
        added += 1
    for rec in data.get("mistake", []):
        kb.add_mistake(
            question=rec["question"],
            hint=rec.get("hint", ""),
            first_sql=rec.get("first_sql", ""),
            gold_sql=rec["gold_sql"],
            tip=rec.get("tip", ""),
            origin="seed",
            db_id=rec.get("db_id", ""),
        )
        added += 1
    return added
