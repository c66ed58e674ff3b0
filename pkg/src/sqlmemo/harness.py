"""Dataset loading, notebook seeding, evaluation runs, and EX reporting.

A run directory collects everything one evaluation produces: an append-only
line-delimited run log (one record per branch per item plus one per-item
summary), persisted notebook snapshots per branch, and the final report. Logs
carry no timestamps, so a rerun with the same inputs is byte-identical and a
killed run resumes from the last completed item.
"""

from __future__ import annotations

import json
import logging
import random
import sqlite3
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import notebook
from .embedding import EncoderConfig
from .execution import DEFAULT_TIMEOUT_MS, db_path, execute, outcomes_equal
from .notebook import DemonstrationPlan, KnowledgeBase
from .pipeline import DIFFICULTIES, INFO_MODES, PipelineConfig, TaskItem
from .providers import CompletionParams
from .voting import CANONICAL_RATES, BranchSet, run as cross_run

log = logging.getLogger("sqlmemo")

RUN_LOG_NAME = "run_log.jsonl"
REPORT_NAME = "report.json"
NOTEBOOKS_DIR = "notebooks"

INIT_MODES = ("empty", "seed", "preloaded")


class DatasetError(Exception):
    """A question file failed to parse or validate."""


@dataclass
class RunConfig:
    """Everything that shapes a run, minus the provider object itself."""

    k: int = 4
    rates: tuple = CANONICAL_RATES
    temperature: float = 0.0
    max_output_tokens: int = 1024
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    info_mode: str = "high"
    continuous_accumulation: bool = True
    init: str = "empty"
    seed_n: int = 0
    preload_dir: str = ""
    seed_sample_seed: int = 0
    db_root: str = "."
    shared_kb: bool = False
    encoder: EncoderConfig = field(default_factory=EncoderConfig)

    def __post_init__(self) -> None:
        if isinstance(self.rates, (int, float)):
            self.rates = (float(self.rates),)
        self.rates = tuple(float(r) for r in self.rates)
        if self.k < 0:
            raise ValueError(f"k must be non-negative, got {self.k}")
        for r in self.rates:
            if not 0.0 <= r <= 1.0:
                raise ValueError(f"rates must lie in [0, 1], got {r}")
        if self.info_mode not in INFO_MODES:
            raise ValueError(f"info_mode must be one of {INFO_MODES}, got {self.info_mode!r}")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}, got {self.init!r}")
        if self.init == "preloaded" and not self.preload_dir:
            raise ValueError("init 'preloaded' requires preload_dir")

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            db_root=str(self.db_root),
            info_mode=self.info_mode,
            continuous_accumulation=self.continuous_accumulation,
            timeout_ms=self.timeout_ms,
            completion=CompletionParams(temperature=self.temperature,
                                        max_output_tokens=self.max_output_tokens),
        )

    def describe(self) -> dict:
        # Echoed into the report; paths deliberately excluded so a report's
        # bytes do not depend on where the run happened.
        return {
            "k": self.k,
            "rates": list(self.rates),
            "temperature": self.temperature,
            "timeout_ms": self.timeout_ms,
            "info_mode": self.info_mode,
            "continuous_accumulation": self.continuous_accumulation,
            "init": self.init,
            "seed_n": self.seed_n,
            "seed_sample_seed": self.seed_sample_seed,
            "shared_kb": self.shared_kb,
        }


def load_items(path, db_root=None) -> list:
    """Parse a BIRD-style question file into TaskItems, order preserved.

    Field mapping: evidence becomes the hint, SQL the gold query. Records
    without a difficulty label default to simple (some dataset variants omit
    the field), with a warning so silent downgrades don't pass unnoticed.
    """
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(raw, list):
        raise DatasetError(f"{path}: expected a JSON array of question records")
    items = []
    seen = set()
    for idx, rec in enumerate(raw):
        if not isinstance(rec, dict):
            raise DatasetError(f"record {idx}: expected an object")
        for required in ("question", "db_id"):
            if required not in rec:
                raise DatasetError(f"record {idx}: missing field {required!r}")
        sql = rec.get("SQL") or rec.get("gold_sql")
        if not sql:
            raise DatasetError(f"record {idx}: missing field 'SQL'")
        qid = str(rec.get("question_id", idx))
        if qid in seen:
            raise DatasetError(f"record {idx}: duplicate question_id {qid!r}")
        seen.add(qid)
        difficulty = rec.get("difficulty") or ""
        if not difficulty:
            warnings.warn(f"record {idx} ({qid}): no difficulty label, defaulting to simple")
            difficulty = "simple"
        try:
            item = TaskItem(
                question_id=qid,
                db_id=rec["db_id"],
                question=rec["question"],
                hint=rec.get("evidence", "") or "",
                gold_sql=sql,
                difficulty=difficulty,
            )
        except ValueError as exc:
            raise DatasetError(f"record {idx}: {exc}") from exc
        if db_root is not None:
            dbf = db_path(db_root, item.db_id)
            if not dbf.is_file():
                raise DatasetError(f"record {idx}: db_id {item.db_id!r} does not resolve to {dbf}")
        items.append(item)
    return items


def schema_text(db_file) -> str:
    """Original DDL of all user tables and views, name-ordered, blank-line separated."""
    path = Path(db_file)
    if not path.is_file():
        raise FileNotFoundError(f"database file not found: {path}")
    conn = sqlite3.connect(f"file:{path}?mode=ro", uri=True)
    try:
        rows = conn.execute(
            "SELECT sql FROM sqlite_master"
            " WHERE type IN ('table', 'view')"
            " AND name NOT LIKE 'sqlite_%'"
            " AND sql IS NOT NULL"
            " ORDER BY name"
        ).fetchall()
    finally:
        conn.close()
    return "\n\n".join(r[0] for r in rows)


def rate_dir_name(rate: float) -> str:
    return f"rate_{rate:g}"


def build_branches(cfg: RunConfig) -> BranchSet:
    """Branch stores per cfg.init; seeding itself is a separate explicit step."""
    if cfg.init == "preloaded":
        if cfg.shared_kb:
            raise ValueError("preloaded init does not support a shared store")
        pairs = []
        for r in cfg.rates:
            store = Path(cfg.preload_dir) / rate_dir_name(r)
            pairs.append((DemonstrationPlan(k=cfg.k, correct_rate=r), notebook.load(store)))
        return BranchSet(branches=pairs)
    return BranchSet.fresh(cfg.k, cfg.rates, cfg.encoder, shared_kb=cfg.shared_kb)


def seed(train_items, n: int, branches: BranchSet, provider, cfg: RunConfig) -> int:
    """Populate the notebooks by running n sampled training items end to end.

    No scoring happens; accumulation is forced on regardless of cfg. Items
    whose processing blows up are logged and skipped so one broken record
    cannot sink the whole seeding pass.
    """
    if n > len(train_items):
        raise ValueError(f"cannot seed {n} items from a pool of {len(train_items)}")
    if n <= 0:
        return 0
    sample = random.Random(cfg.seed_sample_seed).sample(train_items, n)
    pcfg = replace(cfg.pipeline_config(), continuous_accumulation=True)
    processed = 0
    for item in sample:
        try:
            schema = schema_text(db_path(cfg.db_root, item.db_id))
            cross_run(item, branches, provider, schema, pcfg, origin="seed")
            processed += 1
        except Exception as exc:
            log.warning("seeding skipped item %s: %s", item.question_id, exc)
    return processed


def ex_pct(correct: int, count: int) -> float:
    return round(100.0 * correct / count, 2) if count else 0.0


def summarize(verdicts) -> dict:
    """Bucket verdicts by difficulty and attach EX percentages."""
    buckets = {d: {"count": 0, "correct": 0} for d in DIFFICULTIES}
    for v in verdicts:
        bucket = buckets[v["difficulty"]]
        bucket["count"] += 1
        bucket["correct"] += int(bool(v["verdict"]))
    for bucket in buckets.values():
        bucket["ex"] = ex_pct(bucket["correct"], bucket["count"])
    total_count = sum(b["count"] for b in buckets.values())
    total_correct = sum(b["correct"] for b in buckets.values())
    total = {"count": total_count, "correct": total_correct,
             "ex": ex_pct(total_correct, total_count)}
    return {"by_difficulty": buckets, "total": total}


@dataclass
class EvalReport:
    by_difficulty: dict
    total: dict
    verdicts: list
    provider_calls: int
    tokens_used: int
    config: dict

    def to_dict(self) -> dict:
        return {
            "by_difficulty": self.by_difficulty,
            "total": self.total,
            "verdicts": self.verdicts,
            "provider_calls": self.provider_calls,
            "tokens_used": self.tokens_used,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, sort_keys=True, indent=2) + "\n"


def _dump_line(record: dict) -> str:
    return json.dumps(record, ensure_ascii=False, sort_keys=True, separators=(",", ":")) + "\n"


def read_run_log(path) -> list:
    """Parse a run log, tolerating a crash-truncated final line."""
    records = []
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    for i, line in enumerate(lines):
        if not line:
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError:
            if i == len(lines) - 1 or (i == len(lines) - 2 and not lines[-1]):
                break  # interrupted mid-write; drop the partial tail
            raise
    return records


def _delta_record(delta) -> dict:
    return {"kind": delta.kind, "seq": delta.seq, "reason": delta.reason}


def _branch_record(qid: str, out) -> dict:
    return {
        "type": "branch",
        "question_id": qid,
        "rate": out.correct_rate,
        "prompt_digests": dict(out.prompt_digests),
        "first_sql": out.first_sql,
        "exec_error": out.exec_error,
        "reflected_sql": out.reflected_sql,
        "final_sql": out.final_sql,
        "final_exec": out.final_exec.summary() if out.final_exec is not None else None,
        "provider_calls": out.provider_calls,
    }


def _persist_branches(branches: BranchSet, nb_root: Path) -> None:
    if branches.shared_kb:
        notebook.persist(branches.branches[0][1], nb_root / "shared")
        return
    for plan, kb in branches.branches:
        notebook.persist(kb, nb_root / rate_dir_name(plan.correct_rate))


def _reload_branches(branches: BranchSet, nb_root: Path) -> BranchSet:
    if branches.shared_kb:
        store = nb_root / "shared"
        if store.is_dir():
            kb = notebook.load(store)
            pairs = [(plan, kb) for plan, _ in branches.branches]
            return BranchSet(branches=pairs, shared_kb=True)
        return branches
    pairs = []
    for plan, kb in branches.branches:
        store = nb_root / rate_dir_name(plan.correct_rate)
        pairs.append((plan, notebook.load(store) if store.is_dir() else kb))
    return BranchSet(branches=pairs)


def _script_counts(branch_records) -> dict:
    counts = {"generate_sql": 0, "thought_process": 0, "reflect_sql": 0, "mistake_tip": 0}
    for rec in branch_records:
        for kind in rec.get("prompt_digests", {}):
            counts[kind] += 1
    return counts


def evaluate(items, branches: BranchSet, provider, cfg: RunConfig, run_dir,
             resume: bool = False, item_ids=None) -> EvalReport:
    """Score items in file order, logging incrementally.

    With resume=True, items that already carry a completed summary record in
    the existing log are skipped: their verdicts are replayed from the log,
    notebooks reload from the persisted snapshots, and a scripted provider is
    fast-forwarded past the completions those items consumed.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    log_path = run_dir / RUN_LOG_NAME
    nb_root = run_dir / NOTEBOOKS_DIR
    pcfg = cfg.pipeline_config()

    if item_ids is not None:
        wanted = {str(i) for i in item_ids}
        missing = wanted - {it.question_id for it in items}
        if missing:
            raise DatasetError(f"item ids not in dataset: {sorted(missing)}")
        items = [it for it in items if it.question_id in wanted]

    completed: dict[str, dict] = {}
    completed_branches: dict[str, list] = {}
    if resume and log_path.exists():
        branch_acc: dict[str, list] = {}
        for rec in read_run_log(log_path):
            qid = rec["question_id"]
            if rec["type"] == "branch":
                branch_acc.setdefault(qid, []).append(rec)
            elif rec["type"] == "item":
                completed[qid] = rec
        completed_branches = {qid: branch_acc.get(qid, []) for qid in completed}
        if hasattr(provider, "fast_forward"):
            provider.fast_forward(_script_counts(
                [r for recs in completed_branches.values() for r in recs]))
        if cfg.continuous_accumulation and nb_root.is_dir():
            branches = _reload_branches(branches, nb_root)
        # Rewrite the log to exactly the completed items' records, in item
        # order, dropping any partial tail from the crash.
        with log_path.open("w", encoding="utf-8") as fh:
            for item in items:
                if item.question_id in completed:
                    for rec in completed_branches[item.question_id]:
                        fh.write(_dump_line(rec))
                    fh.write(_dump_line(completed[item.question_id]))
    elif log_path.exists():
        log_path.unlink()

    verdicts = []
    provider_calls = 0
    tokens_used = 0

    for item in items:
        if item.question_id in completed:
            rec = completed[item.question_id]
            verdicts.append({
                "question_id": rec["question_id"],
                "difficulty": rec["difficulty"],
                "verdict": rec["verdict"],
                "chosen_rate": rec.get("chosen_rate"),
            })
            provider_calls += rec.get("provider_calls", 0)
            tokens_used += rec.get("tokens_used", 0)
            continue

        tokens_before = getattr(provider, "tokens_used", 0)
        records = []
        try:
            dbf = db_path(cfg.db_root, item.db_id)
            schema = schema_text(dbf)
            gold_exec = execute(dbf, item.gold_sql, cfg.timeout_ms)
            if gold_exec.status != "rows":
                log.warning("item %s: gold SQL did not execute cleanly (%s)",
                            item.question_id, gold_exec.status)
            final = cross_run(item, branches, provider, schema, pcfg, gold_exec=gold_exec)
            chosen = final.branch_outcomes[final.chosen_index]
            verdict = outcomes_equal(chosen.final_exec, gold_exec)
            item_calls = sum(o.provider_calls for o in final.branch_outcomes)
            for out, delta in zip(final.branch_outcomes, final.deltas):
                rec = _branch_record(item.question_id, out)
                rec["delta"] = _delta_record(delta)
                records.append(rec)
            records.append({
                "type": "item",
                "question_id": item.question_id,
                "difficulty": item.difficulty,
                "verdict": verdict,
                "chosen_rate": final.chosen_rate,
                "chosen_index": final.chosen_index,
                "chosen_sql": final.chosen_sql,
                "vote_group_sizes": final.vote_group_sizes,
                "gold_status": gold_exec.status,
                "provider_calls": item_calls,
                "tokens_used": getattr(provider, "tokens_used", 0) - tokens_before,
            })
        except Exception as exc:
            log.warning("item %s aborted: %s", item.question_id, exc)
            records = [{
                "type": "item",
                "question_id": item.question_id,
                "difficulty": item.difficulty,
                "verdict": False,
                "chosen_rate": None,
                "chosen_index": None,
                "chosen_sql": "",
                "vote_group_sizes": [],
                "gold_status": "not_run",
                "error": str(exc),
                "provider_calls": 0,
                "tokens_used": getattr(provider, "tokens_used", 0) - tokens_before,
            }]
        with log_path.open("a", encoding="utf-8") as fh:
            for rec in records:
                fh.write(_dump_line(rec))
        if cfg.continuous_accumulation:
            _persist_branches(branches, nb_root)
        summary_rec = records[-1]
        verdicts.append({
            "question_id": summary_rec["question_id"],
            "difficulty": summary_rec["difficulty"],
            "verdict": summary_rec["verdict"],
            "chosen_rate": summary_rec.get("chosen_rate"),
        })
        provider_calls += summary_rec.get("provider_calls", 0)
        tokens_used += summary_rec.get("tokens_used", 0)

    stats = summarize(verdicts)
    report = EvalReport(
        by_difficulty=stats["by_difficulty"],
        total=stats["total"],
        verdicts=verdicts,
        provider_calls=provider_calls,
        tokens_used=tokens_used,
        config=cfg.describe(),
    )
    (run_dir / REPORT_NAME).write_text(report.to_json(), encoding="utf-8")
    return report
