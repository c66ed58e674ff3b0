"""Single-branch reasoning: retrieve, generate, execute, reflect, update.

One call to answer() takes a task through demonstration retrieval, SQL
generation, an optional error-driven reflection pass, and final execution.
rethink_update() then compares the result against the gold query and appends
the task to whichever notebook it earned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .embedding import embed
from .execution import DEFAULT_TIMEOUT_MS, ExecOutcome, db_path, execute, outcomes_equal
from .notebook import DemonstrationPlan, DemonstrationSet, KnowledgeBase
from .prompts import NoSqlFound, PromptContext, PromptKind, extract_sql, render
from .providers import CompletionParams, complete, prompt_digest

DIFFICULTIES = ("simple", "moderate", "challenging")
INFO_MODES = ("high", "low")

NO_SQL_MESSAGE = "no SQL extracted"


@dataclass(frozen=True)
class TaskItem:
    question_id: str
    db_id: str
    question: str
    hint: str
    gold_sql: str
    difficulty: str = "simple"

    def __post_init__(self) -> None:
        if not self.gold_sql:
            raise ValueError(f"task {self.question_id!r}: gold_sql must be non-empty")
        if self.difficulty not in DIFFICULTIES:
            raise ValueError(
                f"task {self.question_id!r}: difficulty must be one of {DIFFICULTIES}, got {self.difficulty!r}"
            )


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs shared by every branch of a run."""

    db_root: str = "."
    info_mode: str = "high"
    continuous_accumulation: bool = True
    timeout_ms: int = DEFAULT_TIMEOUT_MS
    completion: CompletionParams = field(default_factory=CompletionParams)

    def __post_init__(self) -> None:
        if self.info_mode not in INFO_MODES:
            raise ValueError(f"info_mode must be one of {INFO_MODES}, got {self.info_mode!r}")
        if self.timeout_ms <= 0:
            raise ValueError(f"timeout_ms must be positive, got {self.timeout_ms}")


@dataclass
class BranchOutcome:
    """Everything one branch produced for one task, in call order."""

    correct_rate: float
    demonstrations: DemonstrationSet
    first_sql: str = ""
    thought: str = ""
    exec_error: str | None = None
    reflected_sql: str | None = None
    final_sql: str = ""
    final_exec: ExecOutcome | None = None
    provider_calls: int = 0
    prompt_digests: dict = field(default_factory=dict)


@dataclass(frozen=True)
class NotebookDelta:
    kind: str  # "added_correct" | "added_mistake" | "no_update"
    seq: int | None = None
    reason: str = ""

    @classmethod
    def added_correct(cls, seq: int) -> "NotebookDelta":
        return cls(kind="added_correct", seq=seq)

    @classmethod
    def added_mistake(cls, seq: int) -> "NotebookDelta":
        return cls(kind="added_mistake", seq=seq)

    @classmethod
    def no_update(cls, reason: str = "") -> "NotebookDelta":
        return cls(kind="no_update", reason=reason)


def _base_ctx(item: TaskItem, schema_text: str) -> dict:
    return {"schema_text": schema_text, "question": item.question, "hint": item.hint}


def answer(item: TaskItem, kb: KnowledgeBase, plan: DemonstrationPlan, provider,
           schema_text: str, cfg: PipelineConfig) -> BranchOutcome:
    """Produce this branch's SQL for one task, without touching the notebooks.

    Exactly one reflection pass runs, and only when the first execution raised
    an engine error or timed out; a wrong-but-clean result is left for
    rethink_update to judge. A completion with no extractable SQL yields an
    empty final_sql with a synthetic Failure so downstream stages need no
    special case.
    """
    query_vec = embed(item.question, kb.encoder)
    demos = kb.select_demonstrations(query_vec, plan)
    out = BranchOutcome(correct_rate=plan.correct_rate, demonstrations=demos)
    base = _base_ctx(item, schema_text)

    gen_prompt = render(PromptKind.GENERATE_SQL, PromptContext(**base, demonstrations=demos))
    out.prompt_digests["generate_sql"] = prompt_digest(gen_prompt)
    generation = complete(provider, gen_prompt, cfg.completion)
    out.provider_calls += 1
    try:
        out.first_sql = extract_sql(generation)
    except NoSqlFound:
        out.final_exec = ExecOutcome.failure(NO_SQL_MESSAGE)
        return out

    if cfg.info_mode == "high":
        thought_prompt = render(PromptKind.THOUGHT_PROCESS, PromptContext(**base, sql=out.first_sql))
        out.prompt_digests["thought_process"] = prompt_digest(thought_prompt)
        out.thought = complete(provider, thought_prompt, cfg.completion)
        out.provider_calls += 1

    db_file = db_path(cfg.db_root, item.db_id)
    first_exec = execute(db_file, out.first_sql, cfg.timeout_ms)
    if first_exec.status == "rows":
        out.final_sql = out.first_sql
        out.final_exec = first_exec
        return out

    if first_exec.status == "timeout":
        out.exec_error = f"query timed out after {cfg.timeout_ms} ms"
    else:
        out.exec_error = first_exec.error
    reflect_prompt = render(
        PromptKind.REFLECT_SQL,
        PromptContext(**base, demonstrations=demos, sql=out.first_sql, exec_error=out.exec_error),
    )
    out.prompt_digests["reflect_sql"] = prompt_digest(reflect_prompt)
    reflection = complete(provider, reflect_prompt, cfg.completion)
    out.provider_calls += 1
    try:
        out.reflected_sql = extract_sql(reflection)
    except NoSqlFound:
        out.reflected_sql = ""
        out.final_exec = ExecOutcome.failure(NO_SQL_MESSAGE)
        return out
    out.final_sql = out.reflected_sql
    out.final_exec = execute(db_file, out.reflected_sql, cfg.timeout_ms)
    return out


def _strip_tip_prefix(text: str) -> str:
    stripped = text.strip()
    if stripped.lower().startswith("# tip:"):
        stripped = stripped[len("# tip:"):].strip()
    return stripped


def rethink_update(outcome: BranchOutcome, item: TaskItem, kb: KnowledgeBase, provider,
                   schema_text: str, cfg: PipelineConfig,
                   gold_exec: ExecOutcome | None = None,
                   origin: str = "accumulated") -> NotebookDelta:
    """Compare the branch result against gold and append to a notebook.

    Pass gold_exec when the caller already executed the gold query (the
    harness does, for scoring); otherwise it runs here. A gold query that
    itself fails leaves the notebooks alone rather than planting a bogus
    mistake entry.
    """
    if not cfg.continuous_accumulation:
        return NotebookDelta.no_update(reason="accumulation off")
    if gold_exec is None:
        gold_exec = execute(db_path(cfg.db_root, item.db_id), item.gold_sql, cfg.timeout_ms)
    if gold_exec.status != "rows":
        return NotebookDelta.no_update(reason="invalid gold")

    assert outcome.final_exec is not None
    if outcomes_equal(outcome.final_exec, gold_exec):
        seq = kb.add_correct(item.question, item.hint, outcome.final_sql, outcome.thought,
                             origin=origin, db_id=item.db_id)
        return NotebookDelta.added_correct(seq)

    tip = ""
    if cfg.info_mode == "high":
        tip_prompt = render(
            PromptKind.MISTAKE_TIP,
            PromptContext(**_base_ctx(item, schema_text), sql=outcome.first_sql,
                          exec_error=outcome.exec_error, reflected_sql=outcome.reflected_sql,
                          gold_sql=item.gold_sql),
        )
        outcome.prompt_digests["mistake_tip"] = prompt_digest(tip_prompt)
        tip = _strip_tip_prefix(complete(provider, tip_prompt, cfg.completion))
        outcome.provider_calls += 1
    seq = kb.add_mistake(item.question, item.hint, outcome.first_sql, item.gold_sql, tip,
                         exec_error=outcome.exec_error, reflected_sql=outcome.reflected_sql,
                         origin=origin, db_id=item.db_id)
    return NotebookDelta.added_mistake(seq)


def record_human_verdict(outcome: BranchOutcome, question: str, hint: str, db_id: str,
                         correct: bool, kb: KnowledgeBase, provider, schema_text: str,
                         cfg: PipelineConfig, gold_sql: str = "") -> NotebookDelta:
    """Notebook update driven by a reviewer's verdict instead of gold execution.

    The interactive path: no dataset, no gold query unless the reviewer
    supplies a corrected one. Recording a mistake requires that correction,
    since a mistake entry without the right SQL teaches nothing.
    """
    if not cfg.continuous_accumulation:
        return NotebookDelta.no_update(reason="accumulation off")
    if correct:
        seq = kb.add_correct(question, hint, outcome.final_sql, outcome.thought, db_id=db_id)
        return NotebookDelta.added_correct(seq)
    if not gold_sql:
        raise ValueError("recording a mistake requires the corrected SQL")
    tip = ""
    if cfg.info_mode == "high":
        tip_prompt = render(
            PromptKind.MISTAKE_TIP,
            PromptContext(schema_text=schema_text, question=question, hint=hint,
                          sql=outcome.first_sql, exec_error=outcome.exec_error,
                          reflected_sql=outcome.reflected_sql, gold_sql=gold_sql),
        )
        outcome.prompt_digests["mistake_tip"] = prompt_digest(tip_prompt)
        tip = _strip_tip_prefix(complete(provider, tip_prompt, cfg.completion))
        outcome.provider_calls += 1
    seq = kb.add_mistake(question, hint, outcome.first_sql, gold_sql, tip,
                         exec_error=outcome.exec_error, reflected_sql=outcome.reflected_sql,
                         db_id=db_id)
    return NotebookDelta.added_mistake(seq)
