"""Continual-learning text-to-SQL with dual experience notebooks."""

from .embedding import EncoderConfig, EncoderError, cosine_similarity, embed
from .execution import (
    DEFAULT_TIMEOUT_MS,
    ExecOutcome,
    RowSet,
    canonical_value,
    db_path,
    execute,
    outcomes_equal,
)
from .harness import (
    DatasetError,
    EvalReport,
    RunConfig,
    build_branches,
    evaluate,
    load_items,
    schema_text,
    seed,
    summarize,
)
from .notebook import (
    CorrectEntry,
    DemonstrationPlan,
    DemonstrationSet,
    KnowledgeBase,
    MistakeEntry,
    NotebookFormatError,
    load,
    persist,
    top_k,
)
from .pipeline import (
    BranchOutcome,
    NotebookDelta,
    PipelineConfig,
    TaskItem,
    answer,
    rethink_update,
)
from .prompts import (
    NoSqlFound,
    PromptContext,
    PromptError,
    PromptKind,
    extract_sql,
    render,
)
from .providers import (
    ChatCompletionsProvider,
    CompletionParams,
    ProviderError,
    ScriptedProvider,
    complete,
)
from .voting import BranchSet, FinalAnswer, rate_priority, run, vote

__version__ = "0.1.0"

__all__ = [
    "BranchOutcome",
    "BranchSet",
    "ChatCompletionsProvider",
    "CompletionParams",
    "CorrectEntry",
    "DEFAULT_TIMEOUT_MS",
    "DatasetError",
    "DemonstrationPlan",
    "DemonstrationSet",
    "EncoderConfig",
    "EncoderError",
    "EvalReport",
    "ExecOutcome",
    "FinalAnswer",
    "KnowledgeBase",
    "MistakeEntry",
    "NoSqlFound",
    "NotebookDelta",
    "NotebookFormatError",
    "PipelineConfig",
    "PromptContext",
    "PromptError",
    "PromptKind",
    "ProviderError",
    "RowSet",
    "RunConfig",
    "ScriptedProvider",
    "TaskItem",
    "answer",
    "build_branches",
    "canonical_value",
    "complete",
    "cosine_similarity",
    "db_path",
    "embed",
    "evaluate",
    "execute",
    "extract_sql",
    "load",
    "load_items",
    "outcomes_equal",
    "persist",
    "rate_priority",
    "render",
    "rethink_update",
    "run",
    "schema_text",
    "seed",
    "summarize",
    "top_k",
    "vote",
]
