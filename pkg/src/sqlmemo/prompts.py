"""Prompt rendering for the four pipeline stages, plus SQL extraction.

Each stage has one fixed template: generating SQL, narrating the thought
process behind a generated query, reflecting on an execution error, and
writing a tip after a confirmed mistake. Rendering is pure string assembly,
so goldens can pin the exact output.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from .notebook import DemonstrationSet


class PromptError(Exception):
    """The context is missing a field the chosen template needs."""


class NoSqlFound(Exception):
    """Model output contained no SELECT or WITH keyword."""


class PromptKind(Enum):
    GENERATE_SQL = "generate_sql"
    THOUGHT_PROCESS = "thought_process"
    REFLECT_SQL = "reflect_sql"
    MISTAKE_TIP = "mistake_tip"


@dataclass(frozen=True)
class PromptContext:
    schema_text: str
    question: str
    hint: str
    demonstrations: DemonstrationSet | None = None
    sql: str | None = None
    exec_error: str | None = None
    reflected_sql: str | None = None
    gold_sql: str | None = None


_CORRECT_HEADER = (
    "# For your reference, here are some examples of Questions, sql queries,\n"
    "and thought processes related to the Question you're working with"
)

_MISTAKE_HEADER = (
    "# Below are examples of mistakes you've made before that are similar to\n"
    "the question you're about to tackle, so please refer to not making\n"
    "the same mistake!"
)

_SQL_TRAILER = (
    "In your response, you do not need to mention your intermediate steps.\n"
    "    Do not include any comments in your response.\n"
    "    Do not need to start with the symbol ```\n"
    "    Your SQL code should be concise and efficient.\n"
    "    You only need to return the result SQLite SQL code\n"
    "    start from SELECT"
)

_THOUGHT_TAIL = (
    "Now, please provide your thought process behind the generation of this\n"
    "SQL query. Your explanation should be concise and efficient, focusing\n"
    "on the key reasoning steps."
)

_TIP_TAIL = (
    "Error SQL Query is the result you generate the first time and SQL after\n"
    "Reflection is the result you generate again based on the Error\n"
    "information returned by the compiler knowing that the first generated\n"
    "result was wrong. Now that both results are known to be wrong, I am\n"
    "providing Ground Truth SQL for your reference, please think carefully\n"
    "about why your first two results were not correct, please provide a\n"
    "Tip on how to avoid making the same mistake in the future. Note that\n"
    "you only need to return the Tip. Please return in the following format:\n"
    "# Tip:"
)

_REFLECT_TAIL = (
    "Reflect on the error encountered in the SQL query and provide a corrected\n"
    "SQL query."
)


def _require(ctx: PromptContext, kind: PromptKind, *names: str) -> None:
    for name in names:
        if getattr(ctx, name) is None:
            raise PromptError(f"{kind.value} prompt requires ctx.{name}")


def _correct_demo(entry) -> str:
    return (
        f"# Question: {entry.question}\n"
        f"# Hint: {entry.hint}\n"
        f"# SQL:\n{entry.sql}\n"
        f"# Thought process:\n{entry.thought}"
    )


def _mistake_demo(entry) -> str:
    return (
        f"# Question: {entry.question}\n"
        f"# Hint: {entry.hint}\n"
        f"# Error SQL:\n{entry.first_sql}\n"
        f"# Tip:\n{entry.tip}\n"
        f"# Ground Truth SQL:\n{entry.gold_sql}"
    )


def _demo_blocks(demos: DemonstrationSet) -> list:
    # A section with zero picks disappears entirely, header included.
    blocks = []
    if demos.correct_picks:
        blocks.append(_CORRECT_HEADER)
        blocks.extend(_correct_demo(e) for e in demos.correct_picks)
    if demos.mistake_picks:
        blocks.append(_MISTAKE_HEADER)
        blocks.extend(_mistake_demo(e) for e in demos.mistake_picks)
    return blocks


def _schema_block(ctx: PromptContext) -> str:
    return f"# Schema of the database:\n{ctx.schema_text}"


def _question_blocks(ctx: PromptContext) -> list:
    # The space before the colon in "External Knowledge :" is deliberate.
    return [
        f"# Question:\n{ctx.question}",
        f"# External Knowledge :\n{ctx.hint}",
    ]


def _finish(blocks: list) -> str:
    text = "\n\n".join(blocks)
    return "\n".join(line.rstrip() for line in text.split("\n"))


def render(kind: PromptKind, ctx: PromptContext) -> str:
    if kind is PromptKind.GENERATE_SQL:
        _require(ctx, kind, "demonstrations")
        blocks = _demo_blocks(ctx.demonstrations)
        blocks.append(_schema_block(ctx))
        blocks.append(
            "-- Using valid SQLite and understanding Hint, answer the following"
            " questions for the tables provided above.\n"
            f"-- {ctx.question}\n"
            f"-- {ctx.hint}"
        )
        blocks.append("Generate the SQLite for the above question after thinking step by step:")
        blocks.append(_SQL_TRAILER)
        return _finish(blocks)

    if kind is PromptKind.THOUGHT_PROCESS:
        _require(ctx, kind, "sql")
        blocks = [_schema_block(ctx)]
        blocks.extend(_question_blocks(ctx))
        blocks.append(f"# You just generated the following SQL:\n{ctx.sql}")
        blocks.append(_THOUGHT_TAIL)
        return _finish(blocks)

    if kind is PromptKind.REFLECT_SQL:
        _require(ctx, kind, "demonstrations", "sql", "exec_error")
        blocks = _demo_blocks(ctx.demonstrations)
        blocks.append(_schema_block(ctx))
        blocks.extend(_question_blocks(ctx))
        blocks.append(f"# SQL Query:\n{ctx.sql}")
        blocks.append(f"# Error:\n{ctx.exec_error}")
        blocks.append(_REFLECT_TAIL)
        blocks.append(_SQL_TRAILER)
        return _finish(blocks)

    if kind is PromptKind.MISTAKE_TIP:
        _require(ctx, kind, "sql", "gold_sql")
        blocks = [_schema_block(ctx)]
        blocks.extend(_question_blocks(ctx))
        blocks.append(f"# Error SQL Query:\n{ctx.sql}")
        blocks.append(f"# Error information:\n{ctx.exec_error}")
        blocks.append(f"# SQL after Reflection:\n{ctx.reflected_sql}")
        blocks.append(f"# Ground Truth SQL:\n{ctx.gold_sql}")
        blocks.append(_TIP_TAIL)
        return _finish(blocks)

    raise PromptError(f"unknown prompt kind: {kind!r}")


_FENCE = re.compile(r"```[^\n`]*\n(.*?)(?:```|\Z)", re.DOTALL)
_SQL_KEYWORD = re.compile(r"\b(select|with)\b", re.IGNORECASE)


def _trim_trailing_comments(sql: str) -> str:
    """Drop trailing #/-- comment lines, but only after a closed statement."""
    lines = sql.split("\n")
    keep = len(lines)
    while keep > 0:
        stripped = lines[keep - 1].strip()
        if stripped == "" or stripped.startswith("#") or stripped.startswith("--"):
            keep -= 1
        else:
            break
    if keep == len(lines):
        return sql
    body = "\n".join(lines[:keep])
    if body.rstrip().endswith(";"):
        return body
    return sql


def extract_sql(text: str) -> str:
    """Pull the SQL statement out of a completion.

    Prefers the first fenced block when it contains SQL, otherwise scans the
    whole text for the first SELECT or WITH keyword. Idempotent on its own
    output.
    """
    candidate = text
    fenced = _FENCE.search(text)
    if fenced and _SQL_KEYWORD.search(fenced.group(1)):
        candidate = fenced.group(1)
    match = _SQL_KEYWORD.search(candidate)
    if match is None:
        raise NoSqlFound(f"no SELECT or WITH keyword in completion: {text[:80]!r}")
    sql = candidate[match.start():]
    close = sql.find("```")
    if close != -1:
        sql = sql[:close]
    return _trim_trailing_comments(sql).strip()
