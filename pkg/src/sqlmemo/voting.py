"""Result voting across correct-rate branches.

Each branch answers independently from its own knowledge base; the final SQL
is the one whose execution result agrees with the most other branches. One
low-temperature completion per branch, so consistency comes from varying the
demonstrations, not the sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .embedding import EncoderConfig
from .execution import ExecOutcome, outcomes_equal
from .notebook import DemonstrationPlan, DemonstrationSet, KnowledgeBase
from .pipeline import (
    BranchOutcome,
    NotebookDelta,
    PipelineConfig,
    TaskItem,
    answer,
    rethink_update,
)
from .providers import ProviderError

CANONICAL_RATES = (1.0, 0.5, 0.0)

# Tie order among the canonical rates; 0.5 anchors because mixing both
# notebooks is the strongest single setting, then all-correct, then
# all-mistake. Unlisted rates follow, higher rate first.
_TIE_ORDER = (0.5, 1.0, 0.0)


def rate_priority(rate: float):
    """Sort key; lower sorts first and wins ties."""
    for i, r in enumerate(_TIE_ORDER):
        if rate == r:
            return (i, 0.0)
    return (len(_TIE_ORDER), -rate)


@dataclass
class BranchSet:
    """Ordered (plan, knowledge base) pairs, one per correct rate."""

    branches: list
    shared_kb: bool = False

    def __post_init__(self) -> None:
        rates = [plan.correct_rate for plan, _ in self.branches]
        if len(set(rates)) != len(rates):
            raise ValueError(f"correct rates must be distinct, got {rates}")
        if not self.shared_kb:
            ids = [id(kb) for _, kb in self.branches]
            if len(set(ids)) != len(ids):
                raise ValueError("knowledge bases must be distinct stores unless shared_kb is set")

    @classmethod
    def fresh(cls, k: int, rates=CANONICAL_RATES, encoder: EncoderConfig | None = None,
              shared_kb: bool = False) -> "BranchSet":
        encoder = encoder or EncoderConfig()
        if shared_kb:
            kb = KnowledgeBase(encoder)
            pairs = [(DemonstrationPlan(k=k, correct_rate=r), kb) for r in rates]
        else:
            pairs = [(DemonstrationPlan(k=k, correct_rate=r), KnowledgeBase(encoder)) for r in rates]
        return cls(branches=pairs, shared_kb=shared_kb)


@dataclass
class FinalAnswer:
    chosen_sql: str
    chosen_rate: float
    chosen_index: int
    branch_outcomes: list
    vote_group_sizes: list
    deltas: list = field(default_factory=list)


def _rows_groups(outcomes) -> list:
    """Partition indices of Rows outcomes into agreement groups."""
    groups: list[list[int]] = []
    for i, out in enumerate(outcomes):
        if out.final_exec is None or out.final_exec.status != "rows":
            continue
        for group in groups:
            if outcomes_equal(outcomes[group[0]].final_exec, out.final_exec):
                group.append(i)
                break
        else:
            groups.append([i])
    return groups


def vote(outcomes) -> int:
    """Index of the winning branch.

    Largest agreement group of Rows outcomes wins; ties between groups, and
    the representative within the winner, go to the strongest rate priority.
    Failures and timeouts never group, so an all-erroring item falls back to
    pure priority over every branch.
    """
    if not outcomes:
        raise ValueError("outcomes must be non-empty")
    groups = _rows_groups(outcomes)
    if not groups:
        return min(range(len(outcomes)),
                   key=lambda i: (rate_priority(outcomes[i].correct_rate), i))
    winner = min(groups, key=lambda g: (
        -len(g),
        min(rate_priority(outcomes[i].correct_rate) for i in g),
        min(g),
    ))
    return min(winner, key=lambda i: (rate_priority(outcomes[i].correct_rate), i))


def group_sizes(outcomes) -> list:
    return sorted((len(g) for g in _rows_groups(outcomes)), reverse=True)


def run(item: TaskItem, branches: BranchSet, provider, schema_text: str,
        cfg: PipelineConfig, gold_exec: ExecOutcome | None = None,
        origin: str = "accumulated") -> FinalAnswer:
    """Answer on every branch, update each branch's own notebooks, then vote.

    A branch whose provider gives out participates as a synthetic Failure so
    the item still resolves; each branch learns from its own prediction, never
    from the voted one.
    """
    outcomes = []
    deltas = []
    for plan, kb in branches.branches:
        try:
            out = answer(item, kb, plan, provider, schema_text, cfg)
        except ProviderError as exc:
            out = BranchOutcome(correct_rate=plan.correct_rate,
                                demonstrations=DemonstrationSet((), ()))
            out.final_exec = ExecOutcome.failure(f"branch aborted: {exc}")
            outcomes.append(out)
            deltas.append(NotebookDelta.no_update(reason=f"provider error: {exc}"))
            continue
        outcomes.append(out)
        try:
            deltas.append(rethink_update(out, item, kb, provider, schema_text, cfg,
                                         gold_exec=gold_exec, origin=origin))
        except ProviderError as exc:
            deltas.append(NotebookDelta.no_update(reason=f"provider error: {exc}"))
    idx = vote(outcomes)
    return FinalAnswer(
        chosen_sql=outcomes[idx].final_sql,
        chosen_rate=outcomes[idx].correct_rate,
        chosen_index=idx,
        branch_outcomes=outcomes,
        vote_group_sizes=group_sizes(outcomes),
        deltas=deltas,
    )
