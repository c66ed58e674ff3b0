"""Acceptance gate: ten checks, one printed verdict line each.

Each test prints "[criterion NN] PASS/FAIL <label>" through the capture
bypass, so a plain pytest run shows the whole scorecard. Bodies re-derive
every expected value independently of the code under test: brute-force
rankings, closed-form split arithmetic, support-counted votes, and EX
verdicts frozen by hand-executing the fixture SQL.
"""

import json
import math
import os
import random
import time
from contextlib import contextmanager
from pathlib import Path

import pytest

from sqlmemo.embedding import EncoderConfig, embed
from sqlmemo.execution import ExecOutcome, RowSet, outcomes_equal
from sqlmemo.harness import (
    NOTEBOOKS_DIR,
    REPORT_NAME,
    RUN_LOG_NAME,
    RunConfig,
    build_branches,
    evaluate,
    rate_dir_name,
    read_run_log,
)
from sqlmemo.notebook import (
    CORRECT_FILE,
    MANIFEST_FILE,
    MISTAKE_FILE,
    CorrectEntry,
    DemonstrationPlan,
    DemonstrationSet,
    KnowledgeBase,
    load as load_store,
    persist,
    top_k,
)
from sqlmemo.pipeline import BranchOutcome, TaskItem
from sqlmemo.prompts import PromptContext, PromptKind, render
from sqlmemo.providers import ScriptedProvider
from sqlmemo.voting import rate_priority, vote

from conftest import RATES, build_script, fixture_specs


@contextmanager
def verdict(capsys, num, label):
    ok = False
    started = time.perf_counter()
    try:
        yield
        ok = True
    finally:
        elapsed = time.perf_counter() - started
        with capsys.disabled():
            print(f"[criterion {num:2d}] {'PASS' if ok else 'FAIL'} "
                  f"({elapsed:.2f}s) {label}")


def _unit_vec(rng, dim):
    v = [rng.gauss(0.0, 1.0) for _ in range(dim)]
    norm = math.sqrt(sum(x * x for x in v)) or 1.0
    return tuple(x / norm for x in v)


def test_criterion_01_retrieval_oracle(capsys):
    with verdict(capsys, 1, "top-k retrieval equals the brute-force cosine ranking"):
        rng = random.Random(101)
        dim = 24
        started = time.perf_counter()
        for _ in range(50):
            n = rng.randint(0, 200)
            vecs = []
            for i in range(n):
                if vecs and rng.random() < 0.2:
                    vecs.append(rng.choice(vecs))  # duplicates force seq ties
                else:
                    vecs.append(_unit_vec(rng, dim))
            entries = [
                CorrectEntry(seq=i + 1, question=f"q{i}", hint="", sql="SELECT 1",
                             thought="", embedding=vecs[i], origin="accumulated")
                for i in range(n)
            ]
            for _ in range(20):
                query = _unit_vec(rng, dim)
                k = rng.choice((1, 3, 5, 10))
                expected = sorted(
                    entries,
                    key=lambda e: (-sum(a * b for a, b in zip(e.embedding, query)), e.seq),
                )[:k]
                got = top_k(entries, query, k)
                assert [e.seq for e in got] == [e.seq for e in expected]
        assert time.perf_counter() - started < 10.0


def test_criterion_02_split_contract(capsys):
    with verdict(capsys, 2, "demonstration split: round-half-up, backfill, min(k, total)"):
        cfg = EncoderConfig(dimension=8)
        started = time.perf_counter()
        kb_cache = {}

        def kb_for(nc, nm):
            if (nc, nm) not in kb_cache:
                kb = KnowledgeBase(cfg)
                for i in range(nc):
                    kb.add_correct(f"correct question {i}", "", f"SELECT {i}", "t")
                for i in range(nm):
                    kb.add_mistake(f"mistake question {i}", "", f"SELECT x{i}",
                                   f"SELECT {i}", "tip")
                kb_cache[(nc, nm)] = kb
            return kb_cache[(nc, nm)]

        query = embed("which rows match the filter", cfg)
        for k in range(9):
            fills = sorted({0, 1, max(k - 1, 0), k, 2 * k})
            for rate in (0.0, 0.25, 0.5, 0.75, 1.0):
                for nc in fills:
                    for nm in fills:
                        demos = kb_for(nc, nm).select_demonstrations(
                            query, DemonstrationPlan(k=k, correct_rate=rate))
                        c_target = math.floor(k * rate + 0.5)
                        m_target = k - c_target
                        c, m = min(c_target, nc), min(m_target, nm)
                        short = k - c - m
                        grab_m = min(short, nm - m)
                        m += grab_m
                        c += min(short - grab_m, nc - c)
                        assert (len(demos.correct_picks), len(demos.mistake_picks)) == (c, m)
                        assert len(demos) == min(k, nc + nm)
        assert time.perf_counter() - started < 1.0


def _stub(rate, exec_outcome):
    return BranchOutcome(correct_rate=rate, demonstrations=DemonstrationSet((), ()),
                         final_sql=f"SQL@{rate:g}", final_exec=exec_outcome)


def test_criterion_03_vote_oracle(capsys):
    with verdict(capsys, 3, "vote equals the support-counting oracle (1000 trials)"):
        rows_a = ExecOutcome.from_rows([(1,)])
        rows_b = ExecOutcome.from_rows([(2,), (3,)])
        rows_c = ExecOutcome.from_rows([("x", 1.5)])
        pool = [rows_a, rows_b, rows_c, ExecOutcome.failure("err"), ExecOutcome.timeout()]
        rng = random.Random(303)
        started = time.perf_counter()

        for _ in range(1000):
            n = rng.randint(1, 5)
            rates = rng.sample([1.0, 0.5, 0.0, 0.25, 0.75], n)
            outcomes = [_stub(r, rng.choice(pool)) for r in rates]

            rows = [i for i, o in enumerate(outcomes) if o.final_exec.status == "rows"]
            if not rows:
                expected = min(range(n),
                               key=lambda i: (rate_priority(outcomes[i].correct_rate), i))
            else:
                members = {i: [j for j in rows
                               if outcomes_equal(outcomes[i].final_exec, outcomes[j].final_exec)]
                           for i in rows}
                best = min(rows, key=lambda i: (
                    -len(members[i]),
                    min(rate_priority(outcomes[j].correct_rate) for j in members[i]),
                    min(members[i]),
                ))
                expected = min(members[best],
                               key=lambda i: (rate_priority(outcomes[i].correct_rate), i))
            assert vote(outcomes) == expected
        assert time.perf_counter() - started < 5.0


def test_criterion_04_equality_semantics(capsys):
    with verdict(capsys, 4, "execution equality: sets, order, integral-real, failures"):
        started = time.perf_counter()
        rows = ExecOutcome.from_rows
        # duplicate collapse and order insensitivity
        assert outcomes_equal(rows([(1,), (1,), (2,)]), rows([(2,), (1,)]))
        assert outcomes_equal(rows([(1, "a"), (2, "b")]), rows([(2, "b"), (1, "a")]))
        # integral-real cross equality, but not approximate equality
        assert outcomes_equal(rows([(1,)]), rows([(1.0,)]))
        assert outcomes_equal(rows([(2.0, "x")]), rows([(2, "x")]))
        assert not outcomes_equal(rows([(1,)]), rows([(1.0001,)]))
        # text compares exactly
        assert not outcomes_equal(rows([("a",)]), rows([("A",)]))
        # failures and timeouts never equal anything, including themselves
        f = ExecOutcome.failure("x")
        t = ExecOutcome.timeout()
        for bad in (f, t):
            assert not outcomes_equal(bad, bad)
            assert not outcomes_equal(bad, rows([(1,)]))
            assert not outcomes_equal(rows([(1,)]), bad)
        assert not outcomes_equal(f, ExecOutcome.failure("x"))
        assert not outcomes_equal(f, t)
        # row multiplicity is tracked but does not affect equality
        assert RowSet.from_fetched([(1,), (1,)]).row_count == 2
        assert time.perf_counter() - started < 5.0


EXPECTED_TABLE = {
    "simple": (6, 4, 66.67),
    "moderate": (4, 3, 75.0),
    "challenging": (2, 1, 50.0),
    "total": (12, 8, 66.67),
}


def _fixture_run(fixture_db_root, run_dir, specs, **cfg_kw):
    cfg = RunConfig(db_root=str(fixture_db_root), **cfg_kw)
    branches = build_branches(cfg)
    provider = ScriptedProvider(build_script(specs, info_mode=cfg.info_mode))
    report = evaluate([s.item for s in specs], branches, provider, cfg, run_dir)
    return report, branches, provider


def test_criterion_05_deterministic_fixture(capsys, tmp_path, fixture_db_root):
    with verdict(capsys, 5, "fixture EX 66.67/75.00/50.00/66.67, reports byte-identical x3"):
        started = time.perf_counter()
        specs = fixture_specs()
        reports = []
        for i in range(3):
            report, _, provider = _fixture_run(fixture_db_root, tmp_path / f"run{i}", specs)
            reports.append((tmp_path / f"run{i}" / REPORT_NAME).read_bytes())
            if i == 0:
                for diff, (count, correct, ex) in EXPECTED_TABLE.items():
                    bucket = report.total if diff == "total" else report.by_difficulty[diff]
                    assert (bucket["count"], bucket["correct"], bucket["ex"]) == \
                        (count, correct, ex), diff
                # all four prompt kinds ran, including reflection and the
                # no-SQL refusal
                assert provider.counts["generate_sql"] == 36
                assert provider.counts["reflect_sql"] == 3
                assert provider.counts["mistake_tip"] == 12
                assert provider.counts["thought_process"] == 33
                log = read_run_log(tmp_path / "run0" / RUN_LOG_NAME)
                refusals = [r for r in log if r["type"] == "branch"
                            and (r["final_exec"] or {}).get("error") == "no SQL extracted"]
                assert len(refusals) == 3
        assert reports[0] == reports[1] == reports[2]
        assert time.perf_counter() - started < 30.0


def test_criterion_06_notebook_growth_law(capsys, tmp_path, fixture_db_root):
    with verdict(capsys, 6, "each branch gains 8 correct + 4 mistakes; off leaves files untouched"):
        specs = fixture_specs()
        _, branches, _ = _fixture_run(fixture_db_root, tmp_path / "on", specs)
        for _, kb in branches.branches:
            assert len(kb.correct) == 8
            assert len(kb.mistakes) == 4
            assert [e.seq for e in kb.correct] == list(range(1, 9))
            assert [e.seq for e in kb.mistakes] == list(range(1, 5))

        # accumulation off over preloaded stores: bytes must not move
        snapshot = tmp_path / "snapshot"
        enc = EncoderConfig()
        for rate in RATES:
            kb = KnowledgeBase(enc)
            kb.add_correct("prior question", "", "SELECT 1", "t")
            persist(kb, snapshot / rate_dir_name(rate))
        before = {
            p.relative_to(snapshot): p.read_bytes()
            for p in snapshot.rglob("*") if p.is_file()
        }
        report, frozen, _ = _fixture_run(
            fixture_db_root, tmp_path / "off", specs,
            continuous_accumulation=False, init="preloaded", preload_dir=str(snapshot))
        after = {
            p.relative_to(snapshot): p.read_bytes()
            for p in snapshot.rglob("*") if p.is_file()
        }
        assert before == after
        assert report.total["count"] == 12
        for _, kb in frozen.branches:
            assert len(kb.correct) == 1 and len(kb.mistakes) == 0
        assert not (tmp_path / "off" / NOTEBOOKS_DIR).exists()


def test_criterion_07_call_budget(capsys, tmp_path, fixture_db_root):
    with verdict(capsys, 7, "one generation per branch-item; per-branch calls in {2,3,4}/{1,2,3}"):
        specs = fixture_specs()
        _, _, provider = _fixture_run(fixture_db_root, tmp_path / "high", specs)
        assert provider.counts == {"generate_sql": 36, "thought_process": 33,
                                   "reflect_sql": 3, "mistake_tip": 12}
        log = read_run_log(tmp_path / "high" / RUN_LOG_NAME)
        branch_records = [r for r in log if r["type"] == "branch"]
        assert len(branch_records) == 36
        for rec in branch_records:
            # digests key once per kind; ledger total 36 over 36 branch
            # records pins exactly one generation per branch per item
            assert "generate_sql" in rec["prompt_digests"]
            assert rec["provider_calls"] in (2, 3, 4)
        per_item = {}
        for rec in branch_records:
            per_item.setdefault(rec["question_id"], 0)
            per_item[rec["question_id"]] += 1
        assert set(per_item.values()) == {3}  # one generation per branch per item

        _, _, low_provider = _fixture_run(fixture_db_root, tmp_path / "low", specs,
                                          info_mode="low")
        assert low_provider.counts == {"generate_sql": 36, "thought_process": 0,
                                       "reflect_sql": 3, "mistake_tip": 0}
        low_log = read_run_log(tmp_path / "low" / RUN_LOG_NAME)
        for rec in (r for r in low_log if r["type"] == "branch"):
            assert rec["provider_calls"] in (1, 2, 3)


_WORDS = ["price", "count", "flight", "grade", "école", "東京", "naïve", "O'Hare",
          "a\nb", 'quo"te', "week-end", "items?"]


def _rand_text(rng, max_words=6):
    return " ".join(rng.choice(_WORDS) for _ in range(rng.randint(0, max_words)))


def test_criterion_08_persistence_round_trip(capsys, tmp_path):
    with verdict(capsys, 8, "persist -> load -> persist is byte-identical (100 stores)"):
        rng = random.Random(808)
        enc = EncoderConfig(dimension=8)
        for trial in range(100):
            kb = KnowledgeBase(enc)
            for _ in range(rng.randint(0, 12)):
                kb.add_correct(_rand_text(rng), _rand_text(rng),
                               f"SELECT {rng.randint(0, 99)}", _rand_text(rng),
                               origin=rng.choice(("seed", "accumulated")),
                               db_id=rng.choice(("", "shop", "école")))
            for _ in range(rng.randint(0, 12)):
                kb.add_mistake(_rand_text(rng), _rand_text(rng),
                               f"SELECT x{rng.randint(0, 99)}",
                               f"SELECT {rng.randint(0, 99)}", _rand_text(rng),
                               exec_error=rng.choice((None, "no such table: t", "syntax error")),
                               reflected_sql=rng.choice((None, "", "SELECT 1")),
                               origin=rng.choice(("seed", "accumulated")))
            a = tmp_path / f"a{trial}"
            b = tmp_path / f"b{trial}"
            persist(kb, a)
            persist(load_store(a), b)
            for name in (CORRECT_FILE, MISTAKE_FILE, MANIFEST_FILE):
                assert (a / name).read_bytes() == (b / name).read_bytes(), (trial, name)


def test_criterion_09_prompt_goldens(capsys):
    with verdict(capsys, 9, "rendered prompts match the stored goldens and anchor phrases"):
        cfg = EncoderConfig(dimension=8)
        kb = KnowledgeBase(cfg)
        kb.add_correct(
            "How many home products are there?",
            "home is a category",
            "SELECT COUNT(*) FROM products WHERE category = 'home'",
            "Filter products by category, then count the rows.",
        )
        kb.add_mistake(
            "Average price of gear?",
            "gear is a category",
            "SELECT AVG(price) FROM product WHERE category = 'gear'",
            "SELECT AVG(price) FROM products WHERE category = 'gear'",
            "Check the table name against the schema before aggregating.",
        )
        demos = kb.select_demonstrations(
            embed("What is the price of the rope?", cfg),
            DemonstrationPlan(k=2, correct_rate=0.5))
        ctx = PromptContext(
            schema_text="CREATE TABLE products (id INTEGER, name TEXT, price REAL, category TEXT)",
            question="What is the price of the rope?",
            hint="rope is a product name",
            demonstrations=demos,
            sql="SELECT price FROM products WHERE nam = 'rope'",
            exec_error="no such column: nam",
            reflected_sql="SELECT price FROM products WHERE name = 'rope'",
            gold_sql="SELECT price FROM products WHERE name = 'rope'",
        )
        golden_dir = Path(__file__).parent / "golden"
        anchors = {
            PromptKind.GENERATE_SQL: "Generate the SQLite for the above question",
            PromptKind.THOUGHT_PROCESS: "provide your thought process behind the generation",
            PromptKind.MISTAKE_TIP: "provide a Tip on how to avoid making the same mistake",
            PromptKind.REFLECT_SQL: "Reflect on the error encountered in the SQL query",
        }
        for kind in PromptKind:
            text = render(kind, ctx)
            expected = (golden_dir / f"{kind.value}.txt").read_text(encoding="utf-8")
            assert text + "\n" == expected, kind
            assert anchors[kind] in " ".join(text.split()), kind


def _smoke_items():
    """Twenty questions over the three fixture databases."""
    questions = [
        ("shop", "How many products are listed?", "", "SELECT COUNT(*) FROM products"),
        ("shop", "How many orders exist?", "", "SELECT COUNT(*) FROM orders"),
        ("shop", "Which product names are in the home category?", "category home",
         "SELECT name FROM products WHERE category = 'home'"),
        ("shop", "What is the price of the rope?", "name rope",
         "SELECT price FROM products WHERE name = 'rope'"),
        ("shop", "How many units were ordered in total?", "",
         "SELECT SUM(qty) FROM orders"),
        ("shop", "Which day had the most orders?", "",
         "SELECT day FROM orders GROUP BY day ORDER BY COUNT(*) DESC LIMIT 1"),
        ("school", "How many students are there?", "", "SELECT COUNT(*) FROM students"),
        ("school", "How many students are in grade 9?", "grade = 9",
         "SELECT COUNT(*) FROM students WHERE grade = 9"),
        ("school", "What is the average math score?", "course math",
         "SELECT AVG(score) FROM enrollments WHERE course = 'math'"),
        ("school", "List the names of all students.", "", "SELECT name FROM students"),
        ("school", "Which student ids enrolled in art?", "course art",
         "SELECT student_id FROM enrollments WHERE course = 'art'"),
        ("school", "What is the highest score overall?", "",
         "SELECT MAX(score) FROM enrollments"),
        ("school", "How many courses does student 1 take?", "student_id = 1",
         "SELECT COUNT(*) FROM enrollments WHERE student_id = 1"),
        ("flights", "How many flights are in the table?", "", "SELECT COUNT(*) FROM flights"),
        ("flights", "How many flights depart from AAA?", "origin AAA",
         "SELECT COUNT(*) FROM flights WHERE origin = 'AAA'"),
        ("flights", "What is the cheapest ticket price?", "", "SELECT MIN(price) FROM flights"),
        ("flights", "Which destinations can be reached from BBB?", "origin BBB",
         "SELECT dest FROM flights WHERE origin = 'BBB'"),
        ("flights", "What is the longest flight time in minutes?", "",
         "SELECT MAX(minutes) FROM flights"),
        ("flights", "What is the average price of flights from AAA?", "origin AAA",
         "SELECT AVG(price) FROM flights WHERE origin = 'AAA'"),
        ("flights", "How many flights take longer than 100 minutes?", "minutes > 100",
         "SELECT COUNT(*) FROM flights WHERE minutes > 100"),
    ]
    difficulties = ("simple", "moderate", "challenging")
    items = []
    for i, (db_id, question, hint, sql) in enumerate(questions):
        items.append(TaskItem(
            question_id=f"smoke{i}",
            db_id=db_id,
            question=question,
            hint=hint,
            gold_sql=sql,
            difficulty=difficulties[i % 3],
        ))
    return items


@pytest.mark.online
@pytest.mark.skipif(not os.environ.get("SQLMEMO_SMOKE_ENDPOINT"),
                    reason="set SQLMEMO_SMOKE_ENDPOINT to run the online smoke eval")
def test_criterion_10_online_smoke(capsys, tmp_path, fixture_db_root):
    with verdict(capsys, 10, "online smoke eval: 20 items, well-formed report, notebooks grow"):
        from sqlmemo.providers import ChatCompletionsProvider

        provider = ChatCompletionsProvider(
            endpoint=os.environ["SQLMEMO_SMOKE_ENDPOINT"],
            model=os.environ.get("SQLMEMO_SMOKE_MODEL", "gpt-3.5-turbo"),
        )
        cfg = RunConfig(db_root=str(fixture_db_root))
        branches = build_branches(cfg)
        items = _smoke_items()
        run_dir = tmp_path / "smoke"
        report = evaluate(items, branches, provider, cfg, run_dir)
        assert report.total["count"] == 20
        on_disk = json.loads((run_dir / REPORT_NAME).read_text())
        assert set(on_disk) == {"by_difficulty", "total", "verdicts",
                                "provider_calls", "tokens_used", "config"}
        assert len(on_disk["verdicts"]) == 20
        for _, kb in branches.branches:
            assert len(kb.correct) + len(kb.mistakes) == 20
