"""Shared fixture: three toy databases, a 12-item question set, and the
completion script that drives every branch through it deterministically.

Every expected verdict below was frozen by executing the gold and predicted
SQL directly against the fixture data; the comments state the observed rows.
"""

from __future__ import annotations

import json
import sqlite3
from dataclasses import dataclass
from pathlib import Path

import pytest

from sqlmemo.pipeline import TaskItem
from sqlmemo.providers import ScriptedProvider

RATES = (1.0, 0.5, 0.0)


def _build_db(path: Path, ddl: str, rows: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    con = sqlite3.connect(path)
    con.executescript(ddl)
    for table, data in rows.items():
        placeholders = ",".join("?" * len(data[0]))
        con.executemany(f"INSERT INTO {table} VALUES ({placeholders})", data)
    con.commit()
    con.close()


def build_fixture_dbs(db_root: Path) -> None:
    _build_db(
        db_root / "shop" / "shop.sqlite",
        "CREATE TABLE products (id INTEGER PRIMARY KEY, name TEXT, price REAL, category TEXT);\n"
        "CREATE TABLE orders (id INTEGER PRIMARY KEY, product_id INTEGER, qty INTEGER, day TEXT);",
        {
            "products": [(1, "anvil", 9.5, "tools"), (2, "rope", 3.0, "gear"),
                         (3, "lamp", 12.0, "home"), (4, "mug", 4.5, "home")],
            "orders": [(1, 1, 2, "mon"), (2, 2, 1, "tue"), (3, 2, 3, "tue"), (4, 3, 1, "wed")],
        },
    )
    _build_db(
        db_root / "school" / "school.sqlite",
        "CREATE TABLE students (id INTEGER PRIMARY KEY, name TEXT, grade INTEGER);\n"
        "CREATE TABLE enrollments (student_id INTEGER, course TEXT, score REAL);",
        {
            "students": [(1, "Ana", 9), (2, "Ben", 10), (3, "Cal", 9), (4, "Dee", 11)],
            "enrollments": [(1, "math", 91.0), (1, "art", 78.5), (2, "math", 66.0),
                            (3, "art", 88.0), (4, "math", 79.0)],
        },
    )
    _build_db(
        db_root / "flights" / "flights.sqlite",
        "CREATE TABLE flights (id INTEGER PRIMARY KEY, origin TEXT, dest TEXT,"
        " minutes INTEGER, price REAL);",
        {
            "flights": [(1, "AAA", "BBB", 60, 99.0), (2, "AAA", "CCC", 150, 199.5),
                        (3, "BBB", "CCC", 90, 120.0), (4, "CCC", "AAA", 200, 250.0),
                        (5, "BBB", "AAA", 65, 80.0)],
        },
    )


@dataclass(frozen=True)
class ItemSpec:
    """One fixture question plus the scripted model behavior for it."""

    item: TaskItem
    generation: str          # completion every branch gets for the generate prompt
    correct: bool            # frozen verdict of the final SQL vs gold
    reflection: str = ""     # reflect completion, for the one erroring item
    nosql: bool = False      # completion carries no SQL at all


def fixture_specs() -> list:
    return [
        # gold rows [(4,)], predicted identical
        ItemSpec(
            item=TaskItem("s1", "shop", "How many products are listed?", "",
                          "SELECT COUNT(*) FROM products", "simple"),
            generation="SELECT COUNT(*) FROM products",
            correct=True,
        ),
        # gold rows [('lamp',), ('mug',)], fenced completion, same query
        ItemSpec(
            item=TaskItem("s2", "shop", "Which product names are in the home category?",
                          "category = 'home'",
                          "SELECT name FROM products WHERE category = 'home'", "simple"),
            generation="```sql\nSELECT name FROM products WHERE category = 'home'\n```",
            correct=True,
        ),
        # gold [(2,)]; COUNT(id) returns the same rows as COUNT(*)
        ItemSpec(
            item=TaskItem("s3", "school", "How many students are in grade 9?", "grade = 9",
                          "SELECT COUNT(*) FROM students WHERE grade = 9", "simple"),
            generation="Sure! Here is the query: SELECT COUNT(id) FROM students WHERE grade = 9",
            correct=True,
        ),
        # gold [(2,)] vs predicted [(5,)]: the WHERE clause was dropped
        ItemSpec(
            item=TaskItem("s4", "flights", "How many flights depart from AAA?", "origin = 'AAA'",
                          "SELECT COUNT(*) FROM flights WHERE origin = 'AAA'", "simple"),
            generation="SELECT COUNT(*) FROM flights",
            correct=False,
        ),
        # first SQL hits a missing table, reflection lands on the gold query
        ItemSpec(
            item=TaskItem("s5", "school", "List the names of all students.", "",
                          "SELECT name FROM students", "simple"),
            generation="SELECT name FROM studentz",
            reflection="SELECT name FROM students;\n-- fixed the table name",
            correct=True,
        ),
        # gold [(3.0,)] vs predicted [(4.5,)]: wrong product
        ItemSpec(
            item=TaskItem("s6", "shop", "What is the price of the rope?", "name = 'rope'",
                          "SELECT price FROM products WHERE name = 'rope'", "simple"),
            generation="```\nSELECT price FROM products WHERE name = 'mug'\n```",
            correct=False,
        ),
        # gold [('anvil',2), ('lamp',1), ('rope',4)], predicted identical
        ItemSpec(
            item=TaskItem("m1", "shop", "How many units were ordered of each product name?", "",
                          "SELECT p.name, SUM(o.qty) FROM products p"
                          " JOIN orders o ON o.product_id = p.id GROUP BY p.name", "moderate"),
            generation="SELECT p.name, SUM(o.qty)\nFROM products p\n"
                       "JOIN orders o ON o.product_id = p.id\nGROUP BY p.name",
            correct=True,
        ),
        # gold [(78.666...,)], predicted identical
        ItemSpec(
            item=TaskItem("m2", "school", "What is the average math score?", "course = 'math'",
                          "SELECT AVG(score) FROM enrollments WHERE course = 'math'", "moderate"),
            generation="SELECT AVG(score) FROM enrollments WHERE course = 'math'",
            correct=True,
        ),
        # gold has 2 rows (minutes > 100); predicted threshold 80 adds a third
        ItemSpec(
            item=TaskItem("m3", "flights", "Which origin and destination pairs take over 100 minutes?",
                          "minutes > 100",
                          "SELECT origin, dest FROM flights WHERE minutes > 100", "moderate"),
            generation="SELECT origin, dest FROM flights WHERE minutes > 80",
            correct=False,
        ),
        # gold [('Cal',)]; comma join is equivalent
        ItemSpec(
            item=TaskItem("m4", "school", "Which student has the best art score?", "course = 'art'",
                          "SELECT s.name FROM students s JOIN enrollments e"
                          " ON e.student_id = s.id WHERE e.course = 'art'"
                          " ORDER BY e.score DESC LIMIT 1", "moderate"),
            generation="SELECT s.name FROM students s, enrollments e\n"
                       "WHERE e.student_id = s.id AND e.course = 'art'\n"
                       "ORDER BY e.score DESC LIMIT 1",
            correct=True,
        ),
        # gold [('AAA',149.25), ('BBB',100.0)]; the CTE computes the same table
        ItemSpec(
            item=TaskItem("c1", "flights", "Average ticket price per origin, for origins with more than one flight?",
                          "more than one flight per origin",
                          "SELECT origin, AVG(price) FROM flights GROUP BY origin"
                          " HAVING COUNT(*) > 1", "challenging"),
            generation="Here you go:\nWITH t AS (SELECT origin, AVG(price) AS ap, COUNT(*) AS c"
                       " FROM flights GROUP BY origin)\nSELECT origin, ap FROM t WHERE c > 1",
            correct=True,
        ),
        # gold [(9,)]; the completion refuses, so no SQL is extracted
        ItemSpec(
            item=TaskItem("c2", "school", "Which grade has the biggest spread between its best and worst course scores?",
                          "spread = MAX(score) - MIN(score)",
                          "SELECT grade FROM students s JOIN enrollments e"
                          " ON e.student_id = s.id GROUP BY grade"
                          " ORDER BY MAX(e.score) - MIN(e.score) DESC LIMIT 1", "challenging"),
            generation="I cannot produce a query for this request.",
            nosql=True,
            correct=False,
        ),
    ]


def build_script(specs, n_branches: int = len(RATES), info_mode: str = "high") -> dict:
    """Per-kind completion queues in exactly the order the run consumes them.

    Branches run one after another per item, and every branch receives the
    same completion for a given item, so each queue gets n_branches copies per
    item in item order.
    """
    script = {"generate_sql": [], "thought_process": [], "reflect_sql": [], "mistake_tip": []}
    for spec in specs:
        for _ in range(n_branches):
            script["generate_sql"].append(spec.generation)
            if not spec.nosql and info_mode == "high":
                script["thought_process"].append(f"Step by step reasoning for {spec.item.question_id}.")
            if spec.reflection:
                script["reflect_sql"].append(spec.reflection)
            if not spec.correct and info_mode == "high":
                script["mistake_tip"].append(f"# Tip: remember the lesson of {spec.item.question_id}.")
    return script


def write_questions_file(specs, path: Path) -> Path:
    records = []
    for i, spec in enumerate(specs):
        records.append({
            "question_id": spec.item.question_id,
            "db_id": spec.item.db_id,
            "question": spec.item.question,
            "evidence": spec.item.hint,
            "SQL": spec.item.gold_sql,
            "difficulty": spec.item.difficulty,
        })
    path.write_text(json.dumps(records, indent=1), encoding="utf-8")
    return path


def start_fake_endpoint(responses):
    """Serve canned (status, payload) JSON responses on a loopback port.

    The last response repeats once the list is exhausted. Returns the URL, a
    log of {"body": parsed_json, "headers": dict} records, and a shutdown
    callable.
    """
    import http.server
    import threading

    log = []

    class Handler(http.server.BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            body = self.rfile.read(length)
            log.append({
                "body": json.loads(body) if body else {},
                "headers": dict(self.headers),
            })
            status, payload = responses[min(len(log) - 1, len(responses) - 1)]
            data = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, *args):
            pass

    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    url = f"http://127.0.0.1:{server.server_address[1]}/"

    def shutdown():
        server.shutdown()
        server.server_close()

    return url, log, shutdown


@pytest.fixture()
def fake_endpoint():
    shutdowns = []

    def start(responses):
        url, log, shutdown = start_fake_endpoint(responses)
        shutdowns.append(shutdown)
        return url, log

    yield start
    for shutdown in shutdowns:
        shutdown()


@pytest.fixture(scope="session")
def fixture_db_root(tmp_path_factory) -> Path:
    root = tmp_path_factory.mktemp("fixture_dbs")
    build_fixture_dbs(root)
    return root


@pytest.fixture()
def specs() -> list:
    return fixture_specs()


@pytest.fixture()
def scripted_provider(specs) -> ScriptedProvider:
    return ScriptedProvider(build_script(specs))
