"""Read-only SQL execution against SQLite files and canonical result equality.

The equality defined here is the single comparand for both scoring (predicted
vs gold execution) and voting (candidate vs candidate): results are compared
as *sets* of canonicalized rows, integral reals equal their integers, and a
failed or timed-out execution is never equal to anything, itself included.
"""

from __future__ import annotations

import hashlib
import sqlite3
import time
from dataclasses import dataclass
from pathlib import Path

DEFAULT_TIMEOUT_MS = 30_000

# progress-handler granularity, in SQLite VM instructions
_PROGRESS_STEP = 1_000


def canonical_value(v):
    """Map one fetched cell to its canonical form.

    Integral floats become ints (so 1.0 and 1 compare and hash equal), blobs
    become content digests, everything else (None, int, float, str) passes
    through unchanged.
    """
    if isinstance(v, float) and v.is_integer():
        return int(v)
    if isinstance(v, bytes):
        return ("blob", hashlib.sha256(v).hexdigest())
    return v


@dataclass(frozen=True)
class RowSet:
    """Canonicalized execution result: distinct rows plus the original count.

    ``row_count`` is kept for diagnostics only; equality is over ``rows``.
    """

    rows: frozenset
    row_count: int

    @classmethod
    def from_fetched(cls, fetched) -> "RowSet":
        rows = frozenset(tuple(canonical_value(v) for v in row) for row in fetched)
        return cls(rows=rows, row_count=len(fetched))

    def sorted_rows(self) -> list:
        # repr is a total, deterministic order over the mixed-type tuples
        return sorted(self.rows, key=repr)

    def digest(self) -> str:
        return hashlib.sha256(repr(self.sorted_rows()).encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ExecOutcome:
    """One of: rows (with a RowSet), failure (with a message), or timeout."""

    status: str  # "rows" | "failure" | "timeout"
    rowset: RowSet | None = None
    error: str = ""

    def __post_init__(self) -> None:
        if self.status not in ("rows", "failure", "timeout"):
            raise ValueError(f"unknown outcome status: {self.status!r}")
        if self.status == "rows" and self.rowset is None:
            raise ValueError("rows outcome requires a RowSet")
        if self.status == "failure" and not self.error:
            raise ValueError("failure outcome requires a non-empty message")

    @classmethod
    def from_rows(cls, fetched) -> "ExecOutcome":
        return cls(status="rows", rowset=RowSet.from_fetched(fetched))

    @classmethod
    def failure(cls, message: str) -> "ExecOutcome":
        return cls(status="failure", error=message)

    @classmethod
    def timeout(cls) -> "ExecOutcome":
        return cls(status="timeout")

    def summary(self) -> dict:
        """Compact, deterministic form for run logs (row preview capped)."""
        out: dict = {"status": self.status}
        if self.status == "rows":
            assert self.rowset is not None
            out["row_count"] = self.rowset.row_count
            out["distinct_rows"] = len(self.rowset.rows)
            out["rows_digest"] = self.rowset.digest()
            out["rows_preview"] = [
                [_jsonable(v) for v in row] for row in self.rowset.sorted_rows()[:20]
            ]
        elif self.status == "failure":
            out["error"] = self.error
        return out


def _jsonable(v):
    if isinstance(v, tuple):  # blob digest tag
        return {"blob": v[1]}
    return v


def outcomes_equal(a: ExecOutcome, b: ExecOutcome) -> bool:
    """True iff both executions produced rows and the row sets are equal.

    Failures and timeouts vote with nobody, including themselves: an erroring
    candidate can neither score credit nor form an agreement group.
    """
    if a.status != "rows" or b.status != "rows":
        return False
    assert a.rowset is not None and b.rowset is not None
    return a.rowset.rows == b.rowset.rows


def db_path(db_root, db_id: str) -> Path:
    """BIRD directory convention: <db_root>/<db_id>/<db_id>.sqlite."""
    return Path(db_root) / db_id / f"{db_id}.sqlite"


def execute(db_file, sql: str, timeout_ms: int = DEFAULT_TIMEOUT_MS) -> ExecOutcome:
    """Run one untrusted statement read-only, cancelling at ``timeout_ms``.

    A missing database file raises (harness misconfiguration); everything the
    engine complains about becomes a Failure outcome instead.
    """
    path = Path(db_file)
    if not path.is_file():
        raise FileNotFoundError(f"database file not found: {path}")
    if timeout_ms <= 0:
        raise ValueError(f"timeout_ms must be positive, got {timeout_ms}")

    deadline = time.monotonic() + timeout_ms / 1000.0
    timed_out = False

    def _check_deadline():
        nonlocal timed_out
        if time.monotonic() >= deadline:
            timed_out = True
            return 1  # nonzero aborts the statement
        return 0

    conn = sqlite3.connect(f"file:{path}?mode=ro", uri=True)
    try:
        conn.set_progress_handler(_check_deadline, _PROGRESS_STEP)
        try:
            cursor = conn.execute(sql)
            fetched = cursor.fetchall()
        except sqlite3.Error as exc:
            if timed_out:
                return ExecOutcome.timeout()
            return ExecOutcome.failure(str(exc) or type(exc).__name__)
        if timed_out:
            return ExecOutcome.timeout()
        return ExecOutcome.from_rows(fetched)
    finally:
        conn.close()
