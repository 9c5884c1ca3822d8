"""sqlite run registry: one row per job run."""
from __future__ import annotations

import sqlite3
from contextlib import closing
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from .config import DB_PATH


def registry_path(run_dir: str | Path) -> Path:
    return Path(DB_PATH) if DB_PATH else Path(run_dir) / "runs.db"


def _connect(path: str | Path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    con = sqlite3.connect(str(path))
    con.row_factory = sqlite3.Row
    return con


def db_execute(
    path: str | Path,
    sql,
    params=(),
    *,
    fetchone=False,
    fetchall=False,
    return_lastrowid=False,
):
    with closing(_connect(path)) as con:
        cur = con.cursor()
        cur.execute(sql, params)
        con.commit()
        if return_lastrowid:
            return cur.lastrowid
        if fetchone:
            r = cur.fetchone()
            return dict(r) if r else None
        if fetchall:
            return [dict(x) for x in cur.fetchall()]
    return None


def _table_exists(con, name):
    cur = con.cursor()
    cur.execute("SELECT name FROM sqlite_master WHERE type='table' AND name=?", (name,))
    return cur.fetchone() is not None


def _col_exists(con, table, col):
    cur = con.cursor()
    cur.execute(f"PRAGMA table_info({table})")
    return col in [r[1] for r in cur.fetchall()]


def init_db(path: str | Path) -> None:
    with closing(_connect(path)) as con:
        cur = con.cursor()
        cur.execute("""
        CREATE TABLE IF NOT EXISTS runs(
            id INTEGER PRIMARY KEY AUTOINCREMENT,
            job TEXT NOT NULL,
            config_sha256 TEXT NOT NULL,
            status TEXT NOT NULL DEFAULT 'RUNNING', -- RUNNING/OK/FAILED
            started_at TEXT NOT NULL
        );""")
        cur.execute("CREATE INDEX IF NOT EXISTS idx_runs_job ON runs(job);")

        # columns added after the first registry layout
        add_cols = [
            ("runs", "finished_at", "TEXT"),
            ("runs", "final_loss", "REAL"),
            ("runs", "artifact", "TEXT"),
            ("runs", "error", "TEXT"),
        ]
        for t, c, typ in add_cols:
            if _table_exists(con, t) and not _col_exists(con, t, c):
                cur.execute(f"ALTER TABLE {t} ADD COLUMN {c} {typ};")
        con.commit()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def start_run(path: str | Path, job: str, config_sha256: str) -> int:
    return db_execute(
        path,
        "INSERT INTO runs(job, config_sha256, status, started_at) VALUES(?,?,?,?)",
        (job, config_sha256, "RUNNING", _now()),
        return_lastrowid=True,
    )


def finish_run(
    path: str | Path,
    run_id: int,
    *,
    status: str,
    final_loss: float | None = None,
    artifact: str | None = None,
    error: str | None = None,
) -> None:
    db_execute(
        path,
        "UPDATE runs SET status=?, finished_at=?, final_loss=?, artifact=?, error=? WHERE id=?",
        (status, _now(), final_loss, artifact, error, run_id),
    )


def get_run(path: str | Path, run_id: int) -> dict[str, Any] | None:
    return db_execute(path, "SELECT * FROM runs WHERE id=?", (run_id,), fetchone=True)


def list_runs(path: str | Path, job: str | None = None, limit: int = 50) -> list[dict[str, Any]]:
    if job:
        return db_execute(
            path, "SELECT * FROM runs WHERE job=? ORDER BY id LIMIT ?", (job, limit), fetchall=True
        )
    return db_execute(path, "SELECT * FROM runs ORDER BY id LIMIT ?", (limit,), fetchall=True)


__all__ = [
    "db_execute",
    "finish_run",
    "get_run",
    "init_db",
    "list_runs",
    "registry_path",
    "start_run",
]
