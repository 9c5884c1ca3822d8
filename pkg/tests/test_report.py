from __future__ import annotations

import sqlite3

from unitprompt import db
from unitprompt.metrics import evaluate_run, write_report
from unitprompt.report import load_report, render_report


def test_registry_lifecycle(tmp_path):
    path = tmp_path / "runs.db"
    db.init_db(path)
    run_id = db.start_run(path, "pretrain", "abc")
    assert db.get_run(path, run_id)["status"] == "RUNNING"
    db.finish_run(path, run_id, status="OK", final_loss=0.5, artifact="backbone.ckpt")
    row = db.get_run(path, run_id)
    assert (row["status"], row["final_loss"], row["artifact"]) == ("OK", 0.5, "backbone.ckpt")
    assert row["finished_at"]
    db.start_run(path, "evaluate", "def")
    assert [r["job"] for r in db.list_runs(path)] == ["pretrain", "evaluate"]
    assert len(db.list_runs(path, job="evaluate")) == 1


def test_init_db_adds_missing_columns(tmp_path):
    path = tmp_path / "old.db"
    con = sqlite3.connect(path)
    con.execute(
        "CREATE TABLE runs(id INTEGER PRIMARY KEY AUTOINCREMENT, job TEXT NOT NULL, "
        "config_sha256 TEXT NOT NULL, status TEXT NOT NULL DEFAULT 'RUNNING', started_at TEXT NOT NULL)"
    )
    con.commit()
    con.close()
    db.init_db(path)
    run_id = db.start_run(path, "report", "x")
    db.finish_run(path, run_id, status="FAILED", error="boom")
    assert db.get_run(path, run_id)["error"] == "boom"


def test_registry_path_prefers_environment(tmp_path, monkeypatch):
    monkeypatch.setattr(db, "DB_PATH", "")
    assert db.registry_path(tmp_path) == tmp_path / "runs.db"
    monkeypatch.setattr(db, "DB_PATH", str(tmp_path / "elsewhere.db"))
    assert db.registry_path(tmp_path) == tmp_path / "elsewhere.db"


def test_render_report(tmp_path):
    report = evaluate_run([(1, 2, 3)], [(1, 2, 4)])
    loaded = load_report(write_report(tmp_path / "r.json", report))
    assert loaded == report
    runs = [{"id": 1, "job": "pretrain", "status": "OK", "final_loss": 1.23456, "artifact": None, "started_at": "2026-01-01T00:00:00"}]
    text = render_report([("generated", loaded)], runs)
    assert "| generated | 1 |" in text
    assert "33.33%" in text
    assert "| 1 | pretrain | OK | 1.2346 | - |" in text
    assert "2026-01-01" not in text


def test_render_empty_report():
    text = render_report([], [])
    assert "No metric reports found." in text
    assert "No registered runs." in text
