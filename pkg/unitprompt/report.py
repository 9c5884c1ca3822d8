from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable, Mapping

from jinja2 import Environment, FileSystemLoader, StrictUndefined

from .errors import CorpusIOError, InputPathError
from .metrics import MetricReport

BASE_DIR = Path(__file__).resolve().parent
TEMPLATES_DIR = BASE_DIR / "templates"


def _format_number(value: Any, digits: int = 2) -> str:
    if value is None:
        return "-"
    try:
        return f"{float(value):.{digits}f}"
    except (TypeError, ValueError):
        return str(value)


def _format_percent(value: Any) -> str:
    if value is None:
        return "-"
    return f"{100.0 * float(value):.2f}%"


env = Environment(
    loader=FileSystemLoader(str(TEMPLATES_DIR)),
    undefined=StrictUndefined,
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=True,
)
env.filters["num"] = _format_number
env.filters["pct"] = _format_percent


def load_report(path: str | Path) -> MetricReport:
    path = Path(path)
    if not path.is_file():
        raise InputPathError(path, "metric report not found")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise CorpusIOError(path, exc) from exc
    return MetricReport(**data)


def render_report(
    reports: Iterable[tuple[str, MetricReport]],
    runs: Iterable[Mapping[str, Any]] = (),
) -> str:
    """Markdown summary of metric reports and registry rows (no timestamps)."""

    rows = [{k: v for k, v in run.items() if not k.endswith("_at")} for run in runs]
    return env.get_template("report.md.j2").render(reports=list(reports), runs=rows)


__all__ = ["TEMPLATES_DIR", "load_report", "render_report"]
