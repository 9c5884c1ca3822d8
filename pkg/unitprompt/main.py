from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from .config import apply_overrides, dataclass_from_dict, read_config_file, setup_logging
from .errors import ConfigError, UnitPromptError, UsageError
from .trainer import JobConfig, run


# subcommand -> job kind
COMMANDS = {
    "gen-corpus": "gen-corpus",
    "pretrain": "pretrain",
    "tune": "prompt-tune",
    "generate": "generate",
    "eval": "evaluate",
    "report": "report",
}

HELP = {
    "gen-corpus": "write a synthetic task corpus (units files, manifests, metadata)",
    "pretrain": "span-denoising pretraining of the backbone",
    "tune": "tune deep prompts against the frozen backbone",
    "generate": "decode hypotheses for one corpus split",
    "eval": "score hypotheses: BLEU, auto-BLEU, WER/CER, perplexity",
    "report": "render metric reports and registered runs as markdown",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="unitprompt",
        description="Prompt tuning of a frozen unit-sequence encoder-decoder.",
    )
    parser.add_argument(
        "--log-level",
        default=None,
        help="logging level (default: UNITPROMPT_LOG_LEVEL or INFO)",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name, text in HELP.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", required=True, help="JSON job file; relative paths resolve against its directory")
        p.add_argument(
            "overrides",
            nargs="*",
            metavar="KEY=VALUE",
            help="dotted overrides applied after the file, e.g. tune.steps=100",
        )
    return parser


def load_job(command: str, config_path: str, overrides: Sequence[str]) -> tuple[JobConfig, str, Path]:
    text, data = read_config_file(config_path)
    data = apply_overrides(data, overrides)
    job = COMMANDS[command]
    if data.get("job", job) != job:
        raise ConfigError(f"{config_path}: job is {data['job']!r} but the subcommand runs {job!r}")
    data["job"] = job
    return dataclass_from_dict(JobConfig, data), text, Path(config_path).resolve().parent


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # --help
        return int(exc.code or 0)
    except UnitPromptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    setup_logging(args.log_level)
    try:
        job, text, base = load_job(args.command, args.config, args.overrides)
        result = run(job, base_dir=base, config_text=text, overrides=args.overrides)
    except UnitPromptError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    print(result.summary)
    return 0


__all__ = ["COMMANDS", "build_parser", "load_job", "main"]
