"""Job orchestration: every pipeline stage is a ``JobConfig`` passed to :func:`run`."""
from __future__ import annotations

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

from . import config as settings
from . import db
from .backbone import BackboneConfig, next_unit_accuracy
from .batching import batch
from .checkpoint import load_backbone, load_prompts, save_backbone, save_prompts
from .errors import ConfigError, InputPathError, VocabularyError
from .metrics import EvalConfig, NgramLM, evaluate_baselines, evaluate_run, write_report
from .pretrain import PretrainConfig, pretrain_backbone
from .prompts import DecodeConfig, TuneConfig, generate_many, init_prompts, tune
from .report import load_report, render_report
from .tasks import CorpusConfig, build_corpus, corpus_vocab, read_split
from .units import read_units_file, write_units_file
from .utils import atomic_write_text, dump_json, resolve, sha256_text

log = logging.getLogger(__name__)

JOBS = ("gen-corpus", "pretrain", "prompt-tune", "generate", "evaluate", "report")


@dataclass(frozen=True)
class PathsConfig:
    corpus_dir: str = "corpus"
    backbone: str = "backbone.ckpt"
    prompts: str = "prompts.ckpt"
    hypotheses: str = "hypotheses.units"
    report: str = "report.json"
    run_dir: str = "runs"
    summary: str = ""

    def resolved(self, base: Path) -> "PathsConfig":
        return PathsConfig(
            **{
                f.name: str(resolve(base, getattr(self, f.name)) or "")
                for f in dataclasses.fields(self)
            }
        )


@dataclass(frozen=True)
class JobConfig:
    job: str
    seed: int | None = None
    split: str = "test"
    paths: PathsConfig = field(default_factory=PathsConfig)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    tune: TuneConfig = field(default_factory=TuneConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self) -> None:
        if self.job not in JOBS:
            raise ConfigError(f"job must be one of {', '.join(JOBS)}; got {self.job!r}")
        if self.split not in ("train", "valid", "test"):
            raise ConfigError(f"split must be train, valid or test; got {self.split!r}")

    def seeded(self) -> "JobConfig":
        """Push the job-level seed (when set) into every seeded sub-config."""

        if self.seed is None:
            return self
        return dataclasses.replace(
            self,
            corpus=dataclasses.replace(self.corpus, seed=self.seed),
            pretrain=dataclasses.replace(self.pretrain, seed=self.seed),
            tune=dataclasses.replace(self.tune, seed=self.seed),
            decode=dataclasses.replace(self.decode, seed=self.seed),
        )


@dataclass
class RunLog:
    job: str
    config: str
    overrides: list[str] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    metrics: dict[str, Any] = field(default_factory=dict)
    artifacts: list[str] = field(default_factory=list)
    summary: str = ""
    started_at: str = ""
    finished_at: str = ""
    wall_clock_s: float = 0.0

    def record(self, step: int, loss: float) -> None:
        self.losses.append(loss)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _require(path: str, what: str) -> Path:
    p = Path(path)
    if not path or not p.exists():
        raise InputPathError(p, f"{what} not found")
    return p


def _check_inputs(job: JobConfig) -> None:
    paths = job.paths
    if job.job in ("pretrain", "prompt-tune", "generate", "evaluate"):
        _require(paths.corpus_dir, "corpus directory")
    if job.job in ("prompt-tune", "generate"):
        _require(paths.backbone, "backbone checkpoint")
    if job.job == "generate" and paths.prompts:
        _require(paths.prompts, "prompt checkpoint")
    if job.job == "evaluate":
        _require(paths.hypotheses, "hypotheses file")


def _corpus_vocab(job: JobConfig, backbone: BackboneConfig):
    vocab = corpus_vocab(job.paths.corpus_dir)
    if vocab.size != backbone.vocab_size:
        raise VocabularyError(
            f"corpus vocabulary {vocab.size} does not match backbone vocab_size {backbone.vocab_size}"
        )
    return vocab


# --- Jobs ---

def _gen_corpus(job: JobConfig, log_: RunLog) -> None:
    manifests = build_corpus(job.corpus, job.paths.corpus_dir)
    log_.artifacts += [str(p) for p in manifests.values()]
    log_.metrics["samples"] = dict(zip(manifests, job.corpus.sizes))
    log_.summary = f"gen-corpus: {job.corpus.task} {'/'.join(map(str, job.corpus.sizes))} -> {Path(job.paths.corpus_dir).name}"


def _pretrain(job: JobConfig, log_: RunLog) -> None:
    vocab = _corpus_vocab(job, job.backbone)
    corpus = [s.tgt for s in read_split(job.paths.corpus_dir, "train", vocab)]
    path = job.paths.backbone

    def checkpoint(model) -> None:
        save_backbone(path, model)
        log.info("checkpoint at step %d -> %s", model.step, path)

    model = pretrain_backbone(
        corpus, job.pretrain, job.backbone, on_step=log_.record, on_checkpoint=checkpoint
    )
    save_backbone(path, model)
    log_.artifacts.append(path)
    log_.metrics["steps"] = model.step
    log_.metrics["parameters"] = model.parameter_count()
    if log_.losses:
        log_.metrics["final_loss"] = log_.losses[-1]
    log_.summary = f"pretrain: {model.step} steps, {model.parameter_count()} parameters -> {Path(path).name}"


def _prompt_tune(job: JobConfig, log_: RunLog) -> None:
    model = load_backbone(job.paths.backbone).freeze()
    vocab = _corpus_vocab(job, model.config)
    train = read_split(job.paths.corpus_dir, "train", vocab)
    valid = read_split(job.paths.corpus_dir, "valid", vocab)
    cfg = job.tune
    prompts = init_prompts(
        model.config, cfg.prompt_length, cfg.seed, scale=cfg.init_scale, layout=cfg.layout
    )
    tuned = tune(model, prompts, train, cfg, on_step=log_.record)
    save_prompts(job.paths.prompts, tuned)
    log_.artifacts.append(job.paths.prompts)
    log_.metrics["prompt_parameters"] = tuned.parameter_count()
    if log_.losses:
        log_.metrics["final_loss"] = log_.losses[-1]
    if valid:
        pairs = [(s.src, s.tgt) for s in valid]
        log_.metrics["valid_accuracy"] = next_unit_accuracy(model, pairs, tuned)
        log_.metrics["valid_accuracy_untuned"] = next_unit_accuracy(model, pairs, prompts)
    log_.summary = (
        f"prompt-tune: L={tuned.length} ({tuned.layout.describe()}), "
        f"{tuned.parameter_count()} prompt parameters -> {Path(job.paths.prompts).name}"
    )


def _generate(job: JobConfig, log_: RunLog) -> None:
    model = load_backbone(job.paths.backbone).freeze()
    vocab = _corpus_vocab(job, model.config)
    prompts = load_prompts(job.paths.prompts, model.config) if job.paths.prompts else None
    samples = read_split(job.paths.corpus_dir, job.split, vocab)
    hyps = generate_many(
        model,
        {"task": prompts},
        [("task", s.src) for s in samples],
        job.decode,
        num_workers=settings.NUM_WORKERS,
    )
    write_units_file(job.paths.hypotheses, hyps)
    log_.artifacts.append(job.paths.hypotheses)
    log_.metrics["hypotheses"] = len(hyps)
    log_.summary = f"generate: {len(hyps)} {job.split} hypotheses ({job.decode.mode}) -> {Path(job.paths.hypotheses).name}"


def _baseline_path(report: str, name: str) -> Path:
    p = Path(report)
    return p.with_name(f"{p.stem}.{name}{p.suffix}")


def _evaluate(job: JobConfig, log_: RunLog) -> None:
    vocab = corpus_vocab(job.paths.corpus_dir)
    samples = read_split(job.paths.corpus_dir, job.split, vocab)
    hyps = read_units_file(job.paths.hypotheses, vocab)
    refs = [s.tgt for s in samples]
    cfg = job.eval
    lm_corpus = refs if cfg.lm_source == "references" else [
        s.tgt for s in read_split(job.paths.corpus_dir, "train", vocab)
    ]
    lm = NgramLM(cfg.lm_order, vocab.size).fit(lm_corpus)
    workers = cfg.num_workers or settings.NUM_WORKERS
    report = evaluate_run(refs, hyps, lm, workers)
    write_report(job.paths.report, report)
    log_.artifacts.append(job.paths.report)
    if cfg.baselines:
        for name, extra in evaluate_baselines([s.src for s in samples], refs, lm, workers).items():
            path = _baseline_path(job.paths.report, name)
            write_report(path, extra)
            log_.artifacts.append(str(path))
    log_.metrics.update(report.to_dict())
    log_.summary = (
        f"evaluate: n={report.n_samples} BLEU-4 {report.bleu_4:.2f} WER {100 * report.wer:.2f}% "
        f"-> {Path(job.paths.report).name}"
    )


def _report(job: JobConfig, log_: RunLog) -> None:
    reports = []
    for name, path in (
        ("generated", Path(job.paths.report)),
        ("corrupted", _baseline_path(job.paths.report, "corrupted")),
        ("reference", _baseline_path(job.paths.report, "reference")),
    ):
        if path.is_file():
            reports.append((name, load_report(path)))
    registry = db.registry_path(job.paths.run_dir)
    runs = db.list_runs(registry) if registry.is_file() else []
    text = render_report(reports, [r for r in runs if r["job"] != "report"])
    if job.paths.summary:
        atomic_write_text(job.paths.summary, text)
        log_.artifacts.append(job.paths.summary)
    log_.summary = text.rstrip("\n")


_DISPATCH = {
    "gen-corpus": _gen_corpus,
    "pretrain": _pretrain,
    "prompt-tune": _prompt_tune,
    "generate": _generate,
    "evaluate": _evaluate,
    "report": _report,
}


def run(
    job: JobConfig,
    *,
    base_dir: str | Path = ".",
    config_text: str | None = None,
    overrides: Sequence[str] = (),
) -> RunLog:
    """Run one job; relative paths resolve against ``base_dir`` (the config file's directory)."""

    job = dataclasses.replace(job.seeded(), paths=job.paths.resolved(Path(base_dir)))
    text = config_text if config_text is not None else dump_json(dataclasses.asdict(job))
    _check_inputs(job)

    registry = db.registry_path(job.paths.run_dir)
    db.init_db(registry)
    run_id = db.start_run(registry, job.job, sha256_text(text))
    log_ = RunLog(job=job.job, config=text, overrides=list(overrides), started_at=_now())
    t0 = time.perf_counter()
    log.info("run %d: %s", run_id, job.job)
    try:
        _DISPATCH[job.job](job, log_)
    except Exception as exc:
        log.exception("run %d (%s) failed", run_id, job.job)
        db.finish_run(registry, run_id, status="FAILED", error=str(exc))
        raise
    log_.finished_at = _now()
    log_.wall_clock_s = round(time.perf_counter() - t0, 3)
    db.finish_run(
        registry,
        run_id,
        status="OK",
        final_loss=log_.losses[-1] if log_.losses else None,
        artifact=Path(log_.artifacts[0]).name if log_.artifacts else None,
    )
    atomic_write_text(Path(job.paths.run_dir) / f"{job.job}.runlog.json", dump_json(log_.to_dict()))
    return log_


__all__ = ["JOBS", "JobConfig", "PathsConfig", "RunLog", "batch", "run"]
