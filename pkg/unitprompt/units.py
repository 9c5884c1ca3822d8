"""Discrete unit sequences: vocabulary, condensing, and the on-disk text formats."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import CorpusIOError, InputPathError, UnitParseError, VocabularyError
from .utils import atomic_write_text

UnitSequence = tuple[int, ...]

MANIFEST_HEADER = ("id", "src_path", "tgt_path")


@dataclass(frozen=True)
class Vocabulary:
    """Unit vocabulary; the four reserved ids sit at the top of the range."""

    size: int

    def __post_init__(self) -> None:
        if self.size < 5:
            raise VocabularyError(f"vocabulary size must be >= 5, got {self.size}")

    @property
    def pad(self) -> int:
        return self.size - 4

    @property
    def bos(self) -> int:
        return self.size - 3

    @property
    def eos(self) -> int:
        return self.size - 2

    @property
    def mask(self) -> int:
        return self.size - 1

    @property
    def content_size(self) -> int:
        return self.size - 4

    @property
    def reserved(self) -> tuple[int, int, int, int]:
        return (self.pad, self.bos, self.eos, self.mask)

    def is_content(self, unit: int) -> bool:
        return 0 <= unit < self.content_size

    def validate(self, seq: Iterable[int]) -> UnitSequence:
        out = tuple(int(u) for u in seq)
        for pos, unit in enumerate(out):
            if unit < 0 or unit >= self.size:
                raise VocabularyError(
                    f"unit {unit} at position {pos} outside vocabulary of size {self.size}"
                )
        return out


def dedup(seq: Sequence[int]) -> UnitSequence:
    """Keep the first unit of every run of repeated consecutive units."""

    out: list[int] = []
    for unit in seq:
        if not out or out[-1] != unit:
            out.append(unit)
    return tuple(out)


def parse_units_line(text: str, vocab: Vocabulary | None = None, line: int = 1) -> UnitSequence:
    units: list[int] = []
    column = 0
    for token_no, token in enumerate(text.split(), start=1):
        column = text.index(token, column)
        if not (token.isascii() and token.isdigit()):
            raise UnitParseError(line, token_no, column + 1, token)
        units.append(int(token))
        column += len(token)
    seq = tuple(units)
    if vocab is not None:
        try:
            vocab.validate(seq)
        except VocabularyError as exc:
            raise VocabularyError(f"line {line}: {exc}") from exc
    return seq


def format_units_line(seq: Sequence[int]) -> str:
    return " ".join(str(int(u)) for u in seq)


# ---- units files ----

def read_units_file(path: str | Path, vocab: Vocabulary | None = None) -> list[UnitSequence]:
    path = Path(path)
    if not path.is_file():
        raise InputPathError(path, "units file not found")
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusIOError(path, exc) from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return [parse_units_line(line, vocab, line=i) for i, line in enumerate(lines, start=1)]


def write_units_file(path: str | Path, seqs: Iterable[Sequence[int]]) -> Path:
    return atomic_write_text(path, "".join(format_units_line(s) + "\n" for s in seqs))


# ---- manifests ----

@dataclass(frozen=True)
class ManifestRow:
    id: str
    src_path: str
    tgt_path: str


def read_manifest(path: str | Path) -> list[ManifestRow]:
    path = Path(path)
    if not path.is_file():
        raise InputPathError(path, "manifest not found")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if tuple(header or ()) != MANIFEST_HEADER:
            raise InputPathError(path, f"bad manifest header {header!r}")
        return [ManifestRow(*row) for row in reader if row]


def write_manifest(path: str | Path, rows: Iterable[ManifestRow]) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    for row in rows:
        writer.writerow((row.id, row.src_path, row.tgt_path))
    return atomic_write_text(path, buf.getvalue())


__all__ = [
    "MANIFEST_HEADER",
    "ManifestRow",
    "UnitSequence",
    "Vocabulary",
    "dedup",
    "format_units_line",
    "parse_units_line",
    "read_manifest",
    "read_units_file",
    "write_manifest",
    "write_units_file",
]
