"""Corpus manifests and speaker-independent fold plans."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

from .errors import InvalidArgument

MANIFEST_HEADER = ("path", "speaker", "session", "label")


@dataclass(frozen=True)
class ManifestRow:
    path: str
    speaker: str
    session: str
    label: str


@dataclass(frozen=True)
class Manifest:
    rows: tuple
    root: Path = Path(".")

    def __len__(self):
        return len(self.rows)

    def speakers(self) -> list[str]:
        return sorted({r.speaker for r in self.rows})

    def resolve(self, row: ManifestRow) -> Path:
        p = Path(row.path)
        return p if p.is_absolute() else self.root / p

    def for_speakers(self, speakers) -> list[ManifestRow]:
        speakers = set(speakers)
        return [r for r in self.rows if r.speaker in speakers]


def read_manifest(path, labels=None) -> Manifest:
    """Parse ``path,speaker,session,label`` CSV rows (UTF-8, header required).

    Relative audio paths resolve against the manifest's directory. When
    ``labels`` is given, every row's label must belong to it.
    """
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MANIFEST_HEADER:
            raise InvalidArgument(f"{path}: header must be {','.join(MANIFEST_HEADER)}")
        rows = []
        seen = set()
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != 4:
                raise InvalidArgument(f"{path}:{lineno}: expected 4 fields, got {len(rec)}")
            row = ManifestRow(*(c.strip() for c in rec))
            if not row.speaker:
                raise InvalidArgument(f"{path}:{lineno}: empty speaker id")
            if row.path in seen:
                raise InvalidArgument(f"{path}:{lineno}: duplicate path {row.path}")
            if labels is not None and row.label not in labels:
                raise InvalidArgument(f"{path}:{lineno}: label {row.label!r} not in {list(labels)}")
            seen.add(row.path)
            rows.append(row)
    return Manifest(tuple(rows), path.parent)


def write_manifest(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_HEADER)
        for r in rows:
            w.writerow([r.path, r.speaker, r.session, r.label])


@dataclass(frozen=True)
class Fold:
    test: str
    validation: str
    train: tuple


def build_folds(manifest_or_speakers) -> list[Fold]:
    """One fold per speaker in sorted order.

    The validation speaker is the test speaker's cyclic successor; all
    remaining speakers train.
    """
    if isinstance(manifest_or_speakers, Manifest):
        speakers = manifest_or_speakers.speakers()
    else:
        speakers = sorted(set(manifest_or_speakers))
    if len(speakers) < 3:
        raise InvalidArgument(f"need at least 3 speakers for folds, got {len(speakers)}")
    folds = []
    for i, test in enumerate(speakers):
        val = speakers[(i + 1) % len(speakers)]
        train = tuple(s for s in speakers if s not in (test, val))
        folds.append(Fold(test, val, train))
    return folds
