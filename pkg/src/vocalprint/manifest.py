"""Dataset manifest: a tab-separated table with one row per track.

Columns (header row required, in this order)::

    path  singer_id  authenticity  algorithm  split  variant

``path`` is relative to the manifest's directory. ``authenticity`` is
``authentic`` or ``deepfake``; ``algorithm`` is a generator tag and must be
empty exactly when the track is authentic. ``split`` is one of
train/val/test and ``variant`` is ``fullmix`` or ``vocals`` (source
separation happens upstream; the variant only records which stem a row is).
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import ConfigError

COLUMNS = ("path", "singer_id", "authenticity", "algorithm", "split", "variant")
AUTHENTICITY = ("authentic", "deepfake")
SPLITS = ("train", "val", "test")
VARIANTS = ("fullmix", "vocals")
REAL_TAG = "REAL"


@dataclass(frozen=True)
class ManifestRow:
    path: str
    singer_id: str
    authenticity: str
    algorithm: str
    split: str
    variant: str

    @property
    def track_id(self) -> str:
        return self.path

    @property
    def is_fake(self) -> bool:
        return self.authenticity == "deepfake"

    @property
    def tag(self) -> str:
        """Algorithm id for fakes, ``REAL`` for authentic tracks."""
        return self.algorithm if self.is_fake else REAL_TAG


class Manifest:
    def __init__(self, rows, root="."):
        self.rows: list[ManifestRow] = list(rows)
        self.root = Path(root)
        self.validate()

    def __len__(self):
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def validate(self):
        seen = set()
        for i, row in enumerate(self.rows, start=2):
            where = f"manifest line {i}"
            if row.path in seen:
                raise ConfigError(f"{where}: duplicate path {row.path!r}")
            seen.add(row.path)
            if row.authenticity not in AUTHENTICITY:
                raise ConfigError(f"{where}: authenticity must be one of {AUTHENTICITY}")
            if row.split not in SPLITS:
                raise ConfigError(f"{where}: split must be one of {SPLITS}")
            if row.variant not in VARIANTS:
                raise ConfigError(f"{where}: variant must be one of {VARIANTS}")
            if row.is_fake != bool(row.algorithm):
                raise ConfigError(f"{where}: algorithm tag must be present iff the track is a deepfake")
            if not row.singer_id:
                raise ConfigError(f"{where}: empty singer_id")

    def select(self, split=None, authenticity=None) -> list[ManifestRow]:
        return [
            r for r in self.rows
            if (split is None or r.split == split)
            and (authenticity is None or r.authenticity == authenticity)
        ]

    def resolve(self, row: ManifestRow) -> Path:
        return self.root / row.path

    def by_track(self) -> dict[str, ManifestRow]:
        return {r.track_id: r for r in self.rows}

    @classmethod
    def read(cls, path) -> "Manifest":
        path = Path(path)
        with path.open(newline="") as fh:
            reader = csv.reader(fh, delimiter="\t")
            header = next(reader, None)
            if header is None or tuple(header) != COLUMNS:
                raise ConfigError(f"{path}: header must be {' '.join(COLUMNS)}")
            rows = []
            for line in reader:
                if not line:
                    continue
                if len(line) != len(COLUMNS):
                    raise ConfigError(f"{path}: expected {len(COLUMNS)} columns, got {len(line)}")
                rows.append(ManifestRow(*line))
        return cls(rows, path.parent)

    def write(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
            writer.writerow(COLUMNS)
            for row in self.rows:
                writer.writerow(asdict(row).values())
