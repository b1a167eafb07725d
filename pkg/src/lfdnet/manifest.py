"""CSV manifests linking pipeline stages, plus content hashing.

Each stage directory carries a ``manifest.csv``:

* corpus dir (generator): header ``path,label,split`` with the split
  column empty until a split is assigned;
* images dir (renderer): the same three columns followed by
  ``mesh_sha256,resolution,fill,img00..img19``.  The hash of the source
  mesh file is the cache key that lets re-renders skip unchanged models.

Paths are relative to the manifest's directory, with forward slashes.
"""

import csv
import hashlib
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import ManifestError, MissingArtifactError
from .render import VIEW_COUNT

MANIFEST_NAME = "manifest.csv"

_CORPUS_HEADER = ["path", "label", "split"]
_RENDER_HEADER = _CORPUS_HEADER + ["mesh_sha256", "resolution", "fill"] + [
    f"img{v:02d}" for v in range(VIEW_COUNT)
]
_SPLITS = ("", "train", "test")


@dataclass(frozen=True)
class CorpusEntry:
    path: str
    label: str
    split: str = ""


@dataclass(frozen=True)
class RenderEntry:
    path: str
    label: str
    split: str
    mesh_sha256: str
    resolution: int
    fill: float
    images: tuple

    def with_split(self, split: str) -> "RenderEntry":
        return replace(self, split=split)


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _read_rows(path, header):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"manifest not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        got = next(reader, None)
        if got != header:
            raise ManifestError(f"{path.name}: expected columns {header}, got {got}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ManifestError(f"{path.name} line {lineno}: expected {len(header)} fields")
            rows.append(row)
    return rows


def _check_rows(rows):
    seen = set()
    for row in rows:
        if not row.label:
            raise ManifestError(f"empty label for {row.path!r}")
        if row.split not in _SPLITS:
            raise ManifestError(f"unknown split {row.split!r} for {row.path}")
        if row.path in seen:
            raise ManifestError(f"duplicate path {row.path!r}")
        seen.add(row.path)
    return rows


def write_corpus_manifest(directory, entries) -> Path:
    path = Path(directory) / MANIFEST_NAME
    _write_rows(path, _CORPUS_HEADER, [(e.path, e.label, e.split) for e in entries])
    return path


def read_corpus_manifest(directory):
    rows = _read_rows(Path(directory) / MANIFEST_NAME, _CORPUS_HEADER)
    return _check_rows([CorpusEntry(*row) for row in rows])


def write_render_manifest(directory, entries) -> Path:
    path = Path(directory) / MANIFEST_NAME
    rows = [
        (e.path, e.label, e.split, e.mesh_sha256, e.resolution, repr(e.fill)) + e.images
        for e in entries
    ]
    _write_rows(path, _RENDER_HEADER, rows)
    return path


def read_render_manifest(directory):
    rows = _read_rows(Path(directory) / MANIFEST_NAME, _RENDER_HEADER)
    out = []
    for row in rows:
        path, label, split, sha, res, fill = row[:6]
        out.append(RenderEntry(path, label, split, sha, int(res), float(fill), tuple(row[6:])))
    return _check_rows(out)
