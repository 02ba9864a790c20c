"""Result files and the JSON manifest that ties them to their config."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .config import config_hash

MANIFEST_NAME = "manifest.json"


class IntegrityError(RuntimeError):
    pass


@dataclass
class FileEntry:
    name: str
    sha256: str
    rows: int


@dataclass
class Manifest:
    config: dict
    config_hash: str
    artifact_version: str
    kind: str
    seed: int
    wall_clock_seconds: float
    step_counts: dict
    assertions: dict
    files: list[FileEntry] = field(default_factory=list)
    seed_partition: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.assertions.values())

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "Manifest":
        data = dict(data)
        data["files"] = [FileEntry(**f) for f in data.get("files", [])]
        return cls(**data)


def csv_text(rows: list[dict]) -> str:
    """UTF-8 CSV with a header row; floats in shortest round-trip form."""
    buf = io.StringIO()
    if not rows:
        return ""
    fields = list(rows[0].keys())
    for r in rows[1:]:
        for k in r:
            if k not in fields:
                fields.append(k)
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def write_tables(out_dir: Path, tables: dict[str, list[dict]]) -> list[FileEntry]:
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for name in sorted(tables):
        payload = csv_text(tables[name]).encode("utf-8")
        fname = f"{name}.csv"
        (out_dir / fname).write_bytes(payload)
        entries.append(FileEntry(name=fname, sha256=sha256_bytes(payload), rows=len(tables[name])))
    return entries


def read_manifest(path) -> tuple[Manifest, Path]:
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST_NAME
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise IntegrityError(f"cannot read manifest {p}: {e}") from e
    return Manifest.from_dict(data), p.parent


def verify(manifest: Manifest, base: Path) -> list[str]:
    """Integrity problems, one message per file (empty when everything matches)."""
    problems = []
    if config_hash(manifest.config) != manifest.config_hash:
        problems.append(f"{base / MANIFEST_NAME}: config hash mismatch")
    for entry in manifest.files:
        p = base / entry.name
        try:
            data = p.read_bytes()
        except OSError:
            problems.append(f"{p}: missing")
            continue
        if sha256_bytes(data) != entry.sha256:
            problems.append(f"{p}: hash mismatch")
    return problems


def read_rows(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
