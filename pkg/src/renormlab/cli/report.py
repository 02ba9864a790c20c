"""Cross-experiment summary built from manifests."""

from __future__ import annotations

import copy
import math
from collections import defaultdict
from pathlib import Path

from ..stats import pooled
from .config import config_hash
from .manifest import IntegrityError, read_manifest, read_rows, verify

SUMMARY_FIELDS = ("kind", "quantity", "level", "label", "value", "stderr", "count", "sources")


def _config_family(config: dict) -> str:
    """Hash of the config with the seed and output location removed."""
    c = copy.deepcopy(config)
    c["experiment"].pop("seed", None)
    c["experiment"].pop("output", None)
    return config_hash(c)


def summarize(manifest_paths) -> list[dict]:
    """One row per (experiment family, quantity, level, label).

    Rows from manifests that differ only in their seed are pooled with
    count weights; others are listed separately.
    """
    groups: dict[tuple, list[tuple[dict, str]]] = defaultdict(list)
    problems = []
    for mp in manifest_paths:
        man, base = read_manifest(mp)
        issues = verify(man, base)
        if issues:
            problems += issues
            continue
        family = _config_family(man.config)
        for r in read_rows(base / "results.csv"):
            key = (family, man.kind, r["quantity"], int(r["level"]), r["label"])
            groups[key].append((r, str(base)))
    if problems:
        raise IntegrityError("; ".join(problems))
    out = []
    for (family, kind, quantity, level, label), items in groups.items():
        rows = [r for r, _ in items]
        sources = ";".join(sorted({s for _, s in items}))
        values = [float(r["value"]) for r in rows]
        stderrs = [float(r["stderr"]) for r in rows]
        counts = [int(r["count"]) for r in rows]
        if len(rows) == 1:
            value, se, count = values[0], stderrs[0], counts[0]
        elif all(c > 0 for c in counts):
            value, se, count = pooled(values, stderrs, counts)
        else:
            value, se, count = math.fsum(values) / len(values), float("nan"), len(values)
        out.append(
            {"kind": kind, "quantity": quantity, "level": level, "label": label, "value": value, "stderr": se, "count": count, "sources": sources}
        )
    out.sort(key=lambda r: (r["kind"], r["level"], r["quantity"], r["label"]))
    return out


def plain_table(rows: list[dict]) -> str:
    cols = ("kind", "quantity", "level", "label", "value", "stderr", "count")
    cells = [[str(c) for c in cols]]
    for r in rows:
        cells.append(
            [
                r["kind"],
                r["quantity"],
                str(r["level"]),
                r["label"],
                f"{r['value']:.6g}",
                "" if math.isnan(r["stderr"]) else f"{r['stderr']:.3g}",
                str(r["count"]),
            ]
        )
    widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_report(manifest_paths, out_dir) -> list[dict]:
    from .manifest import csv_text

    rows = summarize(manifest_paths)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.csv").write_text(csv_text(rows), encoding="utf-8")
    (out / "summary.txt").write_text(plain_table(rows), encoding="utf-8")
    return rows
