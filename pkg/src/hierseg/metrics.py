"""Hierarchical evaluation: per-level accuracy, wAP, TICE, FPA, and reports.

Metrics are computed from dumped prediction records rather than live models,
so any model's output can be scored offline.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .taxonomy import TaxonomyTree, is_valid_path


class PredictionFormatError(ValueError):
    """Malformed prediction dump (bad JSONL line)."""


@dataclass(frozen=True)
class PredictionRecord:
    id: str
    predicted: tuple  # argmax class index per level, coarse -> fine
    truth: tuple


@dataclass(frozen=True)
class MetricsReport:
    per_level_accuracy: tuple
    wap: float
    tice: float
    fpa: float
    n: int

    def to_dict(self) -> dict:
        return {"per_level_accuracy": list(self.per_level_accuracy),
                "wap": self.wap, "tice": self.tice, "fpa": self.fpa, "n": self.n}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(per_level_accuracy=tuple(d["per_level_accuracy"]),
                   wap=d["wap"], tice=d["tice"], fpa=d["fpa"], n=d["n"])


def _require_records(records):
    if not records:
        raise ValueError("no prediction records to score")


def level_accuracy(records, level: int) -> float:
    """Fraction of records with the correct label at ``level`` (1-based)."""
    _require_records(records)
    hits = sum(1 for r in records if r.predicted[level - 1] == r.truth[level - 1])
    return hits / len(records)


def wap(per_level_accuracy, level_sizes) -> float:
    """Per-level accuracies averaged with weights proportional to class counts."""
    if len(per_level_accuracy) != len(level_sizes):
        raise ValueError(f"{len(per_level_accuracy)} accuracies for "
                         f"{len(level_sizes)} level sizes")
    total = sum(level_sizes)
    return sum(n * p for n, p in zip(level_sizes, per_level_accuracy)) / total


def tice(records, tree: TaxonomyTree) -> float:
    """Fraction of records whose predicted path does not exist in the tree."""
    _require_records(records)
    bad = sum(1 for r in records if not is_valid_path(tree, r.predicted))
    return bad / len(records)


def fpa(records) -> float:
    """Fraction of records predicted correctly at every level simultaneously."""
    _require_records(records)
    hits = sum(1 for r in records if tuple(r.predicted) == tuple(r.truth))
    return hits / len(records)


def assemble_report(records, tree: TaxonomyTree) -> MetricsReport:
    _require_records(records)
    accs = tuple(level_accuracy(records, l) for l in range(1, tree.num_levels + 1))
    return MetricsReport(per_level_accuracy=accs,
                         wap=wap(accs, tree.level_sizes),
                         tice=tice(records, tree),
                         fpa=fpa(records),
                         n=len(records))


def record_from_logits(sample_id: str, level_logits, truth) -> PredictionRecord:
    """Argmax each level's logits; ties break toward the lowest class index."""
    predicted = tuple(int(np.argmax(np.asarray(v))) for v in level_logits)
    return PredictionRecord(id=sample_id, predicted=predicted, truth=tuple(truth))


def write_jsonl(records, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({"id": r.id, "pred": list(r.predicted),
                                 "truth": list(r.truth)}) + "\n")


def read_jsonl(path: str):
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                records.append(PredictionRecord(
                    id=str(obj["id"]),
                    predicted=tuple(int(v) for v in obj["pred"]),
                    truth=tuple(int(v) for v in obj["truth"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise PredictionFormatError(f"line {lineno}: {exc}") from exc
    return records


def write_report_json(report: MetricsReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")


def format_report_table(report: MetricsReport, level_labels=None) -> str:
    """Render a report as a one-row text table: FPA, per-level accuracies, wAP, TICE."""
    if level_labels is None:
        level_labels = [f"level_{l}" for l in range(1, len(report.per_level_accuracy) + 1)]
    headers = ["FPA"] + list(level_labels) + ["wAP", "TICE"]
    values = ([100 * report.fpa] + [100 * p for p in report.per_level_accuracy]
              + [100 * report.wap, 100 * report.tice])
    cells = [f"{v:.2f}" for v in values]
    widths = [max(len(h), len(c)) for h, c in zip(headers, cells)]
    head = "  ".join(h.rjust(w) for h, w in zip(headers, widths))
    row = "  ".join(c.rjust(w) for c, w in zip(cells, widths))
    return head + "\n" + row + "\n"
