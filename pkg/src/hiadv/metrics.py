"""Flat Micro/Macro-F1 plus per-depth and per-frequency breakdowns.

Macro-F1 averages per-label F1 over the labels that occur at least once on
either side (TP + FP + FN > 0). Labels absent from both truth and
predictions across the whole split are left out of the average. The root
never counts.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .hierarchy import LabelHierarchy

FREQUENCY_BUCKETS = ("<20%", "20-40%", "40-60%", "60-80%", ">80%")


@dataclass
class MetricReport:
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    label_mask: np.ndarray   # False for the root
    micro_f1: float
    macro_f1: float
    micro_precision: float
    micro_recall: float

    @property
    def support(self) -> np.ndarray:
        return self.tp + self.fn

    @property
    def included(self) -> np.ndarray:
        return self.label_mask & ((self.tp + self.fp + self.fn) > 0)

    @property
    def precision(self) -> np.ndarray:
        return _safe_div(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> np.ndarray:
        return _safe_div(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> np.ndarray:
        return _safe_div(2 * self.tp, 2 * self.tp + self.fp + self.fn)

    def summary(self) -> dict:
        return {
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "micro_precision": self.micro_precision,
            "micro_recall": self.micro_recall,
            "n_labels_averaged": int(self.included.sum()),
        }

    def rows(self, h: LabelHierarchy) -> list[dict]:
        p, r, f = self.precision, self.recall, self.f1
        inc = self.included
        return [
            {"label": h.labels[i], "depth": h.depth[i], "tp": int(self.tp[i]),
             "fp": int(self.fp[i]), "fn": int(self.fn[i]), "support": int(self.support[i]),
             "precision": float(p[i]), "recall": float(r[i]), "f1": float(f[i]),
             "in_macro": int(inc[i])}
            for i in range(len(h)) if self.label_mask[i]
        ]

    def write_csv(self, path: str | Path, h: LabelHierarchy) -> None:
        rows = self.rows(h)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["label"])
            w.writeheader()
            w.writerows(rows)

    def write_json(self, path: str | Path, extra: dict | None = None) -> None:
        doc = self.summary()
        if extra:
            doc.update(extra)
        Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _safe_div(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = np.zeros_like(a)
    np.divide(a, b, out=out, where=b > 0)
    return out


def confusion_counts(predictions: Sequence[Iterable[int]], truths: Sequence[Iterable[int]],
                     n_labels: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if len(predictions) != len(truths):
        raise ValueError(f"{len(predictions)} predictions but {len(truths)} truths")
    pred = np.zeros((len(predictions), n_labels), dtype=bool)
    gold = np.zeros_like(pred)
    for k, (p, t) in enumerate(zip(predictions, truths)):
        for i in p:
            pred[k, i] = True
        for i in t:
            gold[k, i] = True
    tp = (pred & gold).sum(axis=0)
    fp = (pred & ~gold).sum(axis=0)
    fn = (~pred & gold).sum(axis=0)
    return tp.astype(np.int64), fp.astype(np.int64), fn.astype(np.int64)


def micro_macro_f1(predictions: Sequence[Iterable[int]], truths: Sequence[Iterable[int]],
                   h: LabelHierarchy) -> MetricReport:
    n = len(h)
    for seq in (predictions, truths):
        for s in seq:
            for i in s:
                if not 0 <= i < n:
                    raise ValueError(f"label id {i} outside hierarchy of size {n}")
    tp, fp, fn = confusion_counts(predictions, truths, n)
    mask = np.ones(n, dtype=bool)
    mask[h.root_id] = False
    tp, fp, fn = tp * mask, fp * mask, fn * mask
    stp, sfp, sfn = int(tp.sum()), int(fp.sum()), int(fn.sum())
    micro = 2 * stp / (2 * stp + sfp + sfn) if stp + sfp + sfn else 0.0
    report = MetricReport(tp, fp, fn, mask, micro, 0.0,
                          stp / (stp + sfp) if stp + sfp else 0.0,
                          stp / (stp + sfn) if stp + sfn else 0.0)
    inc = report.included
    report.macro_f1 = float(report.f1[inc].mean()) if inc.any() else 0.0
    return report


@dataclass
class ClusterReport:
    by_depth: dict[int, float | None]
    by_frequency: dict[str, float | None]
    depth_members: dict[int, list[int]]
    frequency_members: dict[str, list[int]]

    def depth_rows(self) -> list[dict]:
        return [{"depth": d, "n_labels": len(self.depth_members[d]), "macro_f1": v}
                for d, v in self.by_depth.items()]

    def frequency_rows(self) -> list[dict]:
        return [{"bucket": b, "n_labels": len(self.frequency_members[b]), "macro_f1": v}
                for b, v in self.by_frequency.items()]


def frequency_buckets(h: LabelHierarchy, train_counts: np.ndarray) -> dict[str, list[int]]:
    """Split non-root labels into five quantile buckets of training frequency.

    Labels are ranked by (count, id) ascending; rank r of n goes to bucket
    floor(5 r / n).
    """
    ids = sorted(h.non_root, key=lambda i: (int(train_counts[i]), i))
    n = len(ids)
    out: dict[str, list[int]] = {b: [] for b in FREQUENCY_BUCKETS}
    for rank, i in enumerate(ids):
        out[FREQUENCY_BUCKETS[(5 * rank) // n]].append(i)
    return out


def _group_macro(report: MetricReport, members: list[int]) -> float | None:
    inc = report.included
    keep = [i for i in members if inc[i]]
    if not keep:
        return None
    return float(report.f1[keep].mean())


def cluster_report(report: MetricReport, h: LabelHierarchy, train_counts) -> ClusterReport:
    train_counts = np.asarray(train_counts)
    depths: dict[int, list[int]] = {}
    for i in h.non_root:
        depths.setdefault(h.depth[i], []).append(i)
    depths = dict(sorted(depths.items()))
    freq = frequency_buckets(h, train_counts)
    return ClusterReport(
        by_depth={d: _group_macro(report, m) for d, m in depths.items()},
        by_frequency={b: _group_macro(report, m) for b, m in freq.items()},
        depth_members=depths,
        frequency_members=freq,
    )
