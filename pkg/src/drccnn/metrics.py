"""Confusion matrices and detection metrics (recall, precision, FNR, FPR).

The multi-class matrix collapses onto binary quantities by treating any
non-NDRC label as "violation present": a violating clip predicted as any
violating class counts as a true positive even when the class is wrong.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class LengthMismatch(ValueError):
    pass


class UnknownLabel(ValueError):
    pass


class MissingCleanClass(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    """counts[i, j] = samples of true class i predicted as class j."""

    counts: np.ndarray
    classes: tuple[str, ...]

    def __post_init__(self):
        d = len(self.classes)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (d, d):
            raise ValueError(f"counts shape {self.counts.shape} != ({d}, {d})")
        if (self.counts < 0).any():
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def confusion(pred: Sequence[str], truth: Sequence[str], classes: Sequence[str]) -> ConfusionMatrix:
    if len(pred) != len(truth):
        raise LengthMismatch(f"{len(pred)} predictions vs {len(truth)} truths")
    index = {c: k for k, c in enumerate(classes)}
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for p, t in zip(pred, truth):
        if t not in index:
            raise UnknownLabel(f"truth label {t!r} not in class list")
        if p not in index:
            raise UnknownLabel(f"predicted label {p!r} not in class list")
        counts[index[t], index[p]] += 1
    return ConfusionMatrix(counts, tuple(classes))


def binary_collapse(cm: ConfusionMatrix) -> tuple[int, int, int, int]:
    """(T_P, F_N, T_N, F_P) with positive = any label other than NDRC."""
    if "NDRC" not in cm.classes:
        raise MissingCleanClass("class list has no NDRC entry")
    c = cm.classes.index("NDRC")
    m = cm.counts
    tn = int(m[c, c])
    fp = int(m[c, :].sum() - tn)
    fn = int(m[:, c].sum() - tn)
    tp = int(m.sum() - tn - fp - fn)
    return tp, fn, tn, fp


def _rate(num: int, den: int) -> float:
    return num / den if den else 0.0


def recall(t_p: int, f_n: int) -> float:
    return _rate(t_p, t_p + f_n)


def precision(t_p: int, f_p: int) -> float:
    return _rate(t_p, t_p + f_p)


def fnr(f_n: int, t_p: int) -> float:
    return _rate(f_n, f_n + t_p)


def fpr(f_p: int, t_n: int) -> float:
    return _rate(f_p, f_p + t_n)


@dataclass
class BinaryMetrics:
    t_p: int
    f_n: int
    t_n: int
    f_p: int
    recall: float
    precision: float
    fnr: float
    fpr: float
    recall_defined: bool
    precision_defined: bool
    fnr_defined: bool
    fpr_defined: bool

    @classmethod
    def from_counts(cls, t_p: int, f_n: int, t_n: int, f_p: int) -> "BinaryMetrics":
        return cls(
            t_p, f_n, t_n, f_p,
            recall=recall(t_p, f_n),
            precision=precision(t_p, f_p),
            fnr=fnr(f_n, t_p),
            fpr=fpr(f_p, t_n),
            recall_defined=(t_p + f_n) > 0,
            precision_defined=(t_p + f_p) > 0,
            fnr_defined=(f_n + t_p) > 0,
            fpr_defined=(f_p + t_n) > 0,
        )


def per_class_metrics(cm: ConfusionMatrix) -> dict[str, dict[str, float]]:
    """One-vs-rest recall/precision per class (readability rollup)."""
    out = {}
    m = cm.counts
    for k, name in enumerate(cm.classes):
        tp = int(m[k, k])
        fn = int(m[k, :].sum() - tp)
        fp = int(m[:, k].sum() - tp)
        out[name] = {"recall": recall(tp, fn), "precision": precision(tp, fp)}
    return out


def evaluation_report(cm: ConfusionMatrix, config: dict | None = None) -> dict:
    """Machine-readable evaluation document: matrix, binary metrics, rollups."""
    bm = BinaryMetrics.from_counts(*binary_collapse(cm))
    return {
        "config": config or {},
        "classes": list(cm.classes),
        "confusion": cm.counts.tolist(),
        "samples": cm.total,
        "binary": {
            "t_p": bm.t_p,
            "f_n": bm.f_n,
            "t_n": bm.t_n,
            "f_p": bm.f_p,
            "recall": bm.recall,
            "precision": bm.precision,
            "fnr": bm.fnr,
            "fpr": bm.fpr,
            "undefined": [
                name
                for name, ok in [
                    ("recall", bm.recall_defined),
                    ("precision", bm.precision_defined),
                    ("fnr", bm.fnr_defined),
                    ("fpr", bm.fpr_defined),
                ]
                if not ok
            ],
        },
        "per_class": per_class_metrics(cm),
    }


def format_report(report: dict) -> str:
    classes = report["classes"]
    width = max(7, max(len(c) for c in classes) + 1)
    lines = ["confusion matrix (rows = truth, cols = predicted)"]
    lines.append(" " * width + "".join(f"{c:>{width}}" for c in classes))
    for name, row in zip(classes, report["confusion"]):
        lines.append(f"{name:>{width}}" + "".join(f"{v:>{width}}" for v in row))
    b = report["binary"]
    lines.append("")
    lines.append(f"samples: {report['samples']}")
    lines.append(f"binary counts: TP={b['t_p']} FN={b['f_n']} TN={b['t_n']} FP={b['f_p']}")
    flags = {name: " (undefined)" if name in b["undefined"] else "" for name in
             ("recall", "precision", "fnr", "fpr")}
    lines.append(f"recall:    {b['recall']:.4f}{flags['recall']}")
    lines.append(f"precision: {b['precision']:.4f}{flags['precision']}")
    lines.append(f"FNR:       {b['fnr']:.4f}{flags['fnr']}")
    lines.append(f"FPR:       {b['fpr']:.4f}{flags['fpr']}")
    lines.append("")
    lines.append("per-class (one-vs-rest):")
    for name in classes:
        pc = report["per_class"][name]
        lines.append(f"  {name:>{width}}  recall={pc['recall']:.4f}  precision={pc['precision']:.4f}")
    return "\n".join(lines) + "\n"


def write_report(report: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")


def read_report(path) -> dict:
    with open(path) as f:
        return json.load(f)
