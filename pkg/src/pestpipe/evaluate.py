"""Classifier evaluation: confusion matrix, per-class precision/recall/F1,
micro accuracy, and macro F1.

Zero-denominator convention: precision, recall, and F1 are 0 when their
denominators are 0, and zero-support classes are flagged and left out of the
macro average (they would otherwise poison it in the scarce-class regime).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean; 0 when both sides are 0."""
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int
    tp: int
    fp: int
    fn: int


@dataclass
class EvalReport:
    class_order: list[str]
    confusion: np.ndarray  # (true, predicted) counts
    per_class: dict[str, ClassMetrics]
    micro_accuracy: float
    macro_f1: float
    n_test: int
    evaluated_classes: list[str]
    zero_support_classes: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "class_order": self.class_order,
            "confusion": self.confusion.tolist(),
            "per_class": {
                name: {"precision": m.precision, "recall": m.recall,
                       "f1": m.f1, "support": m.support,
                       "tp": m.tp, "fp": m.fp, "fn": m.fn}
                for name, m in self.per_class.items()},
            "micro_accuracy": self.micro_accuracy,
            "macro_f1": self.macro_f1,
            "n_test": self.n_test,
            "evaluated_classes": self.evaluated_classes,
            "zero_support_classes": self.zero_support_classes,
        }

    def save(self, path: Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "EvalReport":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            class_order=d["class_order"],
            confusion=np.asarray(d["confusion"], dtype=np.int64),
            per_class={
                name: ClassMetrics(**m) for name, m in d["per_class"].items()},
            micro_accuracy=d["micro_accuracy"], macro_f1=d["macro_f1"],
            n_test=d["n_test"], evaluated_classes=d["evaluated_classes"],
            zero_support_classes=d["zero_support_classes"])


def compute_report(truth: Mapping[str, str], predictions: Mapping[str, str],
                   evaluated_classes: Optional[Sequence[str]] = None) -> EvalReport:
    """Score predictions against truth over a shared record set.

    evaluated_classes restricts per-class metrics and the macro average
    (train-only classes stay out); the confusion matrix still accounts for
    every record and prediction, so its total equals n_test.
    """
    if set(truth) != set(predictions):
        raise ValueError("truth and predictions must cover the same records")

    present = sorted(set(truth.values()) | set(predictions.values()))
    if evaluated_classes is None:
        evaluated = present
    else:
        evaluated = list(evaluated_classes)
    class_order = evaluated + [c for c in present if c not in set(evaluated)]
    index = {c: i for i, c in enumerate(class_order)}

    k = len(class_order)
    confusion = np.zeros((k, k), dtype=np.int64)
    for rid in truth:
        confusion[index[truth[rid]], index[predictions[rid]]] += 1

    per_class: dict[str, ClassMetrics] = {}
    zero_support: list[str] = []
    f1s = []
    for cls in evaluated:
        i = index[cls]
        tp = int(confusion[i, i])
        fp = int(confusion[:, i].sum() - tp)
        fn = int(confusion[i, :].sum() - tp)
        support = tp + fn
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        per_class[cls] = ClassMetrics(precision=precision, recall=recall,
                                      f1=f1_score(precision, recall),
                                      support=support, tp=tp, fp=fp, fn=fn)
        if support == 0:
            zero_support.append(cls)
        else:
            f1s.append(per_class[cls].f1)

    n_test = len(truth)
    return EvalReport(
        class_order=class_order, confusion=confusion, per_class=per_class,
        micro_accuracy=float(np.trace(confusion) / n_test) if n_test else 0.0,
        macro_f1=float(np.mean(f1s)) if f1s else 0.0,
        n_test=n_test, evaluated_classes=list(evaluated),
        zero_support_classes=zero_support)


def normalize_confusion(confusion: np.ndarray, mode: str = "recall",
                        ) -> tuple[np.ndarray, list[int]]:
    """Row-normalize counts (each row sums to 1); zero-support rows come back
    as zeros and their indices are returned as flags."""
    if mode != "recall":
        raise ValueError(f"unsupported normalization mode: {mode}")
    m = np.asarray(confusion, dtype=np.float64)
    sums = m.sum(axis=1, keepdims=True)
    flagged = [i for i in range(m.shape[0]) if sums[i, 0] == 0]
    out = np.divide(m, sums, out=np.zeros_like(m), where=sums > 0)
    return out, flagged


def render_confusion_png(confusion: np.ndarray, class_order: list[str],
                         path: Path, cell: int = 24) -> None:
    """Minimal recall-normalized heatmap image (no plotting dependency)."""
    from PIL import Image

    norm, _ = normalize_confusion(confusion)
    k = norm.shape[0]
    img = np.zeros((k * cell, k * cell, 3), dtype=np.uint8)
    for i in range(k):
        for j in range(k):
            v = norm[i, j]
            color = (int(255 * (1 - v)), int(255 * (1 - 0.6 * v)), 255) \
                if i != j else (int(255 * (1 - v)), 255, int(255 * (1 - v)))
            img[i * cell:(i + 1) * cell, j * cell:(j + 1) * cell] = color
    Image.fromarray(img).save(path)
