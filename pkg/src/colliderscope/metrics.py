"""Classification metrics: confusion matrices, row normalization, a
balanced signal-vs-background efficiency, and CSV/heat-map emission.

The efficiency collapses the matrix to signal vs pooled background and
averages the two collapsed recalls, which is binary accuracy under an
equal class prior.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    """Count table with rows = true class, columns = predicted class."""

    n_classes: int
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (self.n_classes, self.n_classes):
            raise MetricsError(
                f"counts shape {counts.shape} does not match "
                f"n_classes {self.n_classes}")
        if np.any(counts < 0):
            raise MetricsError("confusion counts must be non-negative")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if self.n_classes != other.n_classes:
            raise MetricsError("cannot sum matrices of different sizes")
        return ConfusionMatrix(self.n_classes, self.counts + other.counts)


def confusion(predictions: Sequence[int], labels: Sequence[int],
              n_classes: int) -> ConfusionMatrix:
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise MetricsError("predictions and labels must be equal-length 1-d")
    for name, values in (("prediction", predictions), ("label", labels)):
        if len(values) and (values.min() < 0 or values.max() >= n_classes):
            raise MetricsError(f"{name} out of range [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (labels, predictions), 1)
    return ConfusionMatrix(n_classes, counts)


def normalize_rows(matrix: ConfusionMatrix) -> np.ndarray:
    """Row-stochastic fractions; all-zero rows stay zero instead of NaN."""
    counts = matrix.counts.astype(np.float64)
    sums = counts.sum(axis=1, keepdims=True)
    safe = np.where(sums == 0.0, 1.0, sums)
    return counts / safe


def signal_background_efficiency(matrix: ConfusionMatrix,
                                 signal_class: int) -> float:
    """Mean of signal recall and pooled-background recall after collapsing
    predictions to signal-vs-rest."""
    if matrix.n_classes < 2:
        raise MetricsError("need at least 2 classes")
    if not 0 <= signal_class < matrix.n_classes:
        raise MetricsError(f"signal class {signal_class} out of range")
    counts = matrix.counts
    signal_total = int(counts[signal_class].sum())
    background = np.delete(counts, signal_class, axis=0)
    background_total = int(background.sum())
    if signal_total == 0:
        raise MetricsError("signal row is empty")
    if background_total == 0:
        raise MetricsError("background rows are empty")
    tpr = counts[signal_class, signal_class] / signal_total
    true_negative = background_total - int(background[:, signal_class].sum())
    tnr = true_negative / background_total
    return (tpr + tnr) / 2.0


def accuracy(matrix: ConfusionMatrix) -> float:
    if matrix.total == 0:
        raise MetricsError("empty matrix has no accuracy")
    return float(np.trace(matrix.counts) / matrix.total)


def _names(matrix_size: int, class_names: Optional[Sequence[str]]
           ) -> list[str]:
    if class_names is None:
        return [f"class{i}" for i in range(matrix_size)]
    if len(class_names) != matrix_size:
        raise MetricsError("class_names length does not match matrix")
    return list(class_names)


def matrix_to_csv(values: np.ndarray,
                  class_names: Optional[Sequence[str]] = None) -> str:
    """CSV with predicted-class columns and true-class rows; the corner
    cell labels the axes."""
    values = np.asarray(values)
    names = _names(values.shape[0], class_names)
    lines = ["true\\pred," + ",".join(names)]
    for name, row in zip(names, values):
        if np.issubdtype(values.dtype, np.integer):
            cells = [str(int(v)) for v in row]
        else:
            cells = [f"{float(v):.6f}" for v in row]
        lines.append(name + "," + ",".join(cells))
    return "\n".join(lines) + "\n"


def save_heatmap(values: np.ndarray, path: Path,
                 class_names: Optional[Sequence[str]] = None,
                 title: Optional[str] = None) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    values = np.asarray(values)
    names = _names(values.shape[0], class_names)
    fig, ax = plt.subplots(figsize=(5.5, 5.0))
    image = ax.imshow(values, cmap="Blues")
    ax.set_xticks(range(len(names)), labels=names, rotation=45,
                  ha="right")
    ax.set_yticks(range(len(names)), labels=names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    if title:
        ax.set_title(title)
    is_int = np.issubdtype(values.dtype, np.integer)
    threshold = values.max() / 2.0 if values.size else 0.0
    for r in range(values.shape[0]):
        for c in range(values.shape[1]):
            v = values[r, c]
            text = str(int(v)) if is_int else f"{float(v):.2f}"
            color = "white" if v > threshold else "black"
            ax.text(c, r, text, ha="center", va="center", color=color)
    fig.colorbar(image, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


# --- predictions interchange ----------------------------------------------

def predictions_to_csv(event_ids: Sequence[str], predictions: Sequence[int],
                       probabilities: np.ndarray) -> str:
    """One row per event: id, argmax class, then per-class probabilities."""
    probabilities = np.asarray(probabilities, dtype=np.float64)
    if len(event_ids) != len(predictions) \
            or probabilities.shape[0] != len(event_ids):
        raise MetricsError("prediction columns have mismatched lengths")
    n_classes = probabilities.shape[1]
    header = "event_id,pred," + ",".join(f"prob_{i}"
                                         for i in range(n_classes))
    lines = [header]
    for eid, pred, probs in zip(event_ids, predictions, probabilities):
        if "," in eid or "\n" in eid:
            raise MetricsError(f"event id {eid!r} not CSV-safe")
        cells = ",".join(f"{p:.10g}" for p in probs)
        lines.append(f"{eid},{int(pred)},{cells}")
    return "\n".join(lines) + "\n"


def parse_predictions_csv(text: str
                          ) -> tuple[list[str], np.ndarray, np.ndarray]:
    lines = [ln for ln in text.split("\n") if ln]
    if not lines or not lines[0].startswith("event_id,pred,prob_0"):
        raise MetricsError("not a predictions CSV")
    n_classes = len(lines[0].split(",")) - 2
    ids: list[str] = []
    preds: list[int] = []
    probs: list[list[float]] = []
    for number, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != n_classes + 2:
            raise MetricsError(f"line {number}: expected "
                               f"{n_classes + 2} columns, got {len(cells)}")
        ids.append(cells[0])
        preds.append(int(cells[1]))
        probs.append([float(c) for c in cells[2:]])
    return ids, np.asarray(preds, dtype=np.int64), np.asarray(probs)
