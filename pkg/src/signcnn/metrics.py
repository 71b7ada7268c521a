"""Evaluation: loss/accuracy, confusion matrix, macro scores, training curves."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .data import Dataset
from .model import SequentialModel, atomic_write, predict_proba
from .train import EpochRecord, TrainingHistory, sparse_ce_loss

NUM_CLASSES = 24
HISTORY_HEADER = "# signcnn-history v1"
HISTORY_FIELDS = ("epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy")


class HistoryFormatError(ValueError):
    pass


def confusion(predictions, labels, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    pred = np.asarray(predictions, dtype=np.int64)
    true = np.asarray(labels, dtype=np.int64)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ValueError(f"{pred.size} predictions but {true.size} labels")
    for name, a in (("prediction", pred), ("label", true)):
        bad = np.flatnonzero((a < 0) | (a >= num_classes))
        if bad.size:
            raise ValueError(
                f"{name} {a[bad[0]]} at index {bad[0]} is outside 0..{num_classes - 1}"
            )
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


@dataclass
class ClassScores:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray


def per_class_scores(cm: np.ndarray) -> ClassScores:
    """Zero denominators give a score of 0 for that class."""
    cm = np.asarray(cm)
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0)
    support = cm.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = np.divide(tp, support, out=np.zeros_like(tp), where=support > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros_like(tp), where=denom > 0)
    return ClassScores(precision, recall, f1, support)


def macro_scores(cm: np.ndarray) -> tuple[float, float, float]:
    """Unweighted mean precision/recall/F1 over classes with nonzero support."""
    s = per_class_scores(cm)
    present = s.support > 0
    if not present.any():
        return 0.0, 0.0, 0.0
    return (
        float(s.precision[present].mean()),
        float(s.recall[present].mean()),
        float(s.f1[present].mean()),
    )


@dataclass
class EvalReport:
    accuracy: float
    loss: float
    confusion: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    macro_precision: float
    macro_recall: float
    macro_f1: float

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    def format(self, with_confusion: bool = False, letters: Optional[Sequence[str]] = None) -> str:
        lines = [
            f"samples            {self.total}",
            f"accuracy           {self.accuracy:.5f}",
            f"loss               {self.loss:.5f}",
            f"precision (macro)  {self.macro_precision:.5f}",
            f"recall (macro)     {self.macro_recall:.5f}",
            f"f1 (macro)         {self.macro_f1:.5f}",
        ]
        if with_confusion:
            k = len(self.confusion)
            names = list(letters) if letters is not None else [str(i) for i in range(k)]
            lines.append("confusion (rows = true, columns = predicted)")
            lines.append("    " + "".join(f"{n:>5}" for n in names))
            for name, row in zip(names, self.confusion):
                lines.append(f"{name:>4}" + "".join(f"{v:>5d}" for v in row))
        return "\n".join(lines)


def report_from_probabilities(probs: np.ndarray, labels) -> EvalReport:
    labels = np.asarray(labels)
    loss, _ = sparse_ce_loss(probs, labels)
    # argmax returns the lowest index on ties
    cm = confusion(probs.argmax(axis=1), labels, probs.shape[1])
    s = per_class_scores(cm)
    mp, mr, mf = macro_scores(cm)
    return EvalReport(
        accuracy=float(np.trace(cm) / cm.sum()),
        loss=loss,
        confusion=cm,
        precision=s.precision,
        recall=s.recall,
        f1=s.f1,
        support=s.support,
        macro_precision=mp,
        macro_recall=mr,
        macro_f1=mf,
    )


def evaluate(model: SequentialModel, ds: Dataset, batch_size: int = 256) -> EvalReport:
    if len(ds) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    model.eval()
    return report_from_probabilities(predict_proba(model, ds.images, batch_size), ds.labels)


# ----------------------------------------------------------------------
# history file


def history_to_text(history: TrainingHistory) -> str:
    if not history.records:
        raise ValueError("history is empty")
    best = "" if history.best_epoch is None else history.best_epoch
    lines = [
        HISTORY_HEADER,
        f"# best_epoch={best} stopped_early={int(history.stopped_early)}",
        "\t".join(HISTORY_FIELDS),
    ]
    for r in history.records:
        lines.append(
            "\t".join(
                [str(r.epoch)] + [repr(float(getattr(r, f))) for f in HISTORY_FIELDS[1:]]
            )
        )
    return "\n".join(lines) + "\n"


def export_history(history: TrainingHistory, path) -> Path:
    """Write the tab-separated history file (one line per epoch)."""
    text = history_to_text(history)
    try:
        atomic_write(path, text.encode("utf-8"))
    except OSError as err:
        raise OSError(f"cannot write history to {path}: {err}") from err
    return Path(path)


def parse_history(text: str) -> TrainingHistory:
    lines = text.splitlines()
    if not lines or lines[0].strip() != HISTORY_HEADER:
        raise HistoryFormatError(f"missing '{HISTORY_HEADER}' header line")
    history = TrainingHistory()
    body = lines[1:]
    if body and body[0].startswith("# "):
        meta = dict(kv.split("=", 1) for kv in body[0][2:].split())
        history.best_epoch = int(meta["best_epoch"]) if meta.get("best_epoch") else None
        history.stopped_early = meta.get("stopped_early") == "1"
        body = body[1:]
    if not body or tuple(body[0].split("\t")) != HISTORY_FIELDS:
        raise HistoryFormatError("missing column header line")
    for n, line in enumerate(body[1:], start=1):
        if not line.strip():
            continue
        cells = line.split("\t")
        try:
            if len(cells) != len(HISTORY_FIELDS):
                raise ValueError
            history.records.append(
                EpochRecord(int(cells[0]), *(float(c) for c in cells[1:]))
            )
        except ValueError:
            raise HistoryFormatError(f"malformed history record {n}: {line!r}") from None
    if not history.records:
        raise HistoryFormatError("history file has no records")
    return history


def load_history(path) -> TrainingHistory:
    return parse_history(Path(path).read_text())


# ----------------------------------------------------------------------
# SVG curves

PANEL_W, PANEL_H = 420, 300
MARGIN = dict(left=55, right=15, top=35, bottom=45)
TRAIN_COLOR, VAL_COLOR = "#1f77b4", "#ff7f0e"


def _nice_range(values: Sequence[float], floor_zero: bool) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    if floor_zero:
        lo = min(lo, 0.0)
    if math.isclose(lo, hi):
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - (0 if floor_zero and lo == 0 else pad), hi + pad


def panel_transform(epochs, lo, hi, x0):
    """Map (epoch, value) to SVG coordinates inside one panel."""
    left = x0 + MARGIN["left"]
    width = PANEL_W - MARGIN["left"] - MARGIN["right"]
    top = MARGIN["top"]
    height = PANEL_H - MARGIN["top"] - MARGIN["bottom"]
    e0, e1 = min(epochs), max(epochs)
    span = (e1 - e0) or 1

    def to_xy(e, v):
        x = left + width * ((e - e0) / span if e1 > e0 else 0.5)
        y = top + height * (1 - (v - lo) / (hi - lo))
        return x, y

    return to_xy


def _panel(history: TrainingHistory, x0: int, title: str, fields, floor_zero: bool) -> list[str]:
    epochs = history.column("epoch")
    series = [(name, history.column(name)) for name in fields]
    lo, hi = _nice_range([v for _, vals in series for v in vals], floor_zero)
    to_xy = panel_transform(epochs, lo, hi, x0)
    left = x0 + MARGIN["left"]
    right = x0 + PANEL_W - MARGIN["right"]
    top, bottom = MARGIN["top"], PANEL_H - MARGIN["bottom"]
    out = [
        f'<g class="panel" data-metric="{escape(title)}" data-lo="{lo!r}" data-hi="{hi!r}" '
        f'data-x0="{x0}">',
        f'<text x="{(left + right) / 2:.1f}" y="20" text-anchor="middle" '
        f'font-size="14">{escape(title)}</text>',
        f'<rect x="{left}" y="{top}" width="{right - left}" height="{bottom - top}" '
        'fill="none" stroke="#444"/>',
    ]
    for k in range(5):
        v = lo + (hi - lo) * k / 4
        _, y = to_xy(epochs[0], v)
        out.append(
            f'<text x="{left - 5}" y="{y + 4:.1f}" text-anchor="end" font-size="10">{v:.2f}</text>'
        )
    for e in sorted({epochs[0], epochs[-1], epochs[len(epochs) // 2]}):
        x, _ = to_xy(e, lo)
        out.append(
            f'<text x="{x:.1f}" y="{bottom + 15}" text-anchor="middle" font-size="10">{e}</text>'
        )
    out.append(
        f'<text x="{(left + right) / 2:.1f}" y="{PANEL_H - 8}" text-anchor="middle" '
        'font-size="11">epoch</text>'
    )
    for (name, vals), color in zip(series, (TRAIN_COLOR, VAL_COLOR)):
        pts = [to_xy(e, v) for e, v in zip(epochs, vals)]
        coords = " ".join(f"{x:.3f},{y:.3f}" for x, y in pts)
        data = " ".join(repr(float(v)) for v in vals)
        out.append(
            f'<polyline class="series" data-series="{name}" data-values="{data}" '
            f'points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        for x, y in pts if len(pts) == 1 else pts[-1:]:
            out.append(f'<circle cx="{x:.3f}" cy="{y:.3f}" r="3" fill="{color}"/>')
    ly = top + 12
    for (name, vals), color in zip(series, (TRAIN_COLOR, VAL_COLOR)):
        label = "train" if name.startswith("train") else "validation"
        out.append(
            f'<text x="{right - 5}" y="{ly}" text-anchor="end" font-size="10" fill="{color}">'
            f"{label} (final {vals[-1]:.4f})</text>"
        )
        ly += 13
    out.append("</g>")
    return out


def render_svg(history: TrainingHistory) -> str:
    """Two panels, accuracy then loss, each with train and validation curves."""
    if not history.records:
        raise ValueError("history is empty")
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{2 * PANEL_W}" height="{PANEL_H}" '
        f'viewBox="0 0 {2 * PANEL_W} {PANEL_H}">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    parts += _panel(history, 0, "accuracy", ("train_accuracy", "val_accuracy"), False)
    parts += _panel(history, PANEL_W, "loss", ("train_loss", "val_loss"), True)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(history: TrainingHistory, path) -> Path:
    atomic_write(path, render_svg(history).encode("utf-8"))
    return Path(path)
