"""Confusion-count metrics and CSV result tables.

Undefined ratios (zero denominator) are reported as 1: with no positives in
either labelling, Dice and sensitivity count as vacuous agreement.
"""

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np

CSV_HEADER = ("param", "accuracy", "sensitivity", "specificity", "dice", "seed")


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    sensitivity: float
    specificity: float
    dice: float
    tp: int
    fp: int
    tn: int
    fn: int

    def as_dict(self):
        return asdict(self)


def _ratio(num, den):
    return 1.0 if den == 0 else num / den


def compute_metrics(pred, gt):
    pred = np.asarray(pred).ravel().astype(bool)
    gt = np.asarray(gt).ravel().astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions vs {gt.size} labels")
    tp = int(np.sum(pred & gt))
    fp = int(np.sum(pred & ~gt))
    tn = int(np.sum(~pred & ~gt))
    fn = int(np.sum(~pred & gt))
    return Metrics(
        accuracy=_ratio(tp + tn, tp + tn + fp + fn),
        sensitivity=_ratio(tp, tp + fn),
        specificity=_ratio(tn, tn + fp),
        dice=_ratio(2 * tp, 2 * tp + fp + fn),
        tp=tp, fp=fp, tn=tn, fn=fn,
    )


def format_param(p):
    if isinstance(p, (tuple, list)):
        return "x".join(str(int(s)) for s in p)
    if isinstance(p, float):
        return repr(p)
    return str(p)


def metrics_csv(rows):
    """Render ``(param, Metrics, seed)`` rows with a fixed header and float format."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for param, m, seed in rows:
        w.writerow([format_param(param), f"{m.accuracy:.6f}", f"{m.sensitivity:.6f}",
                    f"{m.specificity:.6f}", f"{m.dice:.6f}", int(seed)])
    return buf.getvalue()


def write_metrics_csv(rows, path):
    with open(path, "w", newline="") as fh:
        fh.write(metrics_csv(rows))


def read_metrics_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [dict(r) for r in reader]


def mean_dice_by_param(rows):
    """``{param: mean dice}`` over seeds, preserving first-seen param order."""
    acc = {}
    for param, m, _ in rows:
        acc.setdefault(format_param(param), []).append(m.dice)
    return {k: float(np.mean(v)) for k, v in acc.items()}
