"""Log loss, entropy of the empirical CTR, information gain and RIG.

All logarithms are natural. ``log_loss`` is reported positive (the negated
empirical cross entropy), so ``ig = entropy - log_loss`` and
``rig = ig / entropy``. A constant predictor at the empirical CTR has RIG 0.
"""

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

EPS_CLIP = 1e-7


def bce_loss(p, y):
    """Per-sample negative log-likelihood with ``p`` clipped to ``[1e-7, 1 - 1e-7]``."""
    y_arr = np.asarray(y)
    if not np.all((y_arr == 0) | (y_arr == 1)):
        raise ValueError("labels must be 0 or 1")
    p = np.clip(np.asarray(p, dtype=np.float64), EPS_CLIP, 1.0 - EPS_CLIP)
    y_arr = y_arr.astype(np.float64)
    out = -(y_arr * np.log(p) + (1.0 - y_arr) * np.log1p(-p))
    return float(out) if out.ndim == 0 else out


def entropy(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"entropy needs p in (0, 1), got {p}")
    return -(p * math.log(p) + (1.0 - p) * math.log1p(-p))


def rig_from(p: float, log_loss: float) -> float:
    """RIG for a dataset with empirical CTR ``p`` and a model log loss."""
    h = entropy(p)
    return (h - log_loss) / h


@dataclass
class MetricsReport:
    n: int
    empirical_ctr: float
    log_loss: float
    entropy: Optional[float] = None
    ig: Optional[float] = None
    rig: Optional[float] = None
    error: Optional[str] = None  # set when RIG is undefined

    def to_dict(self):
        return asdict(self)

    def to_json(self, **extra):
        return json.dumps({**extra, **self.to_dict()}, sort_keys=True)

    def row(self, name="model"):
        rig = "undefined" if self.rig is None else percent(self.rig)
        return f"{name:<24} RIG {rig:>7} %   log loss {percent(self.log_loss):>7} %   (n={self.n}, ln)"


def evaluate(predictions, labels) -> MetricsReport:
    preds = np.asarray(predictions, dtype=np.float64)
    y = np.asarray(labels)
    if preds.shape != y.shape or preds.ndim != 1:
        raise ValueError("predictions and labels must be 1-D and of equal length")
    if preds.shape[0] == 0:
        raise ValueError("cannot evaluate zero samples")
    n = int(preds.shape[0])
    loss = float(np.mean(bce_loss(preds, y)))
    p = float(np.mean(y.astype(np.float64)))
    if not 0.0 < p < 1.0:
        return MetricsReport(n, p, loss, error="RIG undefined: labels contain a single class")
    h = entropy(p)
    ig = h - loss
    return MetricsReport(n, p, loss, h, ig, ig / h)


def percent(x: float) -> str:
    return f"{100.0 * x:.2f}"


def format_table(reports: dict) -> str:
    lines = [f"{'Model':<24} {'RIG [%]':>8} {'Log loss [%]':>13}"]
    for name, r in reports.items():
        rig = "n/a" if r.rig is None else percent(r.rig)
        lines.append(f"{name:<24} {rig:>8} {percent(r.log_loss):>13}")
    return "\n".join(lines)


def contributions_csv(baseline: MetricsReport, augmented: dict) -> str:
    """CSV of RIG increase (percentage points) per module over a baseline."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["module", "rig_percent", "performance_increase_pp"])
    for name, r in augmented.items():
        w.writerow([name, percent(r.rig), f"{100.0 * (r.rig - baseline.rig):.2f}"])
    return buf.getvalue()
