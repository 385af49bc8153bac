"""Saliency metrics: confusion counts, precision/recall/F, MSE, PR sweeps.

Degenerate denominators follow one convention everywhere: no predicted
positives gives P = 1, no actual positives gives R = 1, and F = 0 when its
denominator vanishes. That keeps every value in [0, 1].
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from qfuse.tensor import ContractError, DimensionError

DEFAULT_BETA = 0.3
N_THRESHOLDS = 256


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other):
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)


def _pair(pred, gt):
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    return pred, gt


def confusion(pred, gt, threshold):
    """Counts with ``pred >= threshold`` as the positive class."""
    pred, gt = _pair(pred, gt)
    pos = pred >= threshold
    truth = gt >= 0.5
    tp = int(np.count_nonzero(pos & truth))
    fp = int(np.count_nonzero(pos & ~truth))
    fn = int(np.count_nonzero(~pos & truth))
    return ConfusionCounts(tp, fp, pred.size - tp - fp - fn, fn)


def f_measure(p, r, beta=DEFAULT_BETA, beta_squared=False):
    """``(1 + b) P R / (b P + R)`` with ``b = beta`` (or ``beta**2`` if requested)."""
    b = beta * beta if beta_squared else beta
    denom = b * p + r
    if denom == 0 or p * r == 0:
        return 0.0
    return (1 + b) * p * r / denom


def prf(c: ConfusionCounts, beta=DEFAULT_BETA, beta_squared=False):
    if beta <= 0:
        raise ValueError("beta must be positive")
    p = c.tp / (c.tp + c.fp) if c.tp + c.fp else 1.0
    r = c.tp / (c.tp + c.fn) if c.tp + c.fn else 1.0
    return p, r, f_measure(p, r, beta, beta_squared)


def mse_metric(pred, gt):
    pred, gt = _pair(pred, gt)
    return float(np.mean((gt - pred) ** 2))


def thresholds(n=N_THRESHOLDS):
    return np.arange(n) / (n - 1)


def _counts_by_threshold(pred, gt, ts):
    """Vectorised confusion over all thresholds for one map (bins by sorted scores)."""
    pred, gt = _pair(pred, gt)
    scores = pred.ravel()
    truth = gt.ravel() >= 0.5
    pos_scores = np.sort(scores[truth])
    neg_scores = np.sort(scores[~truth])
    # number of scores >= t
    tp = pos_scores.size - np.searchsorted(pos_scores, ts, side="left")
    fp = neg_scores.size - np.searchsorted(neg_scores, ts, side="left")
    fn = pos_scores.size - tp
    tn = neg_scores.size - fp
    return np.stack([tp, fp, tn, fn], axis=1)


def pr_curve(preds, gts, ts=None, beta=DEFAULT_BETA, beta_squared=False):
    """Pooled (threshold, P, R, F) rows in ascending threshold order."""
    preds, gts = list(preds), list(gts)
    if not preds or len(preds) != len(gts):
        raise ContractError(f"pr_curve needs equal, non-empty lists (got {len(preds)} and {len(gts)})")
    ts = thresholds() if ts is None else np.asarray(ts, dtype=np.float64)
    totals = sum(_counts_by_threshold(p, g, ts) for p, g in zip(preds, gts))
    rows = []
    for t, (tp, fp, tn, fn) in zip(ts, totals):
        p, r, f = prf(ConfusionCounts(int(tp), int(fp), int(tn), int(fn)), beta, beta_squared)
        rows.append((float(t), p, r, f))
    return rows


@dataclass
class Report:
    mean_mse: float
    max_f: float
    p_at_max_f: float
    r_at_max_f: float
    threshold_at_max_f: float
    curve: list

    def summary(self):
        return {
            "mean_mse": self.mean_mse,
            "max_f": self.max_f,
            "p_at_max_f": self.p_at_max_f,
            "r_at_max_f": self.r_at_max_f,
            "threshold_at_max_f": self.threshold_at_max_f,
        }


def evaluate_run(preds, gts, beta=DEFAULT_BETA, beta_squared=False):
    preds, gts = list(preds), list(gts)
    if len(preds) != len(gts) or any(p is None for p in preds):
        raise ContractError("every ground-truth map needs a prediction")
    curve = pr_curve(preds, gts, beta=beta, beta_squared=beta_squared)
    best = max(range(len(curve)), key=lambda i: (curve[i][3], -i))
    t, p, r, f = curve[best]
    return Report(float(np.mean([mse_metric(p_, g) for p_, g in zip(preds, gts)])), f, p, r, t, curve)


def write_report(report: Report, csv_path, json_path=None, beta=DEFAULT_BETA, beta_squared=False):
    with open(csv_path, "w", newline="") as fh:
        fh.write(
            f"# beta={beta!r} beta_squared={str(beta_squared).lower()}; "
            "empty predictions give P=1, empty ground truth gives R=1, F=0 on zero denominators\n"
        )
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall", "fmeasure"])
        for t, p, r, f in report.curve:
            w.writerow([f"{t:.6f}", repr(p), repr(r), repr(f)])
        s = report.summary()
        w.writerow(["summary", *(f"{k}={v!r}" for k, v in s.items())])
    if json_path is not None:
        Path(json_path).write_text(json.dumps(report.summary(), indent=1) + "\n")
