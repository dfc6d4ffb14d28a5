"""ROC analysis of descriptors on labelled pair sets."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .bitgen import BitPool
from .dataset import PairSet
from .selection import Descriptor, auc, compute_signatures, distance_histograms, hamming_rows


@dataclass(frozen=True)
class RocCurve:
    """One point per integer distance threshold ``t = 0..b``."""

    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def points(self):
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()))

    def trapezoid_area(self) -> float:
        x = np.concatenate([[0.0], self.fpr])
        y = np.concatenate([[0.0], self.tpr])
        return float(np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1]) / 2))


@dataclass(frozen=True)
class EvalReport:
    auc: float
    fpr95: float
    curve: RocCurve
    match_hist: np.ndarray
    nonmatch_hist: np.ndarray


def roc(match_hist, nonmatch_hist) -> RocCurve:
    """A pair is declared matching when its distance is at most ``t``."""
    m = np.asarray(match_hist, dtype=np.int64)
    n = np.asarray(nonmatch_hist, dtype=np.int64)
    value = auc(m, n)  # validates shapes and class mass
    tpr = np.cumsum(m) / m.sum()
    fpr = np.cumsum(n) / n.sum()
    return RocCurve(np.arange(len(m)), fpr, tpr, value)


def fpr_at_tpr(curve: RocCurve, target_tpr: float = 0.95) -> float:
    """FPR at the smallest threshold whose TPR reaches ``target_tpr`` (no interpolation)."""
    if not 0.0 < target_tpr <= 1.0:
        raise ValueError("target TPR must lie in (0, 1]")
    # integer counts make tpr exact at 1.0 on the last threshold
    t = int(np.argmax(curve.tpr >= target_tpr))
    return float(curve.fpr[t])


def descriptor_distances(descriptor: Descriptor, pool: BitPool, pairset: PairSet) -> np.ndarray:
    """Hamming distance of every pair, computing signatures only for referenced patches."""
    used = np.unique(pairset.pairs)
    sigs = compute_signatures(descriptor, pool, pairset.patches[used])
    local = np.searchsorted(used, pairset.pairs)
    return hamming_rows(sigs[local[:, 0]], sigs[local[:, 1]])


def evaluate_descriptor(descriptor: Descriptor, pool: BitPool, pairset: PairSet,
                        target_tpr: float = 0.95) -> EvalReport:
    pairset.require_both_classes()
    dist = descriptor_distances(descriptor, pool, pairset)
    mh, nh = distance_histograms(dist, pairset.labels, descriptor.b)
    curve = roc(mh, nh)
    return EvalReport(curve.auc, fpr_at_tpr(curve, target_tpr), curve, mh, nh)


# -- report files ------------------------------------------------------------

REPORT_HEADER = "method,train,test,run,auc,fpr95"


@dataclass(frozen=True)
class ReportRow:
    method: str
    train: str
    test: str
    run: int
    auc: float
    fpr95: float

    def csv(self) -> str:
        return f"{self.method},{self.train},{self.test},{self.run},{self.auc!r},{self.fpr95!r}"


def write_report(rows: Iterable[ReportRow], path) -> None:
    lines = [REPORT_HEADER] + [r.csv() for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def read_report(path) -> list[ReportRow]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != REPORT_HEADER:
        raise ValueError(f"{path}: bad report header")
    out = []
    for line in lines[1:]:
        method, train, test, run, a, f = line.split(",")
        out.append(ReportRow(method, train, test, int(run), float(a), float(f)))
    return out


def write_curve(curve: RocCurve, path) -> None:
    lines = ["threshold,fpr,tpr"] + [f"{t},{f!r},{p!r}" for t, f, p in curve.points()]
    Path(path).write_text("\n".join(lines) + "\n")


def summarize(rows: Iterable[ReportRow]) -> dict[str, tuple[float, float, float, float]]:
    """Per method: mean and population std of AUC and FPR@95 over runs."""
    by_method: dict[str, list[ReportRow]] = {}
    for r in rows:
        by_method.setdefault(r.method, []).append(r)
    out = {}
    for method, rs in by_method.items():
        a = np.array([r.auc for r in rs])
        f = np.array([r.fpr95 for r in rs])
        out[method] = (float(a.mean()), float(a.std()), float(f.mean()), float(f.std()))
    return out
