"""
Evaluation metrics and cross-validation.

FPR90 / FPR99 are the smallest false-positive rates among ROC points whose
true-positive rate reaches 0.90 / 0.99. F1 and MCC use the default decision
threshold: score > 0 means anomaly (w.z + b > 0 for linear models,
P(anomaly) > 0.5 for forests).
"""

import csv
import json
import logging
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
from sklearn.metrics import auc, f1_score, matthews_corrcoef, roc_curve

from .classify import binary_labels, decision_scores
from .errors import DimensionMismatch, IoError, SingleClass
from .schemas import EvalReport, FoldAssignment, FoldMetrics, MetricSummary, RocPoint

log = logging.getLogger("reqvec.metrics")

THRESHOLD_NOTE = "decision threshold 0: w.z+b > 0 (linear), P(anomaly) > 0.5 (forest)"
MEAN_ROC_GRID = np.linspace(0.0, 1.0, 101)
METRICS = ("fpr90", "fpr99", "f1", "mcc", "roc_auc")


def roc_points(scores, labels) -> List[RocPoint]:
    """Every (fpr, tpr) operating point, thresholds descending; starts at (0, 0)."""
    y = binary_labels(labels)
    s = np.asarray(scores, dtype=np.float64)
    fpr, tpr, thresholds = roc_curve(y, s, drop_intermediate=False)
    # sklearn reports +inf for the all-negative point; keep the file JSON-safe.
    thresholds = thresholds.copy()
    thresholds[0] = float(s.max()) + 1.0
    return [RocPoint(fpr=float(f), tpr=float(t), threshold=float(th)) for f, t, th in zip(fpr, tpr, thresholds)]


def fpr_at_tpr(roc: Sequence[RocPoint], target: float) -> float:
    return min(p.fpr for p in roc if p.tpr >= target)


def fold_metrics(scores, labels, *, threshold: float = 0.0, fold: int = 0) -> FoldMetrics:
    y = binary_labels(labels)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape[0] != s.shape[0]:
        raise DimensionMismatch(f"{s.shape[0]} scores but {y.shape[0]} labels")
    if np.unique(y).size < 2:
        raise SingleClass("evaluation needs both classes")

    roc = roc_points(s, y)
    predicted = (s > threshold).astype(np.int64)
    return FoldMetrics(
        fold=fold,
        fpr90=fpr_at_tpr(roc, 0.90),
        fpr99=fpr_at_tpr(roc, 0.99),
        f1=float(f1_score(y, predicted, zero_division=0)),
        mcc=float(matthews_corrcoef(y, predicted)),
        roc_auc=float(auc([p.fpr for p in roc], [p.tpr for p in roc])),
        threshold=threshold,
        roc=roc,
    )


def _summary(values: Sequence[float]) -> MetricSummary:
    arr = np.asarray(values, dtype=np.float64)
    return MetricSummary(mean=float(arr.mean()), std=float(arr.std()))


def mean_roc(folds: Sequence[FoldMetrics], grid: np.ndarray = MEAN_ROC_GRID) -> List[List[float]]:
    """Best achievable TPR at each FPR grid value, averaged over folds."""
    curves = []
    for fm in folds:
        fpr = np.asarray([p.fpr for p in fm.roc])
        tpr = np.asarray([p.tpr for p in fm.roc])
        idx = np.searchsorted(fpr, grid, side="right") - 1
        curves.append(tpr[np.clip(idx, 0, None)])
    mean = np.mean(curves, axis=0)
    return [[float(g), float(t)] for g, t in zip(grid, mean)]


def summarize(
    folds: List[FoldMetrics], model: str = "", config: Optional[Dict] = None
) -> EvalReport:
    return EvalReport(
        model=model,
        folds=folds,
        threshold_note=THRESHOLD_NOTE,
        mean_roc=mean_roc(folds),
        config=config or {},
        **{name: _summary([getattr(f, name) for f in folds]) for name in METRICS},
    )


def evaluate(scores, labels, *, model: str = "", threshold: float = 0.0) -> EvalReport:
    """Single-fold report; std is 0 and ``report.roc`` holds the curve."""
    return summarize([fold_metrics(scores, labels, threshold=threshold)], model=model)


def evaluate_cv(
    X,
    y,
    trainer: Callable,
    folds: FoldAssignment,
    ids: Sequence[str],
    *,
    model: str = "",
    config: Optional[Dict] = None,
) -> EvalReport:
    """
    Train on k-1 folds, score the held-out fold, for every fold. Each model
    (and its feature scaler) only ever sees its training folds.
    """
    X = np.asarray(X, dtype=np.float64)
    y = binary_labels(y)
    row = {doc_id: n for n, doc_id in enumerate(ids)}
    if len(row) != X.shape[0] or y.shape[0] != X.shape[0]:
        raise DimensionMismatch("ids, X and y must describe the same rows")

    results = []
    for k in range(folds.k):
        test = np.asarray([row[i] for i in folds.test_ids(k)], dtype=np.int64)
        train = np.asarray([row[i] for i in folds.train_ids(k)], dtype=np.int64)
        if np.intersect1d(test, train).size:
            raise ValueError(f"fold {k}: train and test rows overlap")
        fitted = trainer(X[train], y[train])
        fm = fold_metrics(decision_scores(fitted, X[test]), y[test], fold=k)
        log.info(
            "Fold %d/%d: F1 %.4f MCC %.4f FPR90 %.4f FPR99 %.4f",
            k + 1,
            folds.k,
            fm.f1,
            fm.mcc,
            fm.fpr90,
            fm.fpr99,
        )
        results.append(fm)
    report = summarize(results, model=model, config=config)
    log.info(
        "%s: F1 %.3f ± %.3f, MCC %.3f ± %.3f",
        model or "model",
        report.f1.mean,
        report.f1.std,
        report.mcc.mean,
        report.mcc.std,
    )
    return report


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def _cell(summary: MetricSummary) -> str:
    return f"{summary.mean:.3f} ± {summary.std:.3f}"


def render_table(reports: Sequence[EvalReport]) -> str:
    """Plain-text table: one row per classifier, columns FPR90 FPR99 F1 MCC."""
    header = ["Model", "FPR90", "FPR99", "F1", "MCC"]
    rows = [
        [r.model or "-", _cell(r.fpr90), _cell(r.fpr99), _cell(r.f1), _cell(r.mcc)]
        for r in reports
    ]
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows)
    if reports:
        lines.append("")
        lines.append(f"k = {len(reports[0].folds)} folds; {THRESHOLD_NOTE}")
    return "\n".join(lines) + "\n"


def write_roc_csv(reports: Sequence[EvalReport], path: Union[str, Path]) -> None:
    """Columns model,curve,fpr,tpr,threshold; curve is a fold index or "mean"."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["model", "curve", "fpr", "tpr", "threshold"])
            for report in reports:
                for fm in report.folds:
                    for p in fm.roc:
                        writer.writerow([report.model, fm.fold, repr(p.fpr), repr(p.tpr), repr(p.threshold)])
                for fpr, tpr in report.mean_roc:
                    writer.writerow([report.model, "mean", repr(fpr), repr(tpr), ""])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def save_reports(reports: Sequence[EvalReport], path: Union[str, Path]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps([r.model_dump() for r in reports], sort_keys=True, indent=2) + "\n",
            encoding="utf-8",
        )
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
