"""Metrics, cross-validation protocols, sweeps and the latency benchmark."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import svm
from .model import DEFAULT_LAYOUT, BodyLayout, DataSegment, PipelineConfig, Trace
from .pipeline import Recognizer, build_instances

log = logging.getLogger(__name__)


class FoldError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ConfusionCounts:
    """``matrix[i, j]`` counts instances of true class i predicted as j."""

    matrix: np.ndarray

    @classmethod
    def from_predictions(cls, truths, predictions, n_classes: int) -> "ConfusionCounts":
        m = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(m, (np.asarray(truths), np.asarray(predictions)), 1)
        return cls(m)

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    @property
    def tp(self) -> np.ndarray:
        return np.diag(self.matrix).copy()

    @property
    def fp(self) -> np.ndarray:
        return self.matrix.sum(axis=0) - self.tp

    @property
    def fn(self) -> np.ndarray:
        return self.matrix.sum(axis=1) - self.tp

    @property
    def tn(self) -> np.ndarray:
        return self.total - self.tp - self.fp - self.fn

    def accuracy(self) -> float:
        return float(self.tp.sum() / self.total) if self.total else 0.0


def overall_accuracy(predictions, truths) -> float:
    p = np.asarray(predictions)
    t = np.asarray(truths)
    if len(p) == 0 or len(p) != len(t):
        raise ValueError("predictions and truths must be non-empty and equally long")
    return float(np.mean(p == t))


def precision_recall(conf: ConfusionCounts, cls: int) -> tuple[float, float]:
    tp, fp, fn = conf.tp[cls], conf.fp[cls], conf.fn[cls]
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    return float(precision), float(recall)


def per_activity_accuracy(conf: ConfusionCounts, cls: int) -> float:
    tp, tn, fp, fn = conf.tp[cls], conf.tn[cls], conf.fp[cls], conf.fn[cls]
    denom = tp + tn + fp + fn
    return float((tp + tn) / denom) if denom else 0.0


# -- normalization -------------------------------------------------------------

def normalize_rss(traces: Sequence[Trace], mode: str = "none") -> list[Trace]:
    """``per_subject_zscore``: z-score RSS with each subject's pooled mean/std over its traces.

    The empty-series floor is mapped through the same transform, so a
    missing series stays "just below the weakest detectable reading".
    """
    if mode == "none":
        return list(traces)
    if mode != "per_subject_zscore":
        raise ValueError(f"unknown normalization mode {mode!r}")
    by_subject: dict[int, list[int]] = {}
    for i, t in enumerate(traces):
        if t.subject is None:
            raise ValueError("per-subject normalization needs a subject id on every trace")
        by_subject.setdefault(t.subject, []).append(i)
    out: list[Trace | None] = [None] * len(traces)
    for subject, idx in by_subject.items():
        pooled = np.concatenate([traces[i].rss for i in idx])
        mu, sd = pooled.mean(), pooled.std()
        if not sd > 0:
            raise ValueError(f"subject {subject}: zero-variance RSS, cannot normalize")
        for i in idx:
            t = traces[i]
            out[i] = t.with_rss((t.rss - mu) / sd, (t.rss_floor - mu) / sd)
    return out  # type: ignore[return-value]


# -- cross-validation ------------------------------------------------------------

def stratified_folds(y, k: int, seed: int = 0, class_names: Sequence[str] | None = None
                     ) -> np.ndarray:
    """Fold id per instance: each class is shuffled and dealt round-robin over the folds."""
    y = np.asarray(y)
    if k < 2:
        raise FoldError("k must be >= 2")
    rng = np.random.default_rng(seed)
    folds = np.empty(len(y), dtype=np.int64)
    offset = 0
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if len(idx) < k:
            name = class_names[c] if class_names is not None and c < len(class_names) else c
            raise FoldError(f"class {name!r} has {len(idx)} instances, fewer than k={k} folds")
        idx = idx[rng.permutation(len(idx))]
        # rotate the deal so small classes do not all pile into fold 0
        folds[idx] = (np.arange(len(idx)) + offset) % k
        offset += len(idx)
    return folds


@dataclass
class CvResult:
    accuracy: float
    confusion: ConfusionCounts
    predictions: np.ndarray
    folds: np.ndarray


def _fit_predict(train_set: svm.InstanceSet, test_X: np.ndarray, params: svm.SvmParams
                 ) -> np.ndarray:
    if len(np.unique(train_set.y)) < 2:
        return np.full(len(test_X), int(train_set.y[0]))
    model = svm.train(train_set, params)
    return svm.predict_many(model, test_X)[0]


def kfold_cv(instances: svm.InstanceSet, k: int = 10, seed: int = 0,
             params: svm.SvmParams = svm.SvmParams()) -> CvResult:
    """Stratified k-fold CV; the scaler is fitted inside ``svm.train`` on each training split."""
    folds = stratified_folds(instances.y, k, seed, instances.class_names)
    pred = np.empty(len(instances), dtype=np.int64)
    for f in range(k):
        test = folds == f
        pred[test] = _fit_predict(instances.subset(np.flatnonzero(~test)),
                                  instances.X[test], params)
    conf = ConfusionCounts.from_predictions(instances.y, pred, len(instances.class_names))
    return CvResult(conf.accuracy(), conf, pred, folds)


@dataclass
class LosoResult:
    subjects: list[int]
    accuracies: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))


def leave_one_subject_out(instances: svm.InstanceSet,
                          params: svm.SvmParams = svm.SvmParams()) -> LosoResult:
    subjects = sorted(int(s) for s in np.unique(instances.subjects))
    if len(subjects) < 2:
        raise FoldError("leave-one-subject-out needs at least two subjects")
    accs = []
    for s in subjects:
        test = instances.subjects == s
        pred = _fit_predict(instances.subset(np.flatnonzero(~test)), instances.X[test], params)
        accs.append(overall_accuracy(pred, instances.y[test]))
    return LosoResult(subjects, accs)


def loso_normalization_study(traces: Sequence[Trace], config: PipelineConfig,
                             layout: BodyLayout = DEFAULT_LAYOUT,
                             class_names: Sequence[str] | None = None,
                             params: svm.SvmParams = svm.SvmParams()
                             ) -> dict[str, LosoResult]:
    out = {}
    for mode in ("none", "per_subject_zscore"):
        inst = build_instances(normalize_rss(traces, mode), config, layout, class_names)
        out[mode] = leave_one_subject_out(inst, params)
    return out


# -- sweeps ------------------------------------------------------------------

def sweep_window(traces: Sequence[Trace], window_lengths: Iterable[float],
                 config: PipelineConfig = PipelineConfig(), layout: BodyLayout = DEFAULT_LAYOUT,
                 class_names: Sequence[str] | None = None, k: int = 10, seed: int = 0,
                 params: svm.SvmParams = svm.SvmParams(), completion: bool = True
                 ) -> list[dict]:
    rows = []
    for L in window_lengths:
        if L <= 0:
            raise ValueError("window lengths must be > 0")
        cfg = replace(config, window_len_s=float(L),
                      history_span_s=max(config.history_span_s, float(L)))
        inst = build_instances(traces, cfg, layout, class_names, completion)
        res = kfold_cv(inst, k, seed, params)
        log.info("L=%.1fs: accuracy %.3f over %d windows", L, res.accuracy, len(inst))
        rows.append({"window_s": float(L), "n_instances": len(inst), "accuracy": res.accuracy})
    return rows


def ablate_completion(traces: Sequence[Trace], window_lengths: Iterable[float],
                      config: PipelineConfig = PipelineConfig(),
                      layout: BodyLayout = DEFAULT_LAYOUT,
                      class_names: Sequence[str] | None = None, k: int = 10, seed: int = 0,
                      params: svm.SvmParams = svm.SvmParams()) -> list[dict]:
    """Same pipeline with completion on and off; one row per window length."""
    rows = []
    for L in window_lengths:
        cfg = replace(config, window_len_s=float(L),
                      history_span_s=max(config.history_span_s, float(L)))
        acc = {}
        for on in (True, False):
            inst = build_instances(traces, cfg, layout, class_names, completion=on)
            acc[on] = kfold_cv(inst, k, seed, params).accuracy
        rows.append({"window_s": float(L), "threshold": cfg.overlap_threshold,
                     "accuracy_completion": acc[True], "accuracy_no_completion": acc[False],
                     "delta": acc[True] - acc[False]})
    return rows


def sweep_training_fraction(instances: svm.InstanceSet, fractions: Iterable[float],
                            seed: int = 0, params: svm.SvmParams = svm.SvmParams()
                            ) -> list[dict]:
    """Stratified train/test split at each training fraction; accuracy on the held-out rest."""
    rng = np.random.default_rng(seed)
    order = {c: rng.permutation(np.flatnonzero(instances.y == c))
             for c in np.unique(instances.y)}
    rows = []
    for frac in fractions:
        if not 0 < frac < 1:
            raise ValueError("fractions must lie in (0, 1)")
        tr = np.concatenate([idx[:max(1, int(round(frac * len(idx))))] for idx in order.values()])
        te = np.setdiff1d(np.arange(len(instances)), tr)
        pred = _fit_predict(instances.subset(np.sort(tr)), instances.X[te], params)
        rows.append({"train_fraction": float(frac), "accuracy":
                     overall_accuracy(pred, instances.y[te])})
    return rows


def grid_search(instances: svm.InstanceSet, Cs: Sequence[float], gammas: Sequence[float | None],
                k: int = 5, seed: int = 0) -> list[dict]:
    rows = []
    for C in Cs:
        for g in gammas:
            res = kfold_cv(instances, k, seed, svm.SvmParams(C=C, gamma=g))
            rows.append({"C": C, "gamma": "auto" if g is None else g, "accuracy": res.accuracy})
    return rows


def write_rows_csv(path: str | Path, rows: Sequence[dict]) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# -- latency -----------------------------------------------------------------

@dataclass
class LatencyReport:
    window_len_s: float
    durations_s: list[float] = field(default_factory=list)

    @property
    def max_s(self) -> float:
        return max(self.durations_s) if self.durations_s else 0.0

    @property
    def mean_s(self) -> float:
        return float(np.mean(self.durations_s)) if self.durations_s else 0.0

    @property
    def passed(self) -> bool:
        return self.max_s < self.window_len_s

    def summary(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"windows={len(self.durations_s)} L={self.window_len_s:g}s "
                f"max={self.max_s * 1000:.1f}ms mean={self.mean_s * 1000:.1f}ms "
                f"real-time={verdict}")


def bench_latency(model: svm.SvmModel, segments: Iterable[DataSegment], config: PipelineConfig,
                  layout: BodyLayout = DEFAULT_LAYOUT, extra_delay_s: float = 0.0,
                  min_windows: int = 100) -> LatencyReport:
    """Time completion + extraction + prediction for each raw window, in stream order."""
    rec = Recognizer(model, config, layout, extra_delay_s=extra_delay_s)
    report = LatencyReport(config.window_len_s)
    for seg in segments:
        report.durations_s.append(rec.process_segment(seg).elapsed_s)
    if len(report.durations_s) < min_windows:
        raise ValueError(f"latency bench needs >= {min_windows} windows, "
                         f"got {len(report.durations_s)}")
    return report
