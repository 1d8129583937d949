"""Metrics (confusion matrix, recall/precision/F1, accuracy, CAD) and experiment runners.

CAD, the correct attack detection rate, is the summed true positives of
the attack classes over the summed "found" counts (column sums) of those
classes. Benign traffic predicted as an attack therefore lowers it.

Runners:

* :func:`run_generalization` trains on one dataset and scores another
  without any update;
* :func:`run_retraining` trains on a first dataset, then keeps training on
  a second one and re-scores the first to expose forgetting.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ProtocolError
from .features import FeatureSet
from .ingest import BENIGN
from .model import EpochMetrics, ModelSpec, TrainConfig, TWNet, accuracy, split_indices, train

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts with rows = true class, columns = predicted class."""

    matrix: np.ndarray
    classes: tuple[str, ...]

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=np.int64)
        object.__setattr__(self, "matrix", m)
        object.__setattr__(self, "classes", tuple(self.classes))
        if m.shape != (len(self.classes),) * 2:
            raise ValueError(f"matrix shape {m.shape} does not match {len(self.classes)} classes")
        if m.size and m.min() < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def support(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    @property
    def found(self) -> np.ndarray:
        return self.matrix.sum(axis=0)

    @property
    def true_positive(self) -> np.ndarray:
        return np.diag(self.matrix)

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    def index(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise ValueError(f"unknown class {name!r}") from None


def _class_ids(values, classes: tuple[str, ...]) -> np.ndarray:
    values = np.asarray(values)
    if values.dtype.kind in "iu":
        if values.size and (values.min() < 0 or values.max() >= len(classes)):
            raise ValueError("class id outside the class table")
        return values.astype(np.int64)
    lookup = {c: i for i, c in enumerate(classes)}
    try:
        return np.array([lookup[v] for v in values.tolist()], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"unknown class {exc.args[0]!r}") from None


def confusion(pred, truth, classes: Sequence[str]) -> ConfusionMatrix:
    """Count (true, predicted) pairs; accepts class ids or class names."""
    classes = tuple(classes)
    p, t = _class_ids(pred, classes), _class_ids(truth, classes)
    if p.shape != t.shape:
        raise ValueError("predictions and ground truth differ in length")
    k = len(classes)
    counts = np.bincount(t * k + p, minlength=k * k).reshape(k, k)
    return ConfusionMatrix(counts, classes)


def _ratio(num: float, den: float) -> tuple[float, bool]:
    return (num / den, False) if den else (0.0, True)


def cad_with_flag(cm: ConfusionMatrix, attack_classes: Sequence[str] | None = None) -> tuple[float, bool]:
    """CAD and whether it was undefined (no attack predictions at all, reported as 0)."""
    if attack_classes is None:
        attack_classes = [c for c in cm.classes if c != BENIGN]
    idx = [cm.index(c) for c in attack_classes]
    if BENIGN in attack_classes:
        raise ValueError("Benign is not an attack class")
    tp = int(cm.true_positive[idx].sum())
    found = int(cm.found[idx].sum())
    return _ratio(tp, found)


def cad(cm: ConfusionMatrix, attack_classes: Sequence[str] | None = None) -> float:
    return cad_with_flag(cm, attack_classes)[0]


@dataclass
class MetricReport:
    classes: tuple[str, ...]
    accuracy: float
    recall: dict[str, float]
    precision: dict[str, float]
    f1: dict[str, float]
    support: dict[str, int]
    cad: float
    flags: list[str] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    confusion: ConfusionMatrix | None = None

    def row(self, prefix: str = "") -> dict:
        out = {f"{prefix}accuracy": self.accuracy, f"{prefix}cad": self.cad}
        for c in self.classes:
            out[f"{prefix}recall_{c}"] = self.recall[c]
        return out


def metric_report(cm: ConfusionMatrix, attack_classes: Sequence[str] | None = None, meta: dict | None = None) -> MetricReport:
    """Per-class rates from a confusion matrix. 0/0 rates are reported as 0 and flagged."""
    flags = []
    recall, precision, f1, support = {}, {}, {}, {}
    for i, c in enumerate(cm.classes):
        tp = int(cm.matrix[i, i])
        r, r_bad = _ratio(tp, int(cm.support[i]))
        p, p_bad = _ratio(tp, int(cm.found[i]))
        if r_bad:
            flags.append(f"recall_undefined:{c}")
        if p_bad:
            flags.append(f"precision_undefined:{c}")
        f, f_bad = _ratio(2 * r * p, r + p)
        if f_bad:
            flags.append(f"f1_undefined:{c}")
        recall[c], precision[c], f1[c], support[c] = r, p, f, int(cm.support[i])
    acc, acc_bad = _ratio(int(np.trace(cm.matrix)), cm.total)
    if acc_bad:
        flags.append("empty")
    value, cad_bad = cad_with_flag(cm, attack_classes)
    if cad_bad:
        flags.append("cad_undefined")
    return MetricReport(cm.classes, acc, recall, precision, f1, support, value, flags, dict(meta or {}), cm)


def evaluate(model: TWNet, data: FeatureSet, meta: dict | None = None) -> MetricReport:
    pred = model.predict(data.features, data.protocol)
    return metric_report(confusion(pred, data.labels, data.classes), meta=meta)


def render_confusion(cm: ConfusionMatrix, digits: int = 2) -> str:
    """Plain-text table: counts with row totals, then found/TP/recall/precision/F1 rows."""
    report = metric_report(cm)
    header = [""] + list(cm.classes) + ["Amounts"]
    rows = [header]
    for i, c in enumerate(cm.classes):
        rows.append([c] + [str(v) for v in cm.matrix[i]] + [str(cm.support[i])])
    rows.append(["Total Found"] + [str(v) for v in cm.found] + [""])
    rows.append(["True Positive"] + [str(v) for v in cm.true_positive] + [""])
    for name, values in (("Recall", report.recall), ("Precision", report.precision), ("F1-Score", report.f1)):
        rows.append([name] + [f"{values[c]:.{digits}f}" for c in cm.classes] + [""])
    rows.append(["Accuracy", f"{report.accuracy:.4f}"] + [""] * (len(header) - 2))
    rows.append(["CAD", f"{report.cad:.4f}"] + [""] * (len(header) - 2))
    widths = [max(len(r[j]) for r in rows) for j in range(len(header))]
    lines = ["  ".join(cell.rjust(w) if j else cell.ljust(w) for j, (cell, w) in enumerate(zip(r, widths))).rstrip() for r in rows]
    return "\n".join(lines) + "\n"


# ---- experiment runners ----------------------------------------------------------


def shared_vocabulary(*sets: FeatureSet) -> tuple[str, ...]:
    classes = list(sets[0].classes)
    extra = sorted({c for s in sets[1:] for c in s.classes} - set(classes))
    return tuple(classes + extra)


def shared_attacks(a: FeatureSet, b: FeatureSet) -> tuple[str, ...]:
    """Attack classes with samples in both sets, in vocabulary order."""
    ca, cb = a.class_counts(), b.class_counts()
    return tuple(c for c in a.classes if c != BENIGN and c in ca and c in cb)


def _fit(spec: ModelSpec, data: FeatureSet, seed: int, config: TrainConfig) -> tuple[TWNet, list[EpochMetrics]]:
    tr, va = split_indices(len(data), seed)
    model = TWNet.build(spec, seed, data.features[tr])
    model, history = train(model, data.subset(tr), replace(config, seed=seed), data.subset(va))
    return model, history


def _prepare(spec: ModelSpec, first: FeatureSet, second: FeatureSet, shared: Sequence[str] | None):
    classes = shared_vocabulary(first, second)
    first, second = first.with_classes(classes), second.with_classes(classes)
    if spec.n_classes != len(classes):
        spec = replace(spec, n_classes=len(classes))
    shared = tuple(shared) if shared is not None else shared_attacks(first, second)
    if not shared:
        raise ProtocolError("the datasets share no attack class; nothing to compare")
    unknown = [c for c in shared if c not in classes or c == BENIGN]
    if unknown:
        raise ProtocolError(f"not an attack class of the vocabulary: {unknown[0]!r}")
    return spec, first, second, shared


def _dispersion(rows: list[dict], skip: Sequence[str]) -> list[dict]:
    if not rows:
        return []
    out = []
    for stat, fn in (("min", np.min), ("max", np.max), ("mean", np.mean)):
        row = {k: (stat if k == "run" else "") for k in rows[0] if k in skip}
        for k in rows[0]:
            if k not in skip:
                row[k] = float(fn([r[k] for r in rows]))
        out.append(row)
    return out


@dataclass
class GeneralizationRun:
    seed: int
    train_accuracy: float
    test: MetricReport
    history: list[EpochMetrics]
    model: TWNet | None = None


@dataclass
class GeneralizationResult:
    spec: ModelSpec
    shared: tuple[str, ...]
    runs: list[GeneralizationRun]

    def rows(self) -> list[dict]:
        rows = []
        for i, r in enumerate(self.runs, 1):
            row = {"model": self.spec.label, "run": i, "seed": r.seed, "train_accuracy": r.train_accuracy}
            for c in self.shared:
                row[f"test_recall_{c}"] = r.test.recall[c]
            row["test_cad"] = r.test.cad
            row["test_accuracy"] = r.test.accuracy
            rows.append(row)
        return rows

    def summary(self) -> list[dict]:
        return _dispersion(self.rows(), ("model", "run", "seed"))


def run_generalization(
    train_set: FeatureSet,
    test_set: FeatureSet,
    spec: ModelSpec,
    seeds: Sequence[int] = (0, 1, 2, 3),
    config: TrainConfig | None = None,
    shared: Sequence[str] | None = None,
    keep_models: bool = False,
) -> GeneralizationResult:
    """Train on 80% of ``train_set`` per seed, then score all of ``test_set`` untouched.

    Train accuracy is measured on the entire training set. Test recall is
    reported only for attack classes present in both sets (or ``shared``).
    """
    config = config or TrainConfig()
    spec, train_set, test_set, shared = _prepare(spec, train_set, test_set, shared)
    runs = []
    for seed in seeds:
        model, history = _fit(spec, train_set, seed, config)
        test = evaluate(model, test_set, {"seed": seed, "model": spec.label})
        runs.append(GeneralizationRun(seed, accuracy(model, train_set), test, history, model if keep_models else None))
        logger.info("seed %d: train %.4f test %.4f", seed, runs[-1].train_accuracy, test.accuracy)
    return GeneralizationResult(spec, shared, runs)


@dataclass
class RetrainingRun:
    seed: int
    first_phase1: MetricReport
    second_phase1: MetricReport
    first_phase2: MetricReport
    second_phase2: MetricReport
    model: TWNet | None = None


@dataclass
class RetrainingResult:
    spec: ModelSpec
    shared: tuple[str, ...]
    epochs: tuple[int, int]
    runs: list[RetrainingRun]

    def rows(self) -> list[dict]:
        rows = []
        for i, r in enumerate(self.runs, 1):
            row = {
                "run": i,
                "seed": r.seed,
                "phase1_first_accuracy": r.first_phase1.accuracy,
                "phase1_second_accuracy": r.second_phase1.accuracy,
                "phase2_second_accuracy": r.second_phase2.accuracy,
                "phase2_first_accuracy": r.first_phase2.accuracy,
            }
            for c in self.shared:
                row[f"phase2_first_recall_{c}"] = r.first_phase2.recall[c]
            row["phase2_first_cad"] = r.first_phase2.cad
            rows.append(row)
        return rows

    def summary(self) -> list[dict]:
        return _dispersion(self.rows(), ("run", "seed"))


def run_retraining(
    first_set: FeatureSet,
    second_set: FeatureSet,
    spec: ModelSpec,
    epochs_first: int = 8,
    epochs_second: int = 4,
    seeds: Sequence[int] = (0, 1, 2, 3),
    config: TrainConfig | None = None,
    shared: Sequence[str] | None = None,
    keep_models: bool = False,
) -> RetrainingResult:
    """Phase 1 trains on the first set, phase 2 continues on the second set.

    Both phases train on an 80% split; the optimizer state carries over.
    All scores are over entire datasets.
    """
    config = config or TrainConfig()
    spec, first_set, second_set, shared = _prepare(spec, first_set, second_set, shared)
    runs = []
    for seed in seeds:
        model, _ = _fit(spec, first_set, seed, replace(config, epochs=epochs_first))
        meta = {"seed": seed, "model": spec.label}
        p1 = evaluate(model, first_set, meta), evaluate(model, second_set, meta)
        tr, va = split_indices(len(second_set), seed)
        train(model, second_set.subset(tr), replace(config, epochs=epochs_second, seed=seed), second_set.subset(va))
        p2 = evaluate(model, first_set, meta), evaluate(model, second_set, meta)
        runs.append(RetrainingRun(seed, p1[0], p1[1], p2[0], p2[1], model if keep_models else None))
        logger.info("seed %d: first %.4f -> %.4f", seed, p1[0].accuracy, p2[0].accuracy)
    return RetrainingResult(spec, shared, (epochs_first, epochs_second), runs)


# ---- report files -----------------------------------------------------------------


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value) if math.isfinite(value) else str(value)
    return str(value)


def write_rows(path: str | Path, rows: Sequence[dict]) -> None:
    """CSV with the union of keys in first-seen order; floats written exactly."""
    columns: list[str] = []
    for r in rows:
        columns.extend(k for k in r if k not in columns)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for r in rows:
            writer.writerow([_cell(r.get(k, "")) for k in columns])


def report_rows(report: MetricReport) -> list[dict]:
    """One row per class plus overall accuracy and CAD rows."""
    rows = [
        {
            "class": c,
            "support": report.support[c],
            "recall": report.recall[c],
            "precision": report.precision[c],
            "f1": report.f1[c],
        }
        for c in report.classes
    ]
    rows.append({"class": "accuracy", "recall": report.accuracy})
    rows.append({"class": "cad", "recall": report.cad})
    return rows
