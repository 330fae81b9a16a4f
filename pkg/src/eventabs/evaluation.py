"""Evaluation of predicted high-level annotations: Levenshtein similarity,
leave-one-trace-out and k-fold cross-validation drivers, and confusion
matrices over low-level events.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .abstraction import AbstractionConfig, annotate, fit, strip_labels
from .xes import EventLog

__all__ = [
    "levenshtein_distance",
    "levenshtein_similarity",
    "collapse_runs",
    "ConfusionMatrix",
    "EventRecord",
    "AbstractionReport",
    "EvalConfig",
    "leave_one_trace_out",
    "k_fold",
    "confusion_restricted",
]


def levenshtein_distance(a: Sequence[Hashable], b: Sequence[Hashable]) -> int:
    """Unit-cost edit distance between two symbol sequences."""
    if len(a) < len(b):
        a, b = b, a
    previous = list(range(len(b) + 1))
    for i, sym_a in enumerate(a, start=1):
        current = [i]
        for j, sym_b in enumerate(b, start=1):
            cost = 0 if sym_a == sym_b else 1
            current.append(min(
                previous[j - 1] + cost,  # substitution / match
                previous[j] + 1,         # deletion
                current[j - 1] + 1,      # insertion
            ))
        previous = current
    return previous[-1]


def levenshtein_similarity(a: Sequence[Hashable], b: Sequence[Hashable]) -> float:
    """1 - edit_distance(a, b) / max(|a|, |b|); 1 for two empty sequences.

    0 means completely different sequences, 1 identical ones.
    """
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein_distance(a, b) / longest


def collapse_runs(labels: Sequence[str]) -> list[str]:
    """Collapse consecutive repeats: the per-run label sequence."""
    out: list[str] = []
    for label in labels:
        if not out or out[-1] != label:
            out.append(label)
    return out


@dataclass(frozen=True)
class ConfusionMatrix:
    """Square count matrix indexed by (true label, predicted label)."""

    labels: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.labels)
        if self.counts.shape != (n, n):
            raise ValueError("confusion matrix shape does not match labels")
        if (self.counts < 0).any():
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def count(self, true_label: str, predicted_label: str) -> int:
        i = self.labels.index(true_label)
        j = self.labels.index(predicted_label)
        return int(self.counts[i, j])

    def precision(self) -> dict[str, float]:
        column_sums = self.counts.sum(axis=0)
        return {
            l: float(self.counts[i, i] / column_sums[i]) if column_sums[i] else 0.0
            for i, l in enumerate(self.labels)
        }

    def recall(self) -> dict[str, float]:
        row_sums = self.counts.sum(axis=1)
        return {
            l: float(self.counts[i, i] / row_sums[i]) if row_sums[i] else 0.0
            for i, l in enumerate(self.labels)
        }

    def to_text(self) -> str:
        width = max([len(l) for l in self.labels] + [8]) + 2
        header = " " * width + "".join(f"{l:>{width}}" for l in self.labels)
        rows = [header]
        for i, l in enumerate(self.labels):
            cells = "".join(f"{int(c):>{width}}" for c in self.counts[i])
            rows.append(f"{l:>{width}}" + cells)
        return "\n".join(rows)

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "counts": [[int(c) for c in row] for row in self.counts],
        }


@dataclass(frozen=True)
class EventRecord:
    """One evaluated event: its low-level name, ground truth, prediction."""

    concept_name: str | None
    true_label: str
    predicted_label: str


@dataclass
class AbstractionReport:
    """Cross-validation outcome: per-trace similarities, their mean, the
    event-level confusion matrix, and per-label precision/recall."""

    per_trace: list[tuple[str, float]]
    mean_similarity: float
    confusion: ConfusionMatrix
    precision: dict[str, float]
    recall: dict[str, float]
    records: list[EventRecord] = field(default_factory=list, repr=False)
    diagnostics: list[str] = field(default_factory=list)
    similarity_on: str = "events"

    def to_dict(self) -> dict:
        return {
            "similarity_on": self.similarity_on,
            "mean_similarity": self.mean_similarity,
            "per_trace": [
                {"case": case, "similarity": sim} for case, sim in self.per_trace
            ],
            "confusion": self.confusion.to_dict(),
            "precision": self.precision,
            "recall": self.recall,
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [
            f"mean Levenshtein similarity ({self.similarity_on}): "
            f"{self.mean_similarity:.4f} over {len(self.per_trace)} traces",
            "",
            "confusion matrix (rows: truth, columns: prediction):",
            self.confusion.to_text(),
            "",
        ]
        for label in self.confusion.labels:
            lines.append(
                f"{label}: precision {self.precision[label]:.4f}, "
                f"recall {self.recall[label]:.4f}"
            )
        return "\n".join(lines)


@dataclass(frozen=True)
class EvalConfig:
    abstraction: AbstractionConfig = AbstractionConfig()
    similarity_on: str = "events"  # "events" or "runs"
    n_jobs: int = 1  # folds are independent; results are order-independent

    def __post_init__(self) -> None:
        if self.similarity_on not in ("events", "runs"):
            raise ValueError("similarity_on must be 'events' or 'runs'")
        if self.n_jobs < 1:
            raise ValueError("n_jobs must be at least 1")


def _true_label_sequences(log: EventLog) -> list[list[str]]:
    sequences = []
    for trace in log.traces:
        labels = []
        for i, ev in enumerate(trace.events):
            if ev.label is None:
                raise ValueError(
                    f"trace {trace.case_id!r} event {i} has no ground-truth label"
                )
            labels.append(ev.label)
        sequences.append(labels)
    return sequences


def _clone_with_traces(log: EventLog, traces: list) -> EventLog:
    return EventLog(
        attributes=dict(log.attributes),
        extensions=set(log.extensions),
        classifiers=dict(log.classifiers),
        global_trace_attributes=dict(log.global_trace_attributes),
        global_event_attributes=dict(log.global_event_attributes),
        traces=traces,
    )


def _run_fold(
    log: EventLog, fold: list[int], config: EvalConfig
) -> tuple[dict[int, list[str]], list[str]]:
    diagnostics: list[str] = []
    held_out = set(fold)
    train_log = _clone_with_traces(
        log, [t for i, t in enumerate(log.traces) if i not in held_out]
    )
    model = fit(train_log, config.abstraction, diagnostics)
    predicted: dict[int, list[str]] = {}
    for i in fold:
        test_log = _clone_with_traces(log, [log.traces[i]])
        result = annotate(model, strip_labels(test_log), diagnostics)
        predicted[i] = [ev.label for ev in result.traces[0].events]
    return predicted, diagnostics


_WORKER_STATE: dict = {}


def _fold_worker_init(log: EventLog, config: EvalConfig) -> None:
    _WORKER_STATE["log"] = log
    _WORKER_STATE["config"] = config


def _fold_worker(fold: list[int]) -> tuple[dict[int, list[str]], list[str]]:
    return _run_fold(_WORKER_STATE["log"], fold, _WORKER_STATE["config"])


def _evaluate_folds(
    log: EventLog,
    folds: list[list[int]],
    config: EvalConfig,
) -> AbstractionReport:
    truth = _true_label_sequences(log)
    diagnostics: list[str] = []
    predicted: dict[int, list[str]] = {}

    if config.n_jobs > 1:
        import multiprocessing

        context = multiprocessing.get_context("fork")
        with context.Pool(
            config.n_jobs, initializer=_fold_worker_init, initargs=(log, config)
        ) as pool:
            outcomes = pool.map(_fold_worker, folds)
    else:
        outcomes = [_run_fold(log, fold, config) for fold in folds]

    for fold_predictions, fold_diagnostics in outcomes:
        predicted.update(fold_predictions)
        diagnostics.extend(fold_diagnostics)

    all_labels = tuple(sorted(
        {l for seq in truth for l in seq}
        | {l for seq in predicted.values() for l in seq}
    ))
    index = {l: i for i, l in enumerate(all_labels)}
    counts = np.zeros((len(all_labels), len(all_labels)), dtype=np.int64)
    records: list[EventRecord] = []
    per_trace: list[tuple[str, float]] = []

    for i, trace in enumerate(log.traces):
        true_seq, pred_seq = truth[i], predicted[i]
        for ev, t, p in zip(trace.events, true_seq, pred_seq):
            counts[index[t], index[p]] += 1
            records.append(EventRecord(ev.name, t, p))
        if config.similarity_on == "runs":
            sim = levenshtein_similarity(collapse_runs(true_seq), collapse_runs(pred_seq))
        else:
            sim = levenshtein_similarity(true_seq, pred_seq)
        per_trace.append((trace.case_id, sim))

    confusion = ConfusionMatrix(all_labels, counts)
    similarities = [sim for _, sim in per_trace]
    return AbstractionReport(
        per_trace=per_trace,
        mean_similarity=float(sum(similarities) / len(similarities)),
        confusion=confusion,
        precision=confusion.precision(),
        recall=confusion.recall(),
        records=records,
        diagnostics=diagnostics,
        similarity_on=config.similarity_on,
    )


def leave_one_trace_out(log: EventLog, config: EvalConfig = EvalConfig()) -> AbstractionReport:
    """For each trace: train on all others, predict it with labels
    stripped, and score against the ground truth."""
    if len(log.traces) < 2:
        raise ValueError("leave-one-trace-out needs at least 2 annotated traces")
    folds = [[i] for i in range(len(log.traces))]
    return _evaluate_folds(log, folds, config)


def k_fold(
    log: EventLog, k: int, seed: int, config: EvalConfig = EvalConfig()
) -> AbstractionReport:
    """Shuffle traces deterministically into k near-equal folds; per fold,
    train on the rest and predict the fold."""
    n = len(log.traces)
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of traces ({n})")
    indices = list(range(n))
    random.Random(seed).shuffle(indices)
    folds = [[int(i) for i in part] for part in np.array_split(indices, k)]
    return _evaluate_folds(log, folds, config)


def confusion_restricted(
    report: AbstractionReport,
    low_level_names: set[str],
    true_labels: set[str],
) -> ConfusionMatrix:
    """Confusion matrix over the report's events whose low-level concept
    name is in ``low_level_names``, restricted to rows and columns in
    ``true_labels``. An empty selection yields an all-zero matrix."""
    labels = tuple(sorted(true_labels))
    index = {l: i for i, l in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for record in report.records:
        if record.concept_name not in low_level_names:
            continue
        i = index.get(record.true_label)
        j = index.get(record.predicted_label)
        if i is not None and j is not None:
            counts[i, j] += 1
    return ConfusionMatrix(labels, counts)
