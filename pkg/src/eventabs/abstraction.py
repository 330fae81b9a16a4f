"""The end-to-end pipeline: train on annotated traces, predict label
attributes on unannotated traces, and collapse label runs into a
high-level start/complete log. Also owns model persistence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import IO

import numpy as np

from .crf import CrfModel, train, viterbi_decode
from .features import CatalogConfig, FeatureCatalog, build_catalog, evaluate_observations
from .owlqn import OwlqnConfig
from .xes import (
    CONCEPT_NAME,
    LABEL,
    LIFECYCLE_TRANSITION,
    TIME_TIMESTAMP,
    AttributeValue,
    Event,
    EventLog,
    Trace,
)

__all__ = [
    "AbstractionConfig",
    "ModelIOError",
    "fit",
    "annotate",
    "collapse",
    "strip_labels",
    "save_model",
    "load_model",
    "MODEL_FORMAT",
    "MODEL_VERSION",
]

MODEL_FORMAT = "eventabs-crf-model"
MODEL_VERSION = 1


class ModelIOError(Exception):
    """A model file is missing, corrupt, or of an unsupported version."""


@dataclass(frozen=True)
class AbstractionConfig:
    catalog: CatalogConfig = CatalogConfig()
    l1_coefficient: float = 0.1
    optimizer: OwlqnConfig = OwlqnConfig()


def fit(
    annotated: EventLog,
    config: AbstractionConfig = AbstractionConfig(),
    diagnostics: list[str] | None = None,
) -> CrfModel:
    """Build the feature catalog on the annotated log and train the CRF."""
    catalog = build_catalog(annotated, config.catalog, diagnostics)
    return train(
        annotated,
        catalog,
        l1_coefficient=config.l1_coefficient,
        optimizer_config=config.optimizer,
    )


def annotate(
    model: CrfModel,
    unannotated: EventLog,
    diagnostics: list[str] | None = None,
) -> EventLog:
    """Attach a decoded label attribute to every event.

    All other attributes are untouched; trace and event counts are
    preserved. Events lacking attributes a feature family needs are scored
    with neutral feature values (recorded in ``diagnostics``).
    """
    traces = []
    for trace in unannotated.traces:
        observations = evaluate_observations(model.catalog, trace, diagnostics)
        decoded = viterbi_decode(model, observations)
        events = []
        for event, label in zip(trace.events, decoded):
            attributes = dict(event.attributes)
            attributes[LABEL] = AttributeValue.string(label)
            events.append(Event(attributes))
        traces.append(Trace(dict(trace.attributes), events))
    global_event = dict(unannotated.global_event_attributes)
    global_event.setdefault(LABEL, AttributeValue.string(""))
    return EventLog(
        attributes=dict(unannotated.attributes),
        extensions=set(unannotated.extensions),
        classifiers=dict(unannotated.classifiers),
        global_trace_attributes=dict(unannotated.global_trace_attributes),
        global_event_attributes=global_event,
        traces=traces,
    )


def strip_labels(log: EventLog) -> EventLog:
    """Remove the label attribute from every event."""
    traces = []
    for trace in log.traces:
        events = []
        for event in trace.events:
            attributes = {k: v for k, v in event.attributes.items() if k != LABEL}
            events.append(Event(attributes))
        traces.append(Trace(dict(trace.attributes), events))
    global_event = {
        k: v for k, v in log.global_event_attributes.items() if k != LABEL
    }
    return EventLog(
        attributes=dict(log.attributes),
        extensions=set(log.extensions),
        classifiers=dict(log.classifiers),
        global_trace_attributes=dict(log.global_trace_attributes),
        global_event_attributes=global_event,
        traces=traces,
    )


def collapse(annotated: EventLog) -> EventLog:
    """Collapse each maximal run of equal label values into two events.

    The run's label becomes the ``concept:name`` of a "start" event at the
    run's first timestamp and a "complete" event at its last timestamp.
    Runs never merge across trace boundaries. Every input event must carry
    both a label and a timestamp.
    """
    traces = []
    for trace in annotated.traces:
        for i, event in enumerate(trace.events):
            if event.label is None:
                raise ValueError(
                    f"trace {trace.case_id!r} event {i} has no label attribute"
                )
            if event.timestamp is None:
                raise ValueError(
                    f"trace {trace.case_id!r} event {i} has no timestamp"
                )
        events = []
        run_start = 0
        for i in range(1, len(trace.events) + 1):
            if i < len(trace.events) and trace.events[i].label == trace.events[run_start].label:
                continue
            first, last = trace.events[run_start], trace.events[i - 1]
            for source, transition in ((first, "start"), (last, "complete")):
                events.append(Event({
                    CONCEPT_NAME: AttributeValue.string(source.label),
                    TIME_TIMESTAMP: AttributeValue.date(source.timestamp),
                    LIFECYCLE_TRANSITION: AttributeValue.string(transition),
                }))
            run_start = i
        traces.append(Trace(dict(trace.attributes), events))
    return EventLog(
        attributes=dict(annotated.attributes),
        extensions={"Concept", "Time", "Lifecycle"},
        classifiers={"Activity": (CONCEPT_NAME,)},
        global_trace_attributes=dict(annotated.global_trace_attributes),
        global_event_attributes={
            CONCEPT_NAME: AttributeValue.string(""),
            TIME_TIMESTAMP: AttributeValue.date(
                datetime(1970, 1, 1, tzinfo=timezone.utc)
            ),
            LIFECYCLE_TRANSITION: AttributeValue.string(""),
        },
        traces=traces,
    )


def _model_payload(model: CrfModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "l1_coefficient": model.l1_coefficient,
        "weights": [float(w) for w in model.weights],
        "catalog": model.catalog.to_dict(),
    }


def save_model(model: CrfModel, sink: str | Path | IO[str]) -> None:
    """Write a model to JSON. Deterministic for a fixed model; reloading
    reproduces bit-identical predictions."""
    text = json.dumps(_model_payload(model), sort_keys=True, separators=(",", ":"))
    if isinstance(sink, (str, Path)):
        Path(sink).write_text(text)
    else:
        sink.write(text)


def load_model(source: str | Path | IO[str]) -> CrfModel:
    """Load a model written by :func:`save_model`.

    Raises :class:`ModelIOError` on corruption or version mismatch; a
    failed load never yields a partial model.
    """
    if isinstance(source, (str, Path)):
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ModelIOError(f"cannot read model file: {exc}") from exc
    else:
        text = source.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelIOError(f"corrupt model file: {exc}") from exc
    if not isinstance(data, dict) or data.get("format") != MODEL_FORMAT:
        raise ModelIOError("not a recognizable model file")
    if data.get("version") != MODEL_VERSION:
        raise ModelIOError(
            f"unsupported model version {data.get('version')!r}, "
            f"expected {MODEL_VERSION}"
        )
    try:
        catalog = FeatureCatalog.from_dict(data["catalog"])
        weights = np.asarray(data["weights"], dtype=float)
        model = CrfModel(
            catalog=catalog,
            weights=weights,
            l1_coefficient=data["l1_coefficient"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelIOError(f"malformed model payload: {exc}") from exc
    return model
