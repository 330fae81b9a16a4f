"""Feature catalog construction and evaluation.

A catalog turns whichever standard extensions a log possesses into
real-valued observation features, each attached to one candidate label:

* ``bias(l)``: constant 1, realizing a per-label intercept.
* ``concept_ngram(n, l)``: multinoulli probability of label ``l`` given the
  last ``n`` low-level concept names.
* ``org_ngram(n, o, l)``: the same over ``org:resource``/``role``/``group``.
* ``time_view(v, l)``: responsibility of label ``l`` at the event's elapsed
  time within the day, the week, or the month, under per-label mixtures.
* ``lifecycle_duration(c, l)``: responsibility of ``l`` given the elapsed
  time since the FIFO-matched previous lifecycle step ``c`` of the same
  activity.

Missing data degrades to the neutral value 1/|labels|, never to zero, so
per-family values always form a distribution over labels at each position.
Label-transition indicator features are owned by the CRF layer; the
catalog only fixes their index block after the observation features.
"""

from __future__ import annotations

import calendar
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Mapping, Sequence

import numpy as np

from .stats import Gmm, MultinoulliTable, gmm_log_density, gmm_select_bic, multinoulli_fit
from .xes import CONCEPT_NAME, Event, EventLog, Trace

__all__ = [
    "BOT",
    "MISSING",
    "TIME_VIEWS",
    "TrainingError",
    "CatalogConfig",
    "FeatureDef",
    "LabelGmmBank",
    "FeatureCatalog",
    "build_catalog",
    "evaluate_observations",
    "pair_lifecycle_steps",
    "view_coordinate",
]

BOT = "__BOT__"          # begin-of-trace padding symbol for n-gram contexts
MISSING = "__MISSING__"  # placeholder for an absent attribute inside a context

TIME_VIEWS = ("day", "week", "month")

ORG_KINDS = ("resource", "role", "group")

# Linear order of the standard transactional lifecycle; the predecessor of a
# step is the nearest earlier step actually observed in the log.
_LIFECYCLE_CHAIN = ("schedule", "assign", "start", "suspend", "resume", "complete")


class TrainingError(Exception):
    """The training input violates the annotation contract."""


@dataclass(frozen=True)
class CatalogConfig:
    ngram_sizes: tuple[int, ...] = (1, 2, 3)
    time_views: tuple[str, ...] = TIME_VIEWS
    smoothing_alpha: float = 1.0
    gmm_max_components: int = 5
    gmm_seed: int = 0

    def __post_init__(self) -> None:
        if any(n < 1 for n in self.ngram_sizes):
            raise ValueError("n-gram sizes must be at least 1")
        unknown = set(self.time_views) - set(TIME_VIEWS)
        if unknown:
            raise ValueError(f"unknown time views: {sorted(unknown)}")
        if self.smoothing_alpha < 0:
            raise ValueError("smoothing alpha must be non-negative")
        if self.gmm_max_components < 1:
            raise ValueError("gmm_max_components must be at least 1")

    def to_dict(self) -> dict:
        return {
            "ngram_sizes": list(self.ngram_sizes),
            "time_views": list(self.time_views),
            "smoothing_alpha": self.smoothing_alpha,
            "gmm_max_components": self.gmm_max_components,
            "gmm_seed": self.gmm_seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CatalogConfig":
        return cls(
            ngram_sizes=tuple(data["ngram_sizes"]),
            time_views=tuple(data["time_views"]),
            smoothing_alpha=data["smoothing_alpha"],
            gmm_max_components=data["gmm_max_components"],
            gmm_seed=data["gmm_seed"],
        )


@dataclass(frozen=True)
class FeatureDef:
    """One observation feature: a family instance attached to a label."""

    family: str       # bias | concept_ngram | org_ngram | time_view | lifecycle_duration
    label: str
    n: int = 0
    org: str = ""
    view: str = ""
    step: str = ""

    def describe(self) -> str:
        if self.family == "bias":
            return f"bias[{self.label}]"
        if self.family == "concept_ngram":
            return f"concept_{self.n}gram[{self.label}]"
        if self.family == "org_ngram":
            return f"org_{self.org}_{self.n}gram[{self.label}]"
        if self.family == "time_view":
            return f"time_{self.view}[{self.label}]"
        return f"duration_after_{self.step}[{self.label}]"

    def to_dict(self) -> dict:
        return {
            "family": self.family, "label": self.label, "n": self.n,
            "org": self.org, "view": self.view, "step": self.step,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureDef":
        return cls(**data)


@dataclass(frozen=True)
class LabelGmmBank:
    """Per-label mixtures over one scalar quantity, with empirical priors.

    ``responsibilities(x)`` returns the posterior over labels at ``x``,
    proportional to prior times mixture density; labels without a fitted
    mixture get zero mass, and if nothing carries mass the result is
    uniform.
    """

    labels: tuple[str, ...]
    gmms: Mapping[str, Gmm]
    log_priors: Mapping[str, float]

    def responsibilities(self, x: float) -> np.ndarray:
        scores = np.full(len(self.labels), -np.inf)
        for i, label in enumerate(self.labels):
            gmm = self.gmms.get(label)
            if gmm is not None:
                scores[i] = self.log_priors[label] + gmm_log_density(gmm, x)
        top = scores.max()
        if not np.isfinite(top):
            return np.full(len(self.labels), 1.0 / len(self.labels))
        weights = np.exp(scores - top)
        return weights / weights.sum()

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "gmms": {l: g.to_dict() for l, g in sorted(self.gmms.items())},
            "log_priors": {l: p for l, p in sorted(self.log_priors.items())},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "LabelGmmBank":
        return cls(
            labels=tuple(data["labels"]),
            gmms={l: Gmm.from_dict(g) for l, g in data["gmms"].items()},
            log_priors=dict(data["log_priors"]),
        )


@dataclass
class FeatureCatalog:
    """The indexed observation feature set plus its fitted sub-models.

    Feature indices are dense and stable: observation features first (in
    definition order), then the (|labels|+1) x |labels| label-transition
    block, previous label varying slowest with the begin-of-sequence row
    last. Identical between training and prediction by construction.
    """

    labels: tuple[str, ...]
    observation_features: tuple[FeatureDef, ...]
    config: CatalogConfig
    concept_tables: dict[int, MultinoulliTable] = field(default_factory=dict)
    org_tables: dict[tuple[int, str], MultinoulliTable] = field(default_factory=dict)
    time_models: dict[str, LabelGmmBank] = field(default_factory=dict)
    duration_models: dict[tuple[str, str], LabelGmmBank] = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("duplicate labels in alphabet")
        self.label_index = {l: i for i, l in enumerate(self.labels)}
        bad = [d for d in self.observation_features if d.label not in self.label_index]
        if bad:
            raise ValueError(f"feature attached to unknown label: {bad[0]}")

    @property
    def n_labels(self) -> int:
        return len(self.labels)

    @property
    def n_observation_features(self) -> int:
        return len(self.observation_features)

    @property
    def n_transition_features(self) -> int:
        return (self.n_labels + 1) * self.n_labels

    @property
    def n_features(self) -> int:
        return self.n_observation_features + self.n_transition_features

    def observation_label_indices(self) -> np.ndarray:
        return np.asarray(
            [self.label_index[d.label] for d in self.observation_features],
            dtype=np.intp,
        )

    def transition_feature_index(self, prev: int, cur: int) -> int:
        """Weight index of the transition indicator (previous, current);
        ``prev == n_labels`` is the begin-of-sequence row."""
        return self.n_observation_features + prev * self.n_labels + cur

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "config": self.config.to_dict(),
            "observation_features": [d.to_dict() for d in self.observation_features],
            "concept_tables": {str(n): t.to_dict() for n, t in sorted(self.concept_tables.items())},
            "org_tables": [
                [list(key), table.to_dict()]
                for key, table in sorted(self.org_tables.items())
            ],
            "time_models": {v: b.to_dict() for v, b in sorted(self.time_models.items())},
            "duration_models": [
                [list(key), bank.to_dict()]
                for key, bank in sorted(self.duration_models.items())
            ],
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureCatalog":
        return cls(
            labels=tuple(data["labels"]),
            observation_features=tuple(
                FeatureDef.from_dict(d) for d in data["observation_features"]
            ),
            config=CatalogConfig.from_dict(data["config"]),
            concept_tables={
                int(n): MultinoulliTable.from_dict(t)
                for n, t in data["concept_tables"].items()
            },
            org_tables={
                (int(key[0]), key[1]): MultinoulliTable.from_dict(t)
                for key, t in data["org_tables"]
            },
            time_models={
                v: LabelGmmBank.from_dict(b) for v, b in data["time_models"].items()
            },
            duration_models={
                (key[0], key[1]): LabelGmmBank.from_dict(b)
                for key, b in data["duration_models"]
            },
            notes=tuple(data["notes"]),
        )


# --- time coordinates --------------------------------------------------------

_SECONDS_PER_DAY = 86_400.0


def view_coordinate(view: str, ts: datetime) -> float:
    """Elapsed position of a UTC timestamp within the day, week, or month.

    Day and week are measured in seconds (periods 86400 and 604800);
    month is the elapsed fraction of the calendar month in [0, 1).
    """
    ts = ts.astimezone(timezone.utc)
    day_seconds = (
        ts.hour * 3600.0 + ts.minute * 60.0 + ts.second + ts.microsecond / 1e6
    )
    if view == "day":
        return day_seconds
    if view == "week":
        return ts.weekday() * _SECONDS_PER_DAY + day_seconds
    if view == "month":
        days_in_month = calendar.monthrange(ts.year, ts.month)[1]
        elapsed = (ts.day - 1) * _SECONDS_PER_DAY + day_seconds
        return elapsed / (days_in_month * _SECONDS_PER_DAY)
    raise ValueError(f"unknown time view {view!r}")


# --- lifecycle pairing -------------------------------------------------------


def _lifecycle_step(event: Event) -> str | None:
    step = event.lifecycle
    return step.lower() if step is not None else None


def pair_lifecycle_steps(
    trace: Trace, observed_steps: Iterable[str] | None = None
) -> list[int | None]:
    """Match each event to the event of its predecessor lifecycle step.

    Steps are matched FIFO per activity name: the i-th occurrence of a step
    consumes the i-th unconsumed occurrence of its predecessor step, so the
    first complete belongs to the first start. The predecessor of a step is
    the nearest earlier step of the standard transactional order that is
    actually observed (``observed_steps`` defaults to the steps in the
    trace). Returns, per event index, the matched predecessor's index or
    ``None``.
    """
    if observed_steps is None:
        observed = {
            s for ev in trace.events if (s := _lifecycle_step(ev)) is not None
        }
    else:
        observed = {s.lower() for s in observed_steps}
    predecessor: dict[str, str] = {}
    seen_earlier: list[str] = []
    for step in _LIFECYCLE_CHAIN:
        if seen_earlier and step in observed:
            predecessor[step] = seen_earlier[-1]
        if step in observed:
            seen_earlier.append(step)

    queues: dict[tuple[str, str], deque[int]] = {}
    matches: list[int | None] = []
    for i, event in enumerate(trace.events):
        step = _lifecycle_step(event)
        activity = event.name
        match: int | None = None
        if step is not None and activity is not None:
            pred = predecessor.get(step)
            if pred is not None:
                queue = queues.get((activity, pred))
                if queue:
                    match = queue.popleft()
            queues.setdefault((activity, step), deque()).append(i)
        matches.append(match)
    return matches


# --- catalog construction ----------------------------------------------------


def _symbol(event: Event, key: str) -> str:
    av = event.attributes.get(key)
    if av is None or av.kind != "string":
        return MISSING
    return av.value  # type: ignore[return-value]


def _ngram_context(symbols: Sequence[str], t: int, n: int) -> tuple[str, ...]:
    context = []
    for j in range(t - n + 1, t + 1):
        context.append(symbols[j] if j >= 0 else BOT)
    return tuple(context)


def _fit_bank(
    samples: dict[str, list[float]],
    labels: tuple[str, ...],
    k_max: int,
    seed: int,
) -> LabelGmmBank:
    total = sum(len(v) for v in samples.values())
    gmms: dict[str, Gmm] = {}
    log_priors: dict[str, float] = {}
    for offset, label in enumerate(sorted(samples)):
        xs = samples[label]
        if not xs:
            continue
        gmms[label] = gmm_select_bic(xs, k_max, seed=seed + 1000 * offset)
        log_priors[label] = float(np.log(len(xs) / total))
    return LabelGmmBank(labels=labels, gmms=gmms, log_priors=log_priors)


def build_catalog(
    training: EventLog,
    config: CatalogConfig = CatalogConfig(),
    diagnostics: list[str] | None = None,
) -> FeatureCatalog:
    """Fit the feature catalog on a fully annotated log.

    Only families whose required attributes occur in the log are included;
    skipped families are recorded in the catalog notes. Raises
    :class:`TrainingError` when any event lacks the label attribute.
    """
    offenders = [
        f"trace {trace.case_id!r} event {i}"
        for trace in training.traces
        for i, ev in enumerate(trace.events)
        if ev.label is None
    ]
    if offenders:
        raise TrainingError(
            "events without a label attribute: " + ", ".join(offenders[:10])
            + ("..." if len(offenders) > 10 else "")
        )
    events = [ev for trace in training.traces for ev in trace.events]
    if not events:
        raise TrainingError("no annotated events in the training log")

    labels = tuple(sorted({ev.label for ev in events}))  # type: ignore[arg-type]
    notes: list[str] = []

    has_concept = any(ev.name is not None for ev in events)
    has_time = any(ev.timestamp is not None for ev in events)
    has_org = {
        o: any(ev.org(o) is not None for ev in events) for o in ORG_KINDS
    }
    has_lifecycle = any(ev.lifecycle is not None for ev in events)

    defs: list[FeatureDef] = [FeatureDef("bias", l) for l in labels]
    concept_tables: dict[int, MultinoulliTable] = {}
    org_tables: dict[tuple[int, str], MultinoulliTable] = {}
    time_models: dict[str, LabelGmmBank] = {}
    duration_models: dict[tuple[str, str], LabelGmmBank] = {}

    def ngram_observations(key: str) -> dict[int, list[tuple[tuple[str, ...], str]]]:
        per_n: dict[int, list[tuple[tuple[str, ...], str]]] = {
            n: [] for n in sorted(config.ngram_sizes)
        }
        for trace in training.traces:
            symbols = [_symbol(ev, key) for ev in trace.events]
            for t, ev in enumerate(trace.events):
                for n in per_n:
                    per_n[n].append((_ngram_context(symbols, t, n), ev.label))  # type: ignore[arg-type]
        return per_n

    if has_concept:
        for n, obs in ngram_observations(CONCEPT_NAME).items():
            concept_tables[n] = multinoulli_fit(obs, config.smoothing_alpha, labels)
            defs.extend(FeatureDef("concept_ngram", l, n=n) for l in labels)
    else:
        notes.append("concept extension absent: concept_ngram features skipped")

    for o in ORG_KINDS:
        if has_org[o]:
            for n, obs in ngram_observations(f"org:{o}").items():
                org_tables[(n, o)] = multinoulli_fit(obs, config.smoothing_alpha, labels)
                defs.extend(FeatureDef("org_ngram", l, n=n, org=o) for l in labels)
        else:
            notes.append(f"org:{o} extension absent: org_ngram features skipped")

    if has_time:
        for view in config.time_views:
            samples: dict[str, list[float]] = {l: [] for l in labels}
            for ev in events:
                ts = ev.timestamp
                if ts is not None:
                    samples[ev.label].append(view_coordinate(view, ts))  # type: ignore[index]
            time_models[view] = _fit_bank(
                samples,
                labels,
                config.gmm_max_components,
                seed=config.gmm_seed + 7919 * TIME_VIEWS.index(view),
            )
            defs.extend(FeatureDef("time_view", l, view=view) for l in labels)
    else:
        notes.append("time extension absent: time_view features skipped")

    if has_lifecycle and has_time and has_concept:
        observed_steps = {
            s for ev in events if (s := _lifecycle_step(ev)) is not None
        }
        duration_samples: dict[tuple[str, str], dict[str, list[float]]] = {}
        for trace in training.traces:
            matches = pair_lifecycle_steps(trace, observed_steps)
            for i, ev in enumerate(trace.events):
                j = matches[i]
                if j is None:
                    continue
                prev = trace.events[j]
                if ev.timestamp is None or prev.timestamp is None:
                    continue
                key = (ev.name, _lifecycle_step(prev))
                duration_samples.setdefault(key, {l: [] for l in labels})[
                    ev.label
                ].append((ev.timestamp - prev.timestamp).total_seconds())
        for offset, key in enumerate(sorted(duration_samples)):
            duration_models[key] = _fit_bank(
                duration_samples[key],
                labels,
                config.gmm_max_components,
                seed=config.gmm_seed + 104_729 + 1009 * offset,
            )
        steps_with_models = tuple(sorted({step for _, step in duration_models}))
        for step in steps_with_models:
            defs.extend(FeatureDef("lifecycle_duration", l, step=step) for l in labels)
        if not duration_models:
            notes.append(
                "lifecycle extension present but no step pairs matched: "
                "lifecycle_duration features skipped"
            )
    elif not has_lifecycle:
        notes.append("lifecycle extension absent: lifecycle_duration features skipped")

    if diagnostics is not None:
        diagnostics.extend(notes)

    return FeatureCatalog(
        labels=labels,
        observation_features=tuple(defs),
        config=config,
        concept_tables=concept_tables,
        org_tables=org_tables,
        time_models=time_models,
        duration_models=duration_models,
        notes=tuple(notes),
    )


# --- evaluation ---------------------------------------------------------------


def evaluate_observations(
    catalog: FeatureCatalog,
    trace: Trace,
    diagnostics: list[str] | None = None,
) -> np.ndarray:
    """Evaluate every catalog observation feature at every trace position.

    Returns a float array of shape (len(trace.events), number of
    observation features). Pure: repeated calls agree exactly. Positions
    lacking the data a family needs receive the neutral value 1/|labels|.
    """
    events = trace.events
    T = len(events)
    L = catalog.n_labels
    neutral = 1.0 / L
    matrix = np.empty((T, catalog.n_observation_features), dtype=float)

    concept_symbols = [_symbol(ev, CONCEPT_NAME) for ev in events]
    org_symbols = {
        o: [_symbol(ev, f"org:{o}") for ev in events]
        for o in ORG_KINDS
        if any(d.family == "org_ngram" and d.org == o for d in catalog.observation_features)
    }
    time_resp: dict[str, list[np.ndarray | None]] = {}
    if catalog.time_models:
        timestamps = [ev.timestamp for ev in events]
        if diagnostics is not None:
            for t, ts in enumerate(timestamps):
                if ts is None:
                    diagnostics.append(
                        f"trace {trace.case_id!r} event {t}: no timestamp, "
                        "neutral time_view values used"
                    )
        for view, bank in catalog.time_models.items():
            time_resp[view] = [
                None if ts is None
                else bank.responsibilities(view_coordinate(view, ts))
                for ts in timestamps
            ]

    duration_resp: list[dict[str, np.ndarray] | None] = [None] * T
    if catalog.duration_models:
        matches = pair_lifecycle_steps(
            trace, {step for (_, step) in catalog.duration_models}
            | {s for ev in events if (s := _lifecycle_step(ev)) is not None},
        )
        for i, ev in enumerate(events):
            j = matches[i]
            if j is None:
                continue
            prev = events[j]
            if ev.timestamp is None or prev.timestamp is None:
                continue
            step = _lifecycle_step(prev)
            bank = catalog.duration_models.get((ev.name, step))
            if bank is None:
                continue
            dt = (ev.timestamp - prev.timestamp).total_seconds()
            duration_resp[i] = {step: bank.responsibilities(dt)}

    for k, d in enumerate(catalog.observation_features):
        li = catalog.label_index[d.label]
        if d.family == "bias":
            matrix[:, k] = 1.0
            continue
        if d.family == "concept_ngram":
            table = catalog.concept_tables[d.n]
            for t in range(T):
                if concept_symbols[t] == MISSING:
                    matrix[t, k] = neutral
                else:
                    matrix[t, k] = table.probability(
                        _ngram_context(concept_symbols, t, d.n), d.label
                    )
            continue
        if d.family == "org_ngram":
            table = catalog.org_tables[(d.n, d.org)]
            symbols = org_symbols[d.org]
            for t in range(T):
                if symbols[t] == MISSING:
                    matrix[t, k] = neutral
                else:
                    matrix[t, k] = table.probability(
                        _ngram_context(symbols, t, d.n), d.label
                    )
            continue
        if d.family == "time_view":
            per_event = time_resp[d.view]
            for t in range(T):
                resp = per_event[t]
                matrix[t, k] = neutral if resp is None else float(resp[li])
            continue
        # lifecycle_duration
        for t in range(T):
            resp_by_step = duration_resp[t]
            if resp_by_step is None or d.step not in resp_by_step:
                matrix[t, k] = neutral
            else:
                matrix[t, k] = float(resp_by_step[d.step][li])
    return matrix


def label_indices(catalog: FeatureCatalog, trace: Trace) -> np.ndarray:
    """Label index sequence of an annotated trace; raises on missing or
    out-of-alphabet labels."""
    out = np.empty(len(trace.events), dtype=np.intp)
    for i, ev in enumerate(trace.events):
        label = ev.label
        if label is None:
            raise TrainingError(
                f"trace {trace.case_id!r} event {i} has no label attribute"
            )
        li = catalog.label_index.get(label)
        if li is None:
            raise ValueError(
                f"label {label!r} is outside the model alphabet {catalog.labels}"
            )
        out[i] = li
    return out
