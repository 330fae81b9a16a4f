"""Command-line entry point wiring the pipeline: generate synthetic logs,
convert sensor data, train, annotate, collapse, and evaluate.

Configuration is a plain ``key = value`` file; command-line flags override
file values. Summaries go to stdout, warnings to stderr, artifacts to
files. Every command is deterministic given its inputs and seeds.
"""

from __future__ import annotations

import sys
from datetime import time
from pathlib import Path

import click

from . import abstraction, evaluation, petri, xes
from .features import CatalogConfig
from .owlqn import OwlqnConfig

CONFIG_KEYS = {
    "process", "high_net", "subprocesses", "traces", "seed", "delay_mean",
    "stop_probability", "l1", "ngrams", "kmax", "alpha", "views", "folds",
    "similarity_mode", "max_iterations",
}


def _read_config(path: str | None) -> dict[str, str]:
    if path is None:
        return {}
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise click.ClickException(f"{path}:{lineno}: expected 'key = value'")
        key = key.strip()
        if key not in CONFIG_KEYS:
            raise click.ClickException(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = value.strip()
    return values


def _merged(config_path: str | None, **overrides: object) -> dict[str, str]:
    values = _read_config(config_path)
    for key, value in overrides.items():
        if value is not None:
            values[key] = str(value)
    return values


def _parse_ints(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.replace(",", " ").split())


def _catalog_config(values: dict[str, str]) -> CatalogConfig:
    kwargs: dict = {}
    if "ngrams" in values:
        kwargs["ngram_sizes"] = _parse_ints(values["ngrams"])
    if "views" in values:
        views = tuple(v for v in values["views"].replace(",", " ").split())
        kwargs["time_views"] = views
    if "alpha" in values:
        kwargs["smoothing_alpha"] = float(values["alpha"])
    if "kmax" in values:
        kwargs["gmm_max_components"] = int(values["kmax"])
    if "seed" in values:
        kwargs["gmm_seed"] = int(values["seed"])
    try:
        return CatalogConfig(**kwargs)
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc


def _abstraction_config(values: dict[str, str]) -> abstraction.AbstractionConfig:
    optimizer = OwlqnConfig(
        max_iterations=int(values.get("max_iterations", 500)),
    )
    return abstraction.AbstractionConfig(
        catalog=_catalog_config(values),
        l1_coefficient=float(values.get("l1", 0.1)),
        optimizer=optimizer,
    )


def _load_process(values: dict[str, str]) -> petri.HierarchicalProcess:
    name = values.get("process", "medicine-eating")
    if name == "medicine-eating":
        return petri.medicine_eating_process()
    if name != "from-files":
        raise click.ClickException(
            f"unknown process {name!r}; use 'medicine-eating' or 'from-files' "
            "with high_net= and subprocesses="
        )
    if "high_net" not in values or "subprocesses" not in values:
        raise click.ClickException(
            "process = from-files needs high_net= and subprocesses= entries"
        )
    try:
        high = petri.load_net(values["high_net"])
        submap = {}
        for entry in values["subprocesses"].split(";"):
            label, sep, net_path = entry.partition("=")
            if not sep:
                raise click.ClickException(
                    f"bad subprocesses entry {entry!r}; expected 'label=path'"
                )
            submap[label.strip()] = petri.load_net(net_path.strip())
        return petri.HierarchicalProcess(high, submap)
    except (OSError, petri.PetriNetError) as exc:
        raise click.ClickException(str(exc)) from exc


def _write(path: str, data: bytes) -> None:
    Path(path).write_bytes(data)


def _load_log(path: str) -> xes.EventLog:
    try:
        return xes.parse_xes(Path(path))
    except (OSError, xes.XesError) as exc:
        raise click.ClickException(f"{path}: {exc}") from exc


def _emit_diagnostics(diagnostics: list[str]) -> None:
    for message in dict.fromkeys(diagnostics):
        click.echo(f"warning: {message}", err=True)


@click.group()
def main() -> None:
    """Supervised abstraction of low-level event logs."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--output", "-o", required=True, type=click.Path())
@click.option("--traces", type=int, default=None, help="Number of traces.")
@click.option("--seed", type=int, default=None)
def generate(config_path: str | None, output: str, traces: int | None, seed: int | None) -> None:
    """Generate an annotated low-level XES log from a hierarchical process."""
    values = _merged(config_path, traces=traces, seed=seed)
    proc = _load_process(values)
    n = int(values.get("traces", 100))
    try:
        log = petri.generate_annotated_log(
            proc,
            num_traces=n,
            seed=int(values.get("seed", 0)),
            timestamp_model=petri.ExponentialDelays(float(values.get("delay_mean", 60.0))),
            stop_probability=float(values.get("stop_probability", 0.5)),
        )
    except petri.PetriNetError as exc:
        raise click.ClickException(str(exc)) from exc
    _write(output, xes.serialize_xes(log))
    click.echo(f"wrote {len(log.traces)} traces, {log.event_count()} events to {output}")


@main.command()
@click.argument("sensor_csv", type=click.Path(exists=True))
@click.argument("output", type=click.Path())
@click.option("--day-boundary", default="00:00", show_default=True,
              help="Clock time HH:MM at which a new case day starts.")
def convert(sensor_csv: str, output: str, day_boundary: str) -> None:
    """Convert a sensor change-point CSV (sensor,timestamp,value) to XES."""
    try:
        boundary = time.fromisoformat(day_boundary)
    except ValueError as exc:
        raise click.ClickException(f"bad day boundary {day_boundary!r}") from exc
    diagnostics: list[str] = []
    try:
        series = xes.read_sensor_csv(sensor_csv)
        log = xes.sensor_series_to_log(series, boundary, diagnostics)
    except xes.XesError as exc:
        raise click.ClickException(str(exc)) from exc
    _emit_diagnostics(diagnostics)
    _write(output, xes.serialize_xes(log))
    click.echo(f"wrote {len(log.traces)} traces, {log.event_count()} events to {output}")


@main.command()
@click.argument("log_path", type=click.Path(exists=True))
@click.argument("model_path", type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--l1", type=float, default=None, help="L1 regularization coefficient.")
@click.option("--ngrams", default=None, help="Comma-separated n-gram sizes.")
@click.option("--kmax", type=int, default=None, help="Maximum mixture components.")
@click.option("--seed", type=int, default=None, help="Seed for sub-model fits.")
def train(log_path: str, model_path: str, config_path: str | None,
          l1: float | None, ngrams: str | None, kmax: int | None, seed: int | None) -> None:
    """Train an abstraction model on a fully annotated XES log."""
    values = _merged(config_path, l1=l1, ngrams=ngrams, kmax=kmax, seed=seed)
    log = _load_log(log_path)
    diagnostics: list[str] = []
    from .features import TrainingError

    try:
        model = abstraction.fit(log, _abstraction_config(values), diagnostics)
    except TrainingError as exc:
        raise click.ClickException(str(exc)) from exc
    _emit_diagnostics(diagnostics)
    abstraction.save_model(model, model_path)
    total = len(model.weights)
    nonzero = model.nonzero_weight_count
    assert model.training is not None
    click.echo(
        f"trained on {len(log.traces)} traces: {total} features, "
        f"{nonzero} nonzero weights ({100.0 * nonzero / total:.1f}% dense), "
        f"final objective {model.training.objective:.6f}"
    )


@main.command()
@click.argument("model_path", type=click.Path(exists=True))
@click.argument("log_path", type=click.Path(exists=True))
@click.argument("output", type=click.Path())
@click.option("--collapse", "do_collapse", is_flag=True,
              help="Write the collapsed high-level start/complete log.")
def annotate(model_path: str, log_path: str, output: str, do_collapse: bool) -> None:
    """Annotate a low-level XES log with predicted high-level labels."""
    try:
        model = abstraction.load_model(model_path)
    except abstraction.ModelIOError as exc:
        raise click.ClickException(str(exc)) from exc
    log = _load_log(log_path)
    diagnostics: list[str] = []
    annotated = abstraction.annotate(model, log, diagnostics)
    result = abstraction.collapse(annotated) if do_collapse else annotated
    _emit_diagnostics(diagnostics)
    _write(output, xes.serialize_xes(result))
    click.echo(f"wrote {len(result.traces)} traces, {result.event_count()} events to {output}")


@main.command()
@click.argument("log_path", type=click.Path(exists=True))
@click.option("--protocol", type=click.Choice(["loocv", "kfold"]), required=True)
@click.option("--folds", type=int, default=None, help="Fold count for kfold.")
@click.option("--seed", type=int, default=None, help="Shuffle seed for kfold.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--l1", type=float, default=None)
@click.option("--ngrams", default=None)
@click.option("--kmax", type=int, default=None)
@click.option("--similarity-mode", type=click.Choice(["events", "runs"]), default=None)
@click.option("--report", "report_path", type=click.Path(), default=None,
              help="Write the JSON report here.")
def evaluate(log_path: str, protocol: str, folds: int | None, seed: int | None,
             config_path: str | None, l1: float | None, ngrams: str | None,
             kmax: int | None, similarity_mode: str | None, report_path: str | None) -> None:
    """Cross-validate abstraction quality on an annotated XES log."""
    values = _merged(
        config_path, l1=l1, ngrams=ngrams, kmax=kmax, folds=folds,
        seed=seed, similarity_mode=similarity_mode,
    )
    log = _load_log(log_path)
    config = evaluation.EvalConfig(
        abstraction=_abstraction_config(values),
        similarity_on=values.get("similarity_mode", "events"),
    )
    try:
        if protocol == "loocv":
            report = evaluation.leave_one_trace_out(log, config)
        else:
            report = evaluation.k_fold(
                log,
                k=int(values.get("folds", 10)),
                seed=int(values.get("seed", 0)),
                config=config,
            )
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    _emit_diagnostics(report.diagnostics)
    if report_path is not None:
        Path(report_path).write_text(report.to_json())
    click.echo(report.to_text())


if __name__ == "__main__":
    sys.exit(main())
