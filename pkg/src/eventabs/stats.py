"""Statistical estimators behind the feature layer: smoothed multinoulli
tables over discrete contexts, univariate Gaussian mixtures fitted by EM,
and BIC-based selection of the mixture size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "EstimationError",
    "MultinoulliTable",
    "Gmm",
    "multinoulli_fit",
    "gmm_fit_em",
    "gmm_select_bic",
    "gmm_density",
    "gmm_log_density",
]

_LOG_2PI = math.log(2.0 * math.pi)


class EstimationError(Exception):
    """An estimator received data it cannot be fitted on."""


@dataclass(frozen=True)
class MultinoulliTable:
    """Per-context categorical distributions over a label alphabet, with
    additive smoothing.

    ``probability(ctx, l)`` is ``(count(ctx, l) + alpha) /
    (count(ctx) + alpha * |labels|)``; contexts never observed fall back
    to the uniform distribution.
    """

    arity: int
    labels: tuple[str, ...]
    alpha: float
    counts: Mapping[tuple[str, ...], Mapping[str, int]]
    context_totals: Mapping[tuple[str, ...], int]

    def probability(self, context: tuple[str, ...], label: str) -> float:
        if len(context) != self.arity:
            raise ValueError(
                f"context arity {len(context)} does not match table arity {self.arity}"
            )
        per_label = self.counts.get(context)
        if per_label is None:
            return 1.0 / len(self.labels)
        total = self.context_totals[context]
        denom = total + self.alpha * len(self.labels)
        if denom == 0.0:
            return 1.0 / len(self.labels)
        return (per_label.get(label, 0) + self.alpha) / denom

    def distribution(self, context: tuple[str, ...]) -> dict[str, float]:
        return {l: self.probability(context, l) for l in self.labels}

    def to_dict(self) -> dict:
        return {
            "arity": self.arity,
            "labels": list(self.labels),
            "alpha": self.alpha,
            "counts": [
                [list(ctx), {l: c for l, c in sorted(per_label.items())}]
                for ctx, per_label in sorted(self.counts.items())
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MultinoulliTable":
        counts = {
            tuple(ctx): dict(per_label) for ctx, per_label in data["counts"]
        }
        totals = {ctx: sum(per_label.values()) for ctx, per_label in counts.items()}
        return cls(
            arity=data["arity"],
            labels=tuple(data["labels"]),
            alpha=data["alpha"],
            counts=counts,
            context_totals=totals,
        )


def multinoulli_fit(
    observations: Iterable[tuple[tuple[str, ...], str]],
    alpha: float,
    labels: Iterable[str] | None = None,
) -> MultinoulliTable:
    """Estimate a smoothed multinoulli table from (context, label) pairs.

    The label alphabet defaults to the labels seen in the observations;
    pass ``labels`` explicitly to smooth over a larger alphabet.
    """
    if alpha < 0:
        raise EstimationError("smoothing alpha must be non-negative")
    counts: dict[tuple[str, ...], dict[str, int]] = {}
    totals: dict[tuple[str, ...], int] = {}
    seen_labels: set[str] = set()
    arity: int | None = None
    for context, label in observations:
        context = tuple(context)
        if arity is None:
            arity = len(context)
        elif len(context) != arity:
            raise EstimationError(
                f"mixed context arities: {arity} and {len(context)}"
            )
        per_label = counts.setdefault(context, {})
        per_label[label] = per_label.get(label, 0) + 1
        totals[context] = totals.get(context, 0) + 1
        seen_labels.add(label)
    if arity is None:
        raise EstimationError("cannot fit a multinoulli table on no observations")
    alphabet = tuple(sorted(labels)) if labels is not None else tuple(sorted(seen_labels))
    if not set(seen_labels) <= set(alphabet):
        raise EstimationError("observed labels outside the declared alphabet")
    return MultinoulliTable(
        arity=arity,
        labels=alphabet,
        alpha=float(alpha),
        counts=counts,
        context_totals=totals,
    )


@dataclass(frozen=True)
class Gmm:
    """A univariate Gaussian mixture: positive weights summing to one,
    component means, and floored variances.
    """

    weights: tuple[float, ...]
    means: tuple[float, ...]
    variances: tuple[float, ...]
    variance_floor: float
    log_likelihood: float = math.nan
    ll_trajectory: tuple[float, ...] = ()
    bic: float = math.nan
    warnings: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        k = len(self.weights)
        if k == 0 or len(self.means) != k or len(self.variances) != k:
            raise EstimationError("mixture parameter lengths disagree")
        if any(w <= 0 for w in self.weights):
            raise EstimationError("mixture weights must be positive")
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise EstimationError("mixture weights must sum to 1")
        if any(v < self.variance_floor * (1 - 1e-12) for v in self.variances):
            raise EstimationError("variance below floor")

    @property
    def n_components(self) -> int:
        return len(self.weights)

    def to_dict(self) -> dict:
        return {
            "weights": list(self.weights),
            "means": list(self.means),
            "variances": list(self.variances),
            "variance_floor": self.variance_floor,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Gmm":
        return cls(
            weights=tuple(data["weights"]),
            means=tuple(data["means"]),
            variances=tuple(data["variances"]),
            variance_floor=data["variance_floor"],
        )


def _component_log_pdf(x: np.ndarray, mean: float, var: float) -> np.ndarray:
    return -0.5 * (_LOG_2PI + math.log(var) + (x - mean) ** 2 / var)


def gmm_log_density(model: Gmm, x: float | np.ndarray) -> float | np.ndarray:
    """Log of the mixture density at ``x`` (scalar or array)."""
    xs = np.asarray(x, dtype=float)
    scores = np.stack([
        math.log(w) + _component_log_pdf(xs, m, v)
        for w, m, v in zip(model.weights, model.means, model.variances)
    ])
    top = scores.max(axis=0)
    out = top + np.log(np.exp(scores - top).sum(axis=0))
    return float(out) if np.isscalar(x) or xs.ndim == 0 else out


def gmm_density(model: Gmm, x: float | np.ndarray) -> float | np.ndarray:
    """Mixture density at ``x``; integrates to one over the real line."""
    return np.exp(gmm_log_density(model, x))


def _kmeanspp_centers(xs: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [xs[rng.integers(len(xs))]]
    for _ in range(1, k):
        d2 = np.min((xs[:, None] - np.asarray(centers)[None, :]) ** 2, axis=1)
        total = d2.sum()
        if total <= 0.0:
            centers.append(xs[rng.integers(len(xs))])
        else:
            centers.append(xs[rng.choice(len(xs), p=d2 / total)])
    return np.asarray(centers, dtype=float)


def gmm_fit_em(
    samples: Sequence[float],
    k: int,
    seed: int = 0,
    max_iters: int = 200,
    tol: float = 1e-8,
) -> Gmm:
    """Fit a k-component univariate mixture by EM.

    Initialization is k-means++-style seeding of the means with uniform
    weights and the global variance; deterministic for a fixed seed. The
    per-iteration log-likelihood trajectory is recorded and non-decreasing.
    Variances are clamped to a floor of 1e-6 of the sample variance
    (absolute floor 1e-9); clamping is recorded as a warning.
    """
    xs = np.asarray(list(samples), dtype=float)
    n = len(xs)
    if k < 1:
        raise EstimationError("k must be at least 1")
    if k > n:
        raise EstimationError(f"cannot fit {k} components on {n} samples")
    if not np.all(np.isfinite(xs)):
        raise EstimationError("samples must be finite")

    sample_var = float(np.var(xs))
    floor = max(1e-6 * sample_var, 1e-9)
    rng = np.random.default_rng(seed)

    means = _kmeanspp_centers(xs, k, rng)
    variances = np.full(k, max(sample_var, floor))
    weights = np.full(k, 1.0 / k)

    warnings: list[str] = []
    trajectory: list[float] = []

    def log_resp() -> tuple[np.ndarray, float]:
        scores = np.stack([
            np.log(weights[j]) + _component_log_pdf(xs, means[j], variances[j])
            for j in range(k)
        ], axis=1)  # (n, k)
        top = scores.max(axis=1, keepdims=True)
        log_norm = top[:, 0] + np.log(np.exp(scores - top).sum(axis=1))
        return scores - log_norm[:, None], float(log_norm.sum())

    ll_prev = -math.inf
    for _ in range(max_iters):
        log_r, ll = log_resp()
        trajectory.append(ll)
        if ll - ll_prev <= tol * (1.0 + abs(ll)) and len(trajectory) > 1:
            ll_prev = ll
            break
        ll_prev = ll
        resp = np.exp(log_r)
        mass = resp.sum(axis=0)
        degenerate = mass < 1e-12
        if degenerate.any():
            warnings.append("degenerate cluster: responsibility mass vanished")
            mass = np.where(degenerate, 1e-12, mass)
        weights = np.maximum(mass / mass.sum(), 1e-300)
        weights = weights / weights.sum()
        means = np.where(degenerate, means, (resp * xs[:, None]).sum(axis=0) / mass)
        new_var = (resp * (xs[:, None] - means[None, :]) ** 2).sum(axis=0) / mass
        if np.any(new_var < floor):
            warnings.append("variance clamped to floor")
        variances = np.maximum(new_var, floor)

    _, ll_final = log_resp()
    trajectory.append(ll_final)

    return Gmm(
        weights=tuple(float(w) for w in weights),
        means=tuple(float(m) for m in means),
        variances=tuple(float(v) for v in variances),
        variance_floor=floor,
        log_likelihood=ll_final,
        ll_trajectory=tuple(trajectory),
        warnings=tuple(dict.fromkeys(warnings)),
    )


def gmm_select_bic(
    samples: Sequence[float],
    k_max: int,
    seed: int = 0,
    max_iters: int = 200,
    tol: float = 1e-8,
) -> Gmm:
    """Fit mixtures with 1..min(k_max, n) components and return the one
    minimizing BIC = -2 log L + p ln n with p = 3k - 1 free parameters.

    Ties keep the smaller k.
    """
    if k_max < 1:
        raise EstimationError("k_max must be at least 1")
    n = len(samples)
    if n == 0:
        raise EstimationError("cannot select a mixture on no samples")
    best: Gmm | None = None
    for k in range(1, min(k_max, n) + 1):
        fit = gmm_fit_em(samples, k, seed=seed + k, max_iters=max_iters, tol=tol)
        p = 3 * k - 1
        bic = -2.0 * fit.log_likelihood + p * math.log(n)
        fit = replace(fit, bic=bic)
        if best is None or bic < best.bic:
            best = fit
    assert best is not None
    return best
