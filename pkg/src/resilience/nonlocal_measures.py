"""Basin sampling and the nonlocal resilience estimators.

Every sampled initial condition contributes one row to a
:class:`BasinAccumulator`: its basin label, its convergence time and its
distance to each attractor.  All measures are read-only reductions over
those rows, so they can be recomputed from a saved accumulator without
integrating anything.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from joblib import Parallel, delayed

from .dynsys import IntegratorConfig, VectorField
from .errors import EmptyBasin, UnknownAttractor
from .mapping import DIVERGENCE, UNRESOLVED, AttractorStore, map_ics_proximity

# rows per task; fixed so the work split never depends on the worker count
CHUNK = 2000


class WeightFunction:
    """Density of the initial-condition distribution relative to uniform sampling on the box."""

    def __init__(self, density: Callable[[np.ndarray], np.ndarray] | None = None):
        self.density = density

    @property
    def is_uniform(self) -> bool:
        return self.density is None

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.density is None:
            return np.ones(len(X))
        w = np.asarray(self.density(X), dtype=float).reshape(len(X))
        if (w < 0).any() or not np.isfinite(w).all():
            raise ValueError("weights must be finite and non-negative")
        return w


UNIFORM = WeightFunction()


class UniformBoxSampler:
    """Uniform initial conditions on an axis-aligned box."""

    def __init__(self, lower: Sequence[float], upper: Sequence[float]):
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if self.lower.shape != self.upper.shape or not (self.lower < self.upper).all():
            raise ValueError("sampling box needs lower < upper in every dimension")

    def __call__(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.lower + (self.upper - self.lower) * rng.random((n, len(self.lower)))


@dataclass
class BasinAccumulator:
    ics: np.ndarray  # (N, n)
    labels: np.ndarray  # (N,)
    taus: np.ndarray  # (N,)
    dists: np.ndarray  # (N, J)
    weights: np.ndarray  # (N,)
    ids: list[int]  # attractor id of each dists column

    def __post_init__(self):
        self.ics = np.atleast_2d(np.asarray(self.ics, dtype=float))
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        self.taus = np.asarray(self.taus, dtype=float).reshape(-1)
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        self.ids = [int(i) for i in self.ids]
        self.dists = np.asarray(self.dists, dtype=float).reshape(len(self.labels), len(self.ids))
        N = len(self.labels)
        if not (len(self.ics) == len(self.taus) == len(self.weights) == N):
            raise ValueError("accumulator columns have inconsistent lengths")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def resolved(self) -> np.ndarray:
        return self.labels != UNRESOLVED

    @property
    def unresolved_fraction(self) -> float:
        return float((~self.resolved).mean()) if len(self) else 0.0

    def column(self, j: int) -> np.ndarray:
        try:
            return self.dists[:, self.ids.index(j)]
        except ValueError:
            raise UnknownAttractor(f"no attractor with id {j}") from None

    def _require(self, j: int, allow_divergence: bool = False) -> None:
        if not (j in self.ids or (allow_divergence and j == DIVERGENCE)):
            raise UnknownAttractor(f"no attractor with id {j}")

    @classmethod
    def concatenate(cls, parts: Sequence["BasinAccumulator"]) -> "BasinAccumulator":
        ids = parts[0].ids
        if any(p.ids != ids for p in parts):
            raise ValueError("cannot merge accumulators built against different stores")
        return cls(
            ics=np.vstack([p.ics for p in parts]),
            labels=np.concatenate([p.labels for p in parts]),
            taus=np.concatenate([p.taus for p in parts]),
            dists=np.vstack([p.dists for p in parts]),
            weights=np.concatenate([p.weights for p in parts]),
            ids=ids,
        )

    def save(self, path: str | Path) -> None:
        """Columnar text dump, one row per initial condition."""
        n = self.ics.shape[1]
        names = [f"x{k + 1}" for k in range(n)] + ["label", "tau"] + [f"d_{j}" for j in self.ids] + ["weight"]
        table = np.column_stack([self.ics, self.labels, self.taus, self.dists, self.weights])
        np.savetxt(path, table, fmt="%.17g", delimiter=",", header=",".join(names), comments="")

    @classmethod
    def load(cls, path: str | Path) -> "BasinAccumulator":
        with open(path, encoding="utf-8") as fh:
            names = fh.readline().strip().split(",")
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        n = names.index("label")
        ids = [int(c[2:]) for c in names if c.startswith("d_")]
        return cls(
            ics=table[:, :n],
            labels=table[:, n].astype(np.int64),
            taus=table[:, n + 1],
            dists=table[:, n + 2 : n + 2 + len(ids)],
            weights=table[:, -1],
            ids=ids,
        )


def _map_chunk(field, store, ics, epsilon, cfg, weights):
    res = map_ics_proximity(field, ics, store, epsilon, cfg, weights)
    return res.labels, res.taus, res.dists


def accumulate(
    field: VectorField,
    store: AttractorStore,
    ics: np.ndarray,
    epsilon: float,
    cfg: IntegratorConfig,
    weights: WeightFunction = UNIFORM,
    workers: int = 1,
    distance_weights: Sequence[float] | None = None,
    chunk: int = CHUNK,
) -> BasinAccumulator:
    """Map every row of ``ics`` with the proximity mapper and record the results.

    Rows are processed in fixed chunks and reassembled in input order, so the
    accumulator does not depend on ``workers``.
    """
    ics = np.atleast_2d(np.asarray(ics, dtype=float))
    chunks = [ics[k : k + chunk] for k in range(0, len(ics), chunk)] or [ics]
    task = delayed(_map_chunk)
    if workers > 1 and len(chunks) > 1:
        parts = Parallel(n_jobs=workers)(task(field, store, c, epsilon, cfg, distance_weights) for c in chunks)
    else:
        parts = [_map_chunk(field, store, c, epsilon, cfg, distance_weights) for c in chunks]
    return BasinAccumulator(
        ics=ics,
        labels=np.concatenate([p[0] for p in parts]),
        taus=np.concatenate([p[1] for p in parts]),
        dists=np.vstack([p[2] for p in parts]),
        weights=weights(ics),
        ids=store.ids,
    )


def weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    """Median of ``values`` under non-negative ``weights``.

    Equal weights give the ordinary median; otherwise the smallest value at
    which the cumulative weight reaches half the total.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    keep = weights > 0
    values, weights = values[keep], weights[keep]
    if len(values) == 0:
        raise EmptyBasin("median of an empty sample")
    if (weights == weights[0]).all():
        return float(np.median(values))
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    k = int(np.searchsorted(cum, 0.5 * cum[-1]))
    return float(values[order][k])


def _fraction(acc: BasinAccumulator, mask: np.ndarray) -> float:
    n = int(acc.resolved.sum())
    if n == 0:
        return 0.0
    return math.fsum(acc.weights[mask & acc.resolved].tolist()) / n


def basin_stability(acc: BasinAccumulator, j: int) -> float:
    acc._require(j, allow_divergence=True)
    return _fraction(acc, acc.labels == j)


def finite_time_basin_stability(acc: BasinAccumulator, j: int, T: float) -> float:
    acc._require(j, allow_divergence=True)
    return _fraction(acc, (acc.labels == j) & (acc.taus <= T))


def minimal_critical_shock(acc: BasinAccumulator, j: int) -> float:
    d = acc.column(j)
    mask = acc.resolved & (acc.weights > 0) & (acc.labels != j)
    return float(d[mask].min()) if mask.any() else math.inf


def _basin(acc: BasinAccumulator, j: int) -> np.ndarray:
    acc._require(j)
    mask = (acc.labels == j) & (acc.weights > 0)
    if not mask.any():
        raise EmptyBasin(f"no sampled initial condition converges to attractor {j}")
    return mask


def maximal_noncritical_shock(acc: BasinAccumulator, j: int) -> float:
    return float(acc.column(j)[_basin(acc, j)].max())


def median_convergence_time(acc: BasinAccumulator, j: int) -> float:
    mask = _basin(acc, j)
    return weighted_median(acc.taus[mask], acc.weights[mask])


def convergence_paces(acc: BasinAccumulator, j: int) -> np.ndarray:
    """``tau / d`` for every row, zero where the distance is zero."""
    d = acc.column(j)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        return np.where(d > 0, acc.taus / np.where(d > 0, d, 1.0), 0.0)


def median_convergence_pace(acc: BasinAccumulator, j: int) -> float:
    mask = _basin(acc, j)
    return weighted_median(convergence_paces(acc, j)[mask], acc.weights[mask])


@dataclass(frozen=True)
class NonlocalMeasures:
    """Basin-based measures of one attractor; the basin-conditional ones are
    ``None`` when no sampled initial condition converged to it."""

    s_min: float
    s_max: float | None
    S: float
    med_tau: float | None
    med_beta: float | None
    S_ft: float


def nonlocal_measures(acc: BasinAccumulator, j: int, T: float) -> NonlocalMeasures:
    try:
        s_max = maximal_noncritical_shock(acc, j)
        med_tau = median_convergence_time(acc, j)
        med_beta = median_convergence_pace(acc, j)
    except EmptyBasin:
        s_max = med_tau = med_beta = None
    return NonlocalMeasures(
        s_min=minimal_critical_shock(acc, j),
        s_max=s_max,
        S=basin_stability(acc, j),
        med_tau=med_tau,
        med_beta=med_beta,
        S_ft=finite_time_basin_stability(acc, j, T),
    )
