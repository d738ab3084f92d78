"""Global continuation: re-find attractors along a parameter curve, keep their
identities by matching, and evaluate every resilience measure per step."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .dynsys import IntegratorConfig, VectorField, max_lyapunov_batch
from .errors import NoAttractorsFound
from .local_measures import NOT_APPLICABLE, LocalMeasures, _NotApplicable, local_measures
from .mapping import AttractorStore, Grid, RecurrenceConfig, find_attractors
from .nonlocal_measures import UNIFORM, BasinAccumulator, NonlocalMeasures, WeightFunction, accumulate, basin_stability, nonlocal_measures

Sampler = Callable[[np.random.Generator, int], np.ndarray]

# independent random streams per step
_FIND_STREAM = 0
_MEASURE_STREAM = 1


def step_rng(seed: int, step: int, stream: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, step, stream)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(step), int(stream)])))


@dataclass(frozen=True)
class ParameterCurve:
    """Parameter assignments, one mapping ``parameter -> value`` per step."""

    steps: tuple[Mapping[int | str, float], ...]

    def __post_init__(self):
        steps = tuple(dict(s) for s in self.steps)
        if not steps:
            raise ValueError("a parameter curve needs at least one step")
        keys = set(steps[0])
        if any(set(s) != keys for s in steps):
            raise ValueError("every step must assign the same parameters")
        object.__setattr__(self, "steps", steps)

    @classmethod
    def sweep(cls, parameter: int | str, values: Sequence[float]) -> "ParameterCurve":
        return cls(tuple({parameter: float(v)} for v in values))

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def values(self, parameter: int | str | None = None) -> np.ndarray:
        """Value of ``parameter`` (default: the first assigned one) at every step."""
        key = next(iter(self.steps[0])) if parameter is None else parameter
        return np.array([s[key] for s in self.steps], dtype=float)


def set_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Smallest Euclidean distance between two point clouds."""
    small, large = (a, b) if len(a) <= len(b) else (b, a)
    return float(cKDTree(large).query(small)[0].min())


def match_attractors(prev: AttractorStore, new: AttractorStore, threshold: float = math.inf) -> dict[int, int]:
    """Greedy closest-first matching of ``new`` ids onto ``prev`` ids.

    Pairs farther apart than ``threshold`` stay unmatched; each id is used at
    most once on either side.
    """
    pairs = sorted(
        (set_distance(a.points, b.points), b.id, a.id) for a in prev for b in new
    )  # ties break on (new id, prev id)
    mapping: dict[int, int] = {}
    used: set[int] = set()
    for d, new_id, prev_id in pairs:
        if d > threshold or new_id in mapping or prev_id in used:
            continue
        mapping[new_id] = prev_id
        used.add(prev_id)
    return mapping


def _seed_points(store: AttractorStore, per_attractor: int, grid: Grid, rng: np.random.Generator) -> np.ndarray:
    seeds = []
    for a in store:
        pts = a.points[grid.index(a.points.T) >= 0]
        if len(pts) == 0:
            continue
        k = min(per_attractor, len(pts))
        seeds.append(pts[np.sort(rng.choice(len(pts), size=k, replace=False))])
    return np.vstack(seeds) if seeds else np.zeros((0, grid.dimension))


def global_continuation(
    field: VectorField,
    curve: ParameterCurve,
    grid: Grid,
    rc: RecurrenceConfig,
    cfg: IntegratorConfig,
    seeds_per_step: int,
    sampler: Sampler,
    seed: int = 0,
    seeds_from_previous: int = 10,
    threshold: float = math.inf,
) -> list[AttractorStore]:
    """One store per step; continued attractors keep the id they had before.

    Ids that vanish are never reused: an attractor that is not matched gets
    an id above every id seen so far.
    """
    stores: list[AttractorStore] = []
    prev: AttractorStore | None = None
    highest = 0
    for k, assignment in enumerate(curve):
        f = field.with_parameters(assignment)
        rng = step_rng(seed, k, _FIND_STREAM)
        seeds = _seed_points(prev, seeds_from_previous, grid, rng) if prev is not None else np.zeros((0, grid.dimension))
        ics = np.vstack([seeds, sampler(rng, seeds_per_step)])
        _, found = find_attractors(f, ics, grid, rc, cfg)
        if len(found) == 0:
            raise NoAttractorsFound(f"no attractor found at step {k} ({assignment})")
        if prev is None:
            relabel = {aid: aid for aid in found.ids}
        else:
            relabel = match_attractors(prev, found, threshold)
            for aid in found.ids:
                if aid not in relabel:
                    highest += 1
                    relabel[aid] = highest
        store = found.relabeled(relabel)
        highest = max(highest, *store.ids)
        stores.append(store)
        prev = store
    return stores


@dataclass(frozen=True)
class MeasureSet:
    local: LocalMeasures | _NotApplicable
    nonlocal_: NonlocalMeasures
    lyapunov_max: float
    summary: float


@dataclass
class StepResult:
    parameters: dict
    store: AttractorStore
    measures: dict[int, MeasureSet]
    unresolved_fraction: float
    divergence: float
    accumulator: BasinAccumulator | None = field(default=None, repr=False)


@dataclass
class ContinuationResult:
    curve: ParameterCurve
    steps: list[StepResult]

    def series(self, aid: int, getter: Callable[[MeasureSet], float]) -> np.ndarray:
        """One measure of attractor ``aid`` along the curve; ``nan`` where absent."""
        out = np.full(len(self.steps), np.nan)
        for k, step in enumerate(self.steps):
            if aid in step.measures:
                value = getter(step.measures[aid])
                out[k] = np.nan if value is None else value
        return out

    def ids(self) -> list[int]:
        return sorted({aid for s in self.steps for aid in s.measures})


def measure_step(
    field: VectorField,
    store: AttractorStore,
    ics: np.ndarray,
    grid: Grid,
    epsilon: float,
    T: float,
    cfg: IntegratorConfig,
    weights: WeightFunction = UNIFORM,
    workers: int = 1,
    lyapunov_times: tuple[float, float] = (100.0, 1000.0),
    keep_accumulator: bool = False,
) -> StepResult:
    acc = accumulate(field, store, ics, epsilon, cfg, weights, workers)
    starts = np.array([a.points[0] for a in store])
    lyap = max_lyapunov_batch(field, starts, cfg, *lyapunov_times)
    measures = {}
    for a, lam in zip(store, lyap):
        measures[a.id] = MeasureSet(
            local=local_measures(field, a, grid),
            nonlocal_=nonlocal_measures(acc, a.id, T),
            lyapunov_max=float(lam),
            summary=a.summary(),
        )
    return StepResult(
        parameters=dict(zip(field.parameter_names, field.parameters)),
        store=store,
        measures=measures,
        unresolved_fraction=acc.unresolved_fraction,
        divergence=basin_stability(acc, 0),
        accumulator=acc if keep_accumulator else None,
    )


def measures_along_continuation(
    field: VectorField,
    stores: Sequence[AttractorStore],
    curve: ParameterCurve,
    sampler: Sampler,
    N: int,
    epsilon: float,
    T: float,
    cfg: IntegratorConfig,
    grid: Grid,
    weights: WeightFunction = UNIFORM,
    seed: int = 0,
    workers: int = 1,
    lyapunov_times: tuple[float, float] = (100.0, 1000.0),
    keep_accumulators: bool = False,
) -> ContinuationResult:
    if len(stores) != len(curve):
        raise ValueError("need exactly one store per curve step")
    steps = []
    for k, (assignment, store) in enumerate(zip(curve, stores)):
        f = field.with_parameters(assignment)
        ics = sampler(step_rng(seed, k, _MEASURE_STREAM), N)
        steps.append(
            measure_step(f, store, ics, grid, epsilon, T, cfg, weights, workers, lyapunov_times, keep_accumulators)
        )
    return ContinuationResult(curve=curve, steps=steps)


__all__ = [
    "NOT_APPLICABLE",
    "ContinuationResult",
    "MeasureSet",
    "ParameterCurve",
    "StepResult",
    "global_continuation",
    "match_attractors",
    "measure_step",
    "measures_along_continuation",
    "set_distance",
    "step_rng",
]
