"""Finding attractors and mapping initial conditions onto them.

Two mappers share the batch integrator:

* the recurrence mapper tracks each trajectory on a state-space grid and
  declares a new attractor once the trajectory keeps revisiting its own cells;
  it mutates an :class:`AttractorStore` and is therefore run per batch in a
  fixed row order;
* the proximity mapper only reads a frozen store and stops a trajectory as
  soon as it comes within ``epsilon`` of an attractor's point cloud, which
  gives the convergence time as a by-product.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy import optimize
from scipy.spatial import ConvexHull, QhullError, cKDTree
from scipy.spatial.distance import pdist

from .dynsys import DIVERGED, IntegratorConfig, VectorField, integrate_batch, jacobian
from .errors import EmptyStore, NonFiniteState, OutsideGrid, UnknownAttractor

DIVERGENCE = 0
UNRESOLVED = -1


@dataclass(frozen=True)
class Grid:
    """Regular grid of ``cells`` points per dimension spanning ``[min, max]``.

    A state belongs to the cell of its nearest grid point, so the covered box
    reaches half a spacing beyond ``min`` and ``max``.
    """

    ranges: tuple[tuple[float, float, int], ...]

    def __post_init__(self):
        ranges = tuple((float(lo), float(hi), int(c)) for lo, hi, c in self.ranges)
        for lo, hi, c in ranges:
            if not lo < hi:
                raise ValueError(f"grid range needs min < max, got ({lo}, {hi})")
            if c < 2:
                raise ValueError("a grid dimension needs at least 2 cells")
        object.__setattr__(self, "ranges", ranges)

    @classmethod
    def from_box(cls, lower: Sequence[float], upper: Sequence[float], cells: int | Sequence[int]) -> "Grid":
        if np.ndim(cells) == 0:
            cells = [int(cells)] * len(lower)
        return cls(tuple(zip(lower, upper, cells)))

    @property
    def dimension(self) -> int:
        return len(self.ranges)

    @property
    def minima(self) -> np.ndarray:
        return np.array([r[0] for r in self.ranges])

    @property
    def maxima(self) -> np.ndarray:
        return np.array([r[1] for r in self.ranges])

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(r[2] for r in self.ranges)

    @property
    def spacing(self) -> np.ndarray:
        return (self.maxima - self.minima) / (np.array(self.shape) - 1)

    @property
    def cell_diagonal(self) -> float:
        return float(np.linalg.norm(self.spacing))

    @property
    def lower(self) -> np.ndarray:
        return self.minima - self.spacing / 2

    @property
    def upper(self) -> np.ndarray:
        return self.maxima + self.spacing / 2

    def contains(self, x: Sequence[float] | np.ndarray) -> bool:
        return bool(self.index(np.asarray(x, dtype=float)[:, None])[0] >= 0)

    def index(self, X: np.ndarray) -> np.ndarray:
        """Flat cell index of each column of ``X`` (shape ``(n, k)``); -1 outside."""
        X = np.asarray(X, dtype=float)
        flat = np.zeros(X.shape[1], dtype=np.int64)
        inside = np.ones(X.shape[1], dtype=bool)
        for d, (lo, hi, cells) in enumerate(self.ranges):
            step = (hi - lo) / (cells - 1)
            with np.errstate(invalid="ignore"):
                i = np.floor((X[d] - lo) / step + 0.5)
            inside &= (i >= 0) & (i < cells)
            flat = flat * cells + np.where(inside, i, 0).astype(np.int64)
        return np.where(inside, flat, -1)


@dataclass(frozen=True)
class RecurrenceConfig:
    consecutive_recurrences: int = 1000
    attractor_locate_steps: int = 1000
    consecutive_lost_steps: int = 1000
    consecutive_attractor_steps: int = 2

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if getattr(self, f.name) < 1:
                raise ValueError(f"{f.name} must be positive")


@dataclass
class Attractor:
    id: int
    points: np.ndarray  # shape (k, n)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape[0] == 0:
            raise ValueError("an attractor needs at least one point")

    @property
    def diameter(self) -> float:
        pts = self.points
        if len(pts) > 2000:
            try:
                pts = pts[ConvexHull(pts).vertices]
            except QhullError:
                # degenerate (flat) cloud: distances from the extreme points bound it well
                ext = pts[np.unique(np.concatenate([pts.argmin(axis=0), pts.argmax(axis=0)]))]
                d = ext[:, None, :] - pts[None, :, :]
                return float(np.sqrt((d * d).sum(axis=-1)).max())
        return float(pdist(pts).max()) if len(pts) > 1 else 0.0

    @property
    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def summary(self) -> float:
        """Mean Euclidean norm of the attractor's points."""
        return float(np.linalg.norm(self.points, axis=1).mean())


@dataclass
class AttractorStore:
    """Attractors keyed by positive integer id; 0 is reserved for divergence."""

    attractors: dict[int, Attractor] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.attractors)

    def __iter__(self) -> Iterator[Attractor]:
        return iter(self.attractors[i] for i in self.ids)

    def __contains__(self, aid: int) -> bool:
        return aid in self.attractors

    def __getitem__(self, aid: int) -> Attractor:
        try:
            return self.attractors[aid]
        except KeyError:
            raise UnknownAttractor(f"no attractor with id {aid}") from None

    @property
    def ids(self) -> list[int]:
        return sorted(self.attractors)

    def next_id(self) -> int:
        return max(self.attractors, default=0) + 1

    def add(self, points: np.ndarray, aid: int | None = None) -> int:
        aid = self.next_id() if aid is None else int(aid)
        if aid < 1:
            raise ValueError("attractor ids must be positive")
        if aid in self.attractors:
            raise ValueError(f"id {aid} already in use")
        self.attractors[aid] = Attractor(aid, points)
        return aid

    def copy(self) -> "AttractorStore":
        return AttractorStore({k: Attractor(k, a.points.copy()) for k, a in self.attractors.items()})

    def relabeled(self, mapping: dict[int, int]) -> "AttractorStore":
        return AttractorStore({mapping[k]: Attractor(mapping[k], a.points) for k, a in self.attractors.items()})


# Per-trajectory phases of the recurrence mapper.
_SEARCH = 0
_LOCATE = 1


@dataclass
class _Walker:
    visited: set = field(default_factory=set)
    recurrences: int = 0
    lost: int = 0
    hit_id: int = 0
    hits: int = 0
    phase: int = _SEARCH
    aid: int = 0
    held: int = -1  # cell where the walker was found stalled at an unstable equilibrium


def _dedup(points: np.ndarray, quantum: np.ndarray) -> np.ndarray:
    keys = np.floor(points / quantum).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return points[np.sort(first)]


def refine_equilibrium(field: VectorField, guess: np.ndarray, radius: float) -> np.ndarray | None:
    """Root of the field near ``guess`` (within ``radius``), or ``None``."""
    guess = np.asarray(guess, dtype=float)
    try:
        sol = optimize.root(
            lambda x: field(x),
            guess,
            jac=lambda x: jacobian(field, x),
            method="hybr",
            options={"xtol": 1e-13},
        )
    except (NonFiniteState, ValueError, FloatingPointError):
        return None
    x = sol.x
    if not np.isfinite(x).all() or np.linalg.norm(x - guess) > radius:
        return None
    if np.linalg.norm(field(x)) > 1e-9 * max(1.0, np.linalg.norm(x)):
        return None
    return x


def _stalled_at_saddle(field: VectorField, x: np.ndarray, grid: Grid) -> bool:
    eq = refine_equilibrium(field, x, 2 * grid.cell_diagonal)
    return eq is not None and np.linalg.eigvals(jacobian(field, eq)).real.max() > 0


def is_point_attractor(attractor: Attractor, grid: Grid) -> bool:
    """A cloud narrower than ten grid-cell diagonals is treated as a fixed point."""
    return attractor.diameter < 10 * grid.cell_diagonal


def _finalize_points(field: VectorField, points: np.ndarray, grid: Grid) -> np.ndarray | None:
    """Deduplicated cloud, led by the exact equilibrium for point attractors.

    ``None`` rejects the cloud: a point-like cloud sitting on a linearly
    unstable equilibrium is a slow transient, not an attractor.
    """
    points = _dedup(points, grid.spacing * 1e-3)
    candidate = Attractor(1, points)
    if is_point_attractor(candidate, grid):
        x = refine_equilibrium(field, candidate.centroid, 10 * grid.cell_diagonal)
        if x is not None and grid.contains(x):
            abscissa = np.linalg.eigvals(jacobian(field, x)).real.max()
            if abscissa < 0:
                points = np.vstack([x, points])
            elif abscissa > 0:
                return None
    return points


def find_attractors(
    field: VectorField,
    ics: np.ndarray,
    grid: Grid,
    rc: RecurrenceConfig,
    cfg: IntegratorConfig,
    store: AttractorStore | None = None,
) -> tuple[np.ndarray, AttractorStore]:
    """Run the recurrence mapper on every row of ``ics`` in one batch.

    Returns the basin label of each initial condition (attractor id, 0 for
    divergence or loss, ``UNRESOLVED`` if ``max_time`` ran out) and the store,
    extended in place with every newly found attractor.
    """
    ics = np.atleast_2d(np.asarray(ics, dtype=float))
    store = AttractorStore() if store is None else store
    for row, x0 in enumerate(ics):
        if not grid.contains(x0):
            raise OutsideGrid(f"initial condition {row} at {x0.tolist()} lies outside the grid")

    claimed: dict[int, int] = {}
    for a in store:
        for c in grid.index(a.points.T).tolist():
            if c >= 0:
                claimed.setdefault(c, a.id)
    first_new = store.next_id()
    next_new = [first_new]
    located: dict[int, list[np.ndarray]] = {}
    labels = np.full(len(ics), UNRESOLVED, dtype=np.int64)
    walkers = [_Walker() for _ in range(len(ics))]
    hit_needed = rc.consecutive_attractor_steps

    def observe(rows, t, X):
        cells = grid.index(X).tolist()
        done = np.zeros(len(rows), dtype=bool)
        for k, (r, c) in enumerate(zip(rows.tolist(), cells)):
            w = walkers[r]
            if w.phase == _LOCATE:
                located[w.aid].append(X[:, k].copy())
                if c >= 0:
                    claimed.setdefault(c, w.aid)
                w.recurrences += 1
                if w.recurrences >= rc.attractor_locate_steps:
                    labels[r] = w.aid
                    done[k] = True
                continue
            if c < 0:
                w.lost += 1
                w.hits = 0
                w.recurrences = 0
                if w.lost >= rc.consecutive_lost_steps:
                    labels[r] = DIVERGENCE
                    done[k] = True
                continue
            w.lost = 0
            owner = claimed.get(c)
            if owner is not None:
                if owner == w.hit_id:
                    w.hits += 1
                else:
                    w.hit_id, w.hits = owner, 1
                if w.hits >= hit_needed:
                    labels[r] = owner
                    done[k] = True
                continue
            w.hits = 0
            if c in w.visited:
                w.recurrences += 1
                if w.recurrences >= rc.consecutive_recurrences:
                    if c == w.held or _stalled_at_saddle(field, X[:, k], grid):
                        # still creeping away from an unstable equilibrium
                        w.held = c
                        w.recurrences = 0
                        continue
                    w.phase = _LOCATE
                    w.aid = next_new[0]
                    next_new[0] += 1
                    w.recurrences = 0
                    w.visited = set()
                    located[w.aid] = []
            else:
                w.visited.add(c)
                w.recurrences = 0
        return done

    out = integrate_batch(field, ics, cfg, observe)
    labels[out.status == DIVERGED] = DIVERGENCE
    # rows that timed out while locating still define their attractor
    for r, w in enumerate(walkers):
        if w.phase == _LOCATE and labels[r] == UNRESOLVED and out.status[r] != DIVERGED:
            labels[r] = w.aid

    new_ids = [aid for aid in sorted(located) if located[aid]]
    cells_of = {aid: set(grid.index(np.array(located[aid]).T).tolist()) - {-1} for aid in new_ids}
    # two rows that located the same set concurrently are merged; a set nested
    # in a much larger one (a cycle inside a chaotic band) is kept apart
    merged: dict[int, int] = {}
    for i, a in enumerate(new_ids):
        if a in merged:
            continue
        for b in new_ids[i + 1 :]:
            if b in merged:
                continue
            overlap = len(cells_of[a] & cells_of[b])
            if overlap and overlap >= 0.5 * max(len(cells_of[a]), len(cells_of[b])):
                merged[b] = a
                located[a].extend(located[b])
                cells_of[a] |= cells_of[b]
    clouds = {a: _finalize_points(field, np.array(located[a]), grid) for a in new_ids if a not in merged}
    survivors = [a for a in clouds if clouds[a] is not None]
    final = {a: first_new + k for k, a in enumerate(survivors)}
    for b, a in merged.items():
        if a in final:
            final[b] = final[a]
    for a in survivors:
        store.add(clouds[a], final[a])
    provisional = labels.copy()
    labels[provisional >= first_new] = UNRESOLVED  # rejected clouds
    for aid, target in final.items():
        labels[provisional == aid] = target
    return labels, store


def map_ic_recurrence(
    field: VectorField,
    x0: Sequence[float] | np.ndarray,
    grid: Grid,
    rc: RecurrenceConfig,
    cfg: IntegratorConfig,
    store: AttractorStore,
) -> int:
    """Basin label of a single initial condition; may add a new attractor to ``store``."""
    labels, _ = find_attractors(field, np.asarray(x0, dtype=float)[None, :], grid, rc, cfg, store)
    return int(labels[0])


@dataclass
class ProximityResult:
    labels: np.ndarray  # (N,) attractor id, 0 divergence, UNRESOLVED
    taus: np.ndarray  # (N,) first observation time within epsilon; inf otherwise
    dists: np.ndarray  # (N, J) distance of each IC to each attractor, columns follow ``ids``
    ids: list[int]


class _Clouds:
    """Nearest-neighbour lookup over all attractor clouds of a store."""

    def __init__(self, store: AttractorStore, weights: np.ndarray | None):
        self.ids = store.ids
        self.scale = np.ones(store[self.ids[0]].points.shape[1]) if weights is None else np.asarray(weights, float)
        self.trees = [cKDTree(store[i].points * self.scale) for i in self.ids]
        pts = np.vstack([store[i].points for i in self.ids]) * self.scale
        self.owner = np.concatenate([np.full(len(store[i].points), i) for i in self.ids])
        self.tree = cKDTree(pts)
        self.lo = np.array([store[i].points.min(axis=0) * self.scale for i in self.ids])
        self.hi = np.array([store[i].points.max(axis=0) * self.scale for i in self.ids])

    def distances(self, X: np.ndarray) -> np.ndarray:
        Y = X * self.scale
        return np.column_stack([tree.query(Y)[0] for tree in self.trees])

    def within(self, X: np.ndarray, epsilon: float) -> np.ndarray:
        """Attractor id within ``epsilon`` of each row of ``X`` (0 if none)."""
        Y = X * self.scale
        lo, hi = self.lo - epsilon, self.hi + epsilon
        near = ((Y[:, None, :] >= lo[None]) & (Y[:, None, :] <= hi[None])).all(axis=2).any(axis=1)
        result = np.zeros(len(Y), dtype=np.int64)
        if near.any():
            d, i = self.tree.query(Y[near], distance_upper_bound=epsilon * (1 + 1e-12))
            hit = np.isfinite(d) & (d <= epsilon)
            ids = np.zeros(len(d), dtype=np.int64)
            ids[hit] = self.owner[i[hit]]
            result[near] = ids
        return result


def map_ics_proximity(
    field: VectorField,
    ics: np.ndarray,
    store: AttractorStore,
    epsilon: float,
    cfg: IntegratorConfig,
    weights: Sequence[float] | None = None,
) -> ProximityResult:
    """Map every row of ``ics`` to the first attractor it comes ``epsilon``-close to.

    ``weights`` rescales coordinates before taking Euclidean distances.
    """
    if len(store) == 0:
        raise EmptyStore("the proximity mapper needs at least one attractor")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    ics = np.atleast_2d(np.asarray(ics, dtype=float))
    clouds = _Clouds(store, None if weights is None else np.asarray(weights, dtype=float))
    labels = np.full(len(ics), UNRESOLVED, dtype=np.int64)
    taus = np.full(len(ics), np.inf)

    def observe(rows, t, X):
        found = clouds.within(X.T, epsilon)
        hit = found > 0
        labels[rows[hit]] = found[hit]
        taus[rows[hit]] = t[hit]
        return hit

    out = integrate_batch(field, ics, cfg, observe)
    labels[out.status == DIVERGED] = DIVERGENCE
    dists = clouds.distances(ics) if len(ics) else np.zeros((0, len(clouds.ids)))
    return ProximityResult(labels=labels, taus=taus, dists=dists, ids=list(clouds.ids))


def map_ic_proximity(
    field: VectorField,
    x0: Sequence[float] | np.ndarray,
    store: AttractorStore,
    epsilon: float,
    cfg: IntegratorConfig,
    weights: Sequence[float] | None = None,
) -> tuple[int, float, np.ndarray]:
    """``(label, tau, distances)`` for one initial condition; see :func:`map_ics_proximity`."""
    res = map_ics_proximity(field, np.asarray(x0, dtype=float)[None, :], store, epsilon, cfg, weights)
    return int(res.labels[0]), float(res.taus[0]), res.dists[0]
