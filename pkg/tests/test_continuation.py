import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from resilience.continuation import (
    ParameterCurve,
    global_continuation,
    match_attractors,
    measures_along_continuation,
    set_distance,
    step_rng,
)
from resilience.dynsys import IntegratorConfig, VectorField
from resilience.errors import NoAttractorsFound
from resilience.local_measures import NOT_APPLICABLE, local_measures
from resilience.mapping import Attractor, AttractorStore, Grid, RecurrenceConfig, find_attractors
from resilience.nonlocal_measures import UniformBoxSampler
from resilience.systems import get_system, radial_oracle

ORACLE = get_system("oracle")
ORACLE_SAMPLER = UniformBoxSampler(*ORACLE.box)


def store_of(*clouds):
    return AttractorStore({k + 1: Attractor(k + 1, np.atleast_2d(c)) for k, c in enumerate(clouds)})


def pitchfork():
    """``dx/dt = p x - x^3``: one attractor at 0 for p < 0, two at +-sqrt(p) for p > 0."""
    return VectorField(lambda s, p: p[0] * s - s**3, 1, (-1.0,), ("p",), name="pitchfork")


def test_step_rng_streams():
    a = step_rng(3, 2, 1).random(5)
    assert np.array_equal(a, step_rng(3, 2, 1).random(5))
    assert not np.array_equal(a, step_rng(3, 2, 0).random(5))
    assert not np.array_equal(a, step_rng(3, 1, 1).random(5))
    assert not np.array_equal(a, step_rng(4, 2, 1).random(5))


def test_parameter_curve_validation():
    curve = ParameterCurve.sweep("E", [0.3, 0.4])
    assert len(curve) == 2
    assert curve.values().tolist() == [0.3, 0.4]
    with pytest.raises(ValueError):
        ParameterCurve(())
    with pytest.raises(ValueError):
        ParameterCurve(({"E": 0.3}, {"D": 1.0}))


def test_set_distance():
    assert set_distance(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0], [6.0, 8.0]])) == 5.0
    assert set_distance(np.array([[1.0, 1.0]]), np.array([[1.0, 1.0]])) == 0.0


def test_identical_stores_match_identically():
    store = store_of([0.0, 0.0], [[1.0, 0.0], [1.0, 0.1]], [5.0, 5.0])
    assert match_attractors(store, store) == {1: 1, 2: 2, 3: 3}


def test_unique_admissible_pair():
    prev = store_of([0.0, 0.0], [10.0, 0.0])
    new = store_of([1.0, 0.0])
    assert match_attractors(prev, new, threshold=2.0) == {1: 1}
    assert match_attractors(prev, store_of([5.0, 0.0]), threshold=2.0) == {}


def test_closest_pair_wins():
    prev = store_of([0.0], [1.0])
    new = store_of([0.9], [0.2])
    assert match_attractors(prev, new) == {1: 2, 2: 1}
    # one previous attractor, two candidates: only the closer keeps the id
    assert match_attractors(store_of([0.0]), store_of([0.5], [0.3])) == {2: 1}


cloud = st.integers(1, 6).flatmap(lambda n: arrays(np.float64, (n, 2), elements=st.floats(-10, 10)))


@settings(max_examples=100, deadline=None)
@given(st.lists(cloud, min_size=1, max_size=4), st.lists(cloud, min_size=1, max_size=4),
       st.floats(0.1, 10), st.floats(-5, 5))  # fmt: skip
def test_matching_is_a_partial_injection_invariant_under_similarity(prev_clouds, new_clouds, scale, shift):
    prev, new = store_of(*prev_clouds), store_of(*new_clouds)
    mapping = match_attractors(prev, new)
    assert set(mapping) <= set(new.ids) and set(mapping.values()) <= set(prev.ids)
    assert len(set(mapping.values())) == len(mapping)
    assert len(mapping) == min(len(prev), len(new))  # nothing is left out without a threshold
    moved = match_attractors(store_of(*(scale * c + shift for c in prev_clouds)),
                             store_of(*(scale * c + shift for c in new_clouds)))  # fmt: skip
    distances = np.sort([set_distance(a.points, b.points) for a in prev for b in new])
    if np.all(np.diff(distances) > 1e-6):  # near ties may resolve differently after rounding
        assert moved == mapping


@settings(max_examples=100, deadline=None)
@given(st.lists(cloud, min_size=1, max_size=4), st.lists(cloud, min_size=1, max_size=4), st.floats(0, 20))
def test_matched_pairs_respect_threshold(prev_clouds, new_clouds, threshold):
    prev, new = store_of(*prev_clouds), store_of(*new_clouds)
    for new_id, prev_id in match_attractors(prev, new, threshold).items():
        assert set_distance(prev[prev_id].points, new[new_id].points) <= threshold


def test_single_step_equals_one_recurrence_pass():
    curve = ParameterCurve.sweep("a", [1.0])
    (store,) = global_continuation(radial_oracle(), curve, ORACLE.grid, ORACLE.recurrence, ORACLE.finding,
                                   ORACLE.seeds_per_step, ORACLE_SAMPLER, seed=9)  # fmt: skip
    ics = ORACLE_SAMPLER(step_rng(9, 0, 0), ORACLE.seeds_per_step)
    _, direct = find_attractors(radial_oracle(), ics, ORACLE.grid, ORACLE.recurrence, ORACLE.finding)
    assert store.ids == direct.ids
    for a, b in zip(store, direct):
        assert np.array_equal(a.points, b.points)


def test_constant_curve_keeps_ids():
    curve = ParameterCurve.sweep("a", [1.0, 1.0, 1.0])
    stores = global_continuation(radial_oracle(), curve, ORACLE.grid, ORACLE.recurrence, ORACLE.finding, 40,
                                 ORACLE_SAMPLER)  # fmt: skip
    assert [s.ids for s in stores] == [[1], [1], [1]]


def test_vanished_ids_are_not_reused():
    grid = Grid(((-2.0, 2.0, 401),))
    rc = RecurrenceConfig(100, 100, 100)
    cfg = IntegratorConfig(dt_observe=0.1, max_time=500.0)
    sampler = UniformBoxSampler([-2.0], [2.0])
    curve = ParameterCurve.sweep("p", [-1.0, 1.0, -1.0, 1.0])
    stores = global_continuation(pitchfork(), curve, grid, rc, cfg, 20, sampler, seed=4)
    assert [len(s) for s in stores] == [1, 2, 1, 2]
    assert stores[1].ids == [1, 2]
    survivor = stores[2].ids[0]
    assert survivor in (1, 2)
    # the branch that disappeared at step 2 comes back under a fresh id
    assert sorted(stores[3].ids) == [survivor, 3]


def test_empty_step_raises():
    sampler = UniformBoxSampler([1.2, 1.2], [1.9, 1.9])  # outside the unit disk everything escapes
    with pytest.raises(NoAttractorsFound):
        global_continuation(radial_oracle(), ParameterCurve.sweep("a", [1.0]), ORACLE.grid, ORACLE.recurrence,
                            ORACLE.finding, 10, sampler)  # fmt: skip


def _oracle_run(seed):
    curve = ParameterCurve.sweep("a", [1.0, 2.0])
    stores = global_continuation(radial_oracle(), curve, ORACLE.grid, ORACLE.recurrence, ORACLE.finding, 40,
                                 ORACLE_SAMPLER, seed=seed)  # fmt: skip
    return measures_along_continuation(radial_oracle(), stores, curve, ORACLE_SAMPLER, 400, ORACLE.epsilon,
                                       ORACLE.finite_time, ORACLE.measuring, ORACLE.grid, seed=seed, lyapunov_times=(10.0, 100.0),
                                       keep_accumulators=True)  # fmt: skip


def test_measures_along_oracle_curve():
    result = _oracle_run(2)
    assert result.ids() == [1]
    t_R = result.series(1, lambda m: m.local.t_R)
    assert t_R == pytest.approx([1.0, 0.5], abs=1e-6)
    S = result.series(1, lambda m: m.nonlocal_.S)
    assert np.all(np.abs(S - math.pi / 16) < 0.07)
    med_tau = result.series(1, lambda m: m.nonlocal_.med_tau)
    assert med_tau[1] == pytest.approx(med_tau[0] / 2, rel=0.1)
    lyap = result.series(1, lambda m: m.lyapunov_max)
    assert lyap == pytest.approx([-1.0, -2.0], abs=0.05)
    for step in result.steps:
        assert step.divergence == pytest.approx(1 - step.measures[1].nonlocal_.S)
        assert step.unresolved_fraction == 0.0
        assert len(step.accumulator) == 400
    assert result.steps[1].parameters == {"a": 2.0}
    assert np.all(np.isnan(result.series(7, lambda m: m.lyapunov_max)))


def test_measures_along_continuation_are_reproducible():
    a, b = _oracle_run(5), _oracle_run(5)
    for sa, sb in zip(a.steps, b.steps):
        assert sa.measures == sb.measures
        assert np.array_equal(sa.accumulator.taus, sb.accumulator.taus)


def test_stores_must_align_with_curve():
    with pytest.raises(ValueError):
        measures_along_continuation(radial_oracle(), [], ParameterCurve.sweep("a", [1.0]), ORACLE_SAMPLER, 10,
                                    0.01, 3.0, ORACLE.measuring, ORACLE.grid)  # fmt: skip


@pytest.mark.slow
def test_coexistence_id_survives_hopf_point():
    spec = get_system("predator_prey")
    curve = ParameterCurve.sweep("E", [0.396, 0.399, 0.402])
    stores = global_continuation(spec.field(), curve, spec.grid, spec.recurrence, spec.finding,
                                 spec.seeds_per_step, UniformBoxSampler(*spec.box), seed=1)  # fmt: skip
    x = 2 / 3
    coexistence = [aid for aid in stores[0].ids if abs(stores[0][aid].points[0][0] - x) < 1e-3]
    assert len(coexistence) == 1
    aid = coexistence[0]
    assert all(aid in s.ids for s in stores)
    assert [len(s) for s in stores] == [3, 3, 3]
    cycle = stores[2][aid]
    assert cycle.diameter > 0.05  # a limit cycle after the Hopf point
    assert local_measures(spec.field(E=0.402), cycle, spec.grid) is NOT_APPLICABLE
