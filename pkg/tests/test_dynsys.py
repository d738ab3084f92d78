import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from resilience.dynsys import (
    DIVERGED,
    STOPPED,
    TIMEOUT,
    IntegratorConfig,
    VectorField,
    integrate,
    integrate_batch,
    jacobian,
    max_lyapunov,
    max_lyapunov_batch,
)
from resilience.errors import NonFiniteState
from resilience.systems import lorenz84, predator_prey, radial_oracle

# points on the Lorenz-84 attractors at the default parameters
LORENZ_CYCLE_POINT = [0.690529, -0.187041, 0.943448]
LORENZ_CHAOS_POINT = [1.407241, -0.151247, -0.208925]


def decay():
    return VectorField(lambda s, p: -p[0] * s, 1, (1.0,), ("k",), name="decay")


def linear(A):
    A = np.asarray(A, dtype=float)

    def rhs(state, p):
        return np.tensordot(A, state, axes=1)

    return VectorField(rhs, len(A), name="linear")


def test_exponential_decay_at_unit_time():
    traj = integrate(decay(), [1.0], IntegratorConfig(dt_observe=1.0, max_time=5.0))
    assert traj.times.tolist() == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]
    assert traj.states[1, 0] == pytest.approx(math.exp(-1.0), abs=1e-6)


def test_observation_grid_ends_at_max_time():
    traj = integrate(decay(), [1.0], IntegratorConfig(dt_observe=0.3, max_time=1.0))
    assert np.allclose(traj.times, [0.0, 0.3, 0.6, 0.9, 1.0])
    assert np.all(np.diff(traj.times) > 0)


def test_radial_norm_decays_exponentially_inside_disk():
    traj = integrate(radial_oracle(1.0), [0.5, 0.0], IntegratorConfig(dt_observe=0.1, max_time=5.0))
    r = np.linalg.norm(traj.states, axis=1)
    assert np.all(np.diff(r) < 0)
    assert np.max(np.abs(r - 0.5 * np.exp(-traj.times))) < 1e-6


def test_stop_predicate_ends_at_first_observation():
    traj = integrate(decay(), [1.0], IntegratorConfig(dt_observe=0.5, max_time=10.0), lambda t, x: x[0] < 0.2)
    # e^-t < 0.2 first holds on the grid at t = 2.0
    assert traj.times[-1] == pytest.approx(2.0)
    assert traj.final[0] < 0.2 < traj.states[-2, 0]


def test_divergence_raises():
    with pytest.raises(NonFiniteState):
        integrate(radial_oracle(1.0), [1.2, 0.0], IntegratorConfig(dt_observe=0.1, max_time=100.0))


def test_batch_status_codes():
    cfg = IntegratorConfig(dt_observe=0.1, max_time=3.0)
    out = integrate_batch(radial_oracle(1.0), np.array([[0.5, 0.0], [1.5, 0.0], [0.2, 0.1]]), cfg,
                          lambda rows, t, X: np.linalg.norm(X, axis=0) < 0.1)  # fmt: skip
    assert out.status[0] == STOPPED
    assert out.status[2] == STOPPED
    assert out.status[1] == TIMEOUT  # still finite at t = 3

    out = integrate_batch(radial_oracle(1.0), np.array([[1.5, 0.0]]), IntegratorConfig(max_time=100.0),
                          lambda rows, t, X: np.zeros(len(rows), bool))  # fmt: skip
    assert out.status[0] == DIVERGED


def test_lorenz84_trajectories_stay_bounded():
    rng = np.random.default_rng(7)
    ics = rng.uniform(-4, 4, size=(20, 3))
    worst = np.zeros(1)

    def watch(rows, t, X):
        worst[0] = max(worst[0], np.linalg.norm(X, axis=0).max())
        return np.zeros(len(rows), bool)

    out = integrate_batch(lorenz84(), ics, IntegratorConfig(dt_observe=0.1, max_time=200.0), watch)
    assert np.all(out.status == TIMEOUT)
    assert worst[0] < 20


def test_halving_observation_step_leaves_endpoint_unchanged():
    field = predator_prey(E=0.36)
    x0 = [0.8, 0.03]
    a = integrate(field, x0, IntegratorConfig(dt_observe=0.2, max_time=50.0)).final
    b = integrate(field, x0, IntegratorConfig(dt_observe=0.1, max_time=50.0)).final
    assert np.linalg.norm(a - b) / np.linalg.norm(a) < 10 * 1e-8


def test_repeated_runs_are_bit_identical():
    cfg = IntegratorConfig(dt_observe=0.1, max_time=20.0)
    a = integrate(lorenz84(), [1.0, 2.0, -1.0], cfg)
    b = integrate(lorenz84(), [1.0, 2.0, -1.0], cfg)
    assert np.array_equal(a.states, b.states)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_batch_composition_does_not_change_a_trajectory(seed, extra):
    rng = np.random.default_rng(seed)
    ics = rng.uniform(-4, 4, size=(extra + 1, 3))
    cfg = IntegratorConfig(dt_observe=0.5, max_time=5.0)
    never = lambda rows, t, X: np.zeros(len(rows), bool)  # noqa: E731
    together = integrate_batch(lorenz84(), ics, cfg, never)
    alone = integrate_batch(lorenz84(), ics[:1], cfg, never)
    assert np.array_equal(together.states[0], alone.states[0])


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(dt_observe=2.0, max_time=1.0)
    with pytest.raises(ValueError):
        IntegratorConfig(abs_tol=0.0)


# Jacobian


def test_jacobian_of_radial_field_at_origin():
    assert np.allclose(jacobian(radial_oracle(1.0), [0.0, 0.0]), -np.eye(2), atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(
    arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)).map(lambda s: (s[0], s[0])),
           elements=st.floats(-5, 5)),  # fmt: skip
    st.floats(-10, 10),
)
def test_jacobian_of_linear_field_is_the_matrix(A, offset):
    x = np.full(len(A), offset)
    assert np.max(np.abs(jacobian(linear(A), x) - A)) < 1e-10


def test_jacobian_of_smooth_field_matches_analytic_derivative():
    def rhs(s, p):
        x, y = s
        return np.stack([np.sin(x) * np.exp(y), x * x * y - np.cos(y)])

    field = VectorField(rhs, 2)
    x, y = 0.7, -0.4
    exact = np.array([[np.cos(x) * np.exp(y), np.sin(x) * np.exp(y)], [2 * x * y, x * x + np.sin(y)]])
    assert np.allclose(jacobian(field, [x, y]), exact, rtol=1e-6, atol=1e-9)


def _predator_prey_jacobian(x, y, A=2.05, B=-2.6, C=0.4, D=1.0, E=0.36):
    den = A * x * x + B * x + 1
    s = x * x / den
    ds = (B * x * x + 2 * x) / den**2
    return np.array(
        [
            [(1 - x) * (x - E) - x * (x - E) + x * (1 - x) - ds * y, -s],
            [C * ds * y, C * s - D],
        ]
    )


def test_predator_prey_jacobian_at_coexistence():
    # C s(x) = D gives 4.125 x^2 - 6.5 x + 2.5 = 0, the lower root is x = 2/3
    x = 2 / 3
    y = x * (1 - x) * (x - 0.36) / 2.5
    field = predator_prey(E=0.36)
    assert np.allclose(field([x, y]), 0, atol=1e-14)
    J = jacobian(field, [x, y])
    assert np.allclose(J, _predator_prey_jacobian(x, y), rtol=1e-6, atol=1e-10)
    assert np.linalg.eigvals(J).real.max() < 0


# Lyapunov exponents


def test_lyapunov_of_linear_contraction():
    assert max_lyapunov(decay(), [0.3], IntegratorConfig(), 100, 1000) == pytest.approx(-1.0, abs=0.05)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.1, 2.0), st.floats(0.1, 2.0), st.floats(-3, 3))
def test_lyapunov_of_stable_equilibrium_is_spectral_abscissa(a, b, c):
    A = np.array([[-a, c], [0.0, -b]])
    lam = max_lyapunov(linear(A), [0.0, 0.0], IntegratorConfig(dt_observe=1.0), 10, 150)
    assert lam == pytest.approx(-min(a, b), abs=0.05)


def test_lorenz84_lyapunov_signs():
    field = lorenz84()
    cycle, chaos = max_lyapunov_batch(field, np.array([LORENZ_CYCLE_POINT, LORENZ_CHAOS_POINT]), IntegratorConfig())
    assert abs(cycle) < 0.02
    assert chaos > 0.005
