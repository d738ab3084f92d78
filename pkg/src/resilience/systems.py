"""Built-in vector fields and their default study configurations."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Callable, Mapping

import numpy as np
from scipy import integrate, optimize

from .dynsys import IntegratorConfig, VectorField
from .errors import SingularDenominator
from .mapping import Grid, RecurrenceConfig


def _radial_rhs(state, p):
    a = p[0]
    r2 = state[0] * state[0]
    for comp in state[1:]:
        r2 = r2 + comp * comp
    return np.sign(r2 - 1.0) * a * state


def _predator_prey_rhs(state, p):
    A, B, C, D, E = p
    x, y = state
    s = x * x / (A * x * x + B * x + 1.0)
    return np.stack([x * (1.0 - x) * (x - E) - s * y, y * (C * s - D)])


def _lorenz84_rhs(state, p):
    F, G, a, b = p
    x, y, z = state
    return np.stack(
        [
            -y * y - z * z - a * x + a * F,
            x * y - b * x * z - y + G,
            b * x * y + x * z - z,
        ]
    )


_SECONDS_PER_YEAR = 3.15e7
_AMOC_NAMES = (
    "H", "V_N", "V_T", "V_S", "V_IP", "V_B", "F_N", "F_T", "K_N", "K_S", "lambda", "alpha",
    "beta", "mu", "gamma", "T_S", "T_0", "a", "b", "S_0", "S_S", "S_IP", "S_N_ref", "S_T_ref", "S_B_ref",
)  # fmt: skip


def amoc_flow(state, p) -> np.ndarray:
    """Overturning strength q in Sv for salinities ``(S_N, S_T)`` in psu."""
    S_N = state[0]
    lam, alpha, beta, mu, T_S, T_0, S_S = p[10], p[11], p[12], p[13], p[15], p[16], p[20]
    return lam * (alpha * (T_S - T_0) + beta * (S_N - S_S) / 1000.0) / (1.0 + lam * alpha * mu) / 1e6


def _amoc_rhs(state, p):
    (H, V_N, V_T, V_S, V_IP, V_B, F_N, F_T, K_N, K_S, _lam, _alpha, _beta, _mu,
     gamma, _T_S, _T_0, a, b, S_0, S_S, S_IP, S_N_ref, S_T_ref, S_B_ref) = p  # fmt: skip
    S_N, S_T = state
    # total salt is conserved, which fixes the bottom box
    salt = V_N * S_N_ref + V_T * S_T_ref + V_S * S_S + V_IP * S_IP + V_B * S_B_ref
    S_B = (salt - V_N * S_N - V_T * S_T - V_S * S_S - V_IP * S_IP) / V_B
    q = amoc_flow(state, p)
    q_pos = np.where(q > 0, q, 0.0)  # q * Theta(q), Theta(0) = 0
    q_neg = np.where(q < 0, q, 0.0)  # q * Theta(-q)
    dN = (K_N + q_pos) * (S_T - S_N) - q_neg * (S_B - S_N) - (F_N + a * H) * S_0
    dT = (
        q_pos * (gamma * S_S + (1 - gamma) * S_IP - S_T)
        - (q_neg - K_N) * (S_N - S_T)
        + K_S * (S_S - S_T)
        - (F_T + b * H) * S_0
    )
    scale = _SECONDS_PER_YEAR * 1e6
    return np.stack([dN * (scale / V_N), dT * (scale / V_T)])


@lru_cache(maxsize=1)
def amoc_defaults() -> dict[str, float]:
    text = resources.files("resilience").joinpath("data/amoc_3box.json").read_text(encoding="utf-8")
    return dict(json.loads(text)["parameters"])


def radial_oracle(a: float = 1.0) -> VectorField:
    """``dx/dt = sign(|x|^2 - 1) a x``: the origin attracts the open unit disk."""
    if not a > 0:
        raise ValueError("a must be positive")
    return VectorField(_radial_rhs, 2, (a,), ("a",), name="oracle")


def predator_prey(
    A: float = 2.05,
    B: float = -2.6,
    C: float = 0.4,
    D: float = 1.0,
    E: float = 0.36,
    x_range: tuple[float, float] = (0.0, 1.0),
) -> VectorField:
    """Holling type III predator-prey model with Allee effect on the prey."""
    lo, hi = x_range
    candidates = [lo, hi]
    if A != 0 and lo < -B / (2 * A) < hi:
        candidates.append(-B / (2 * A))
    if min(A * x * x + B * x + 1 for x in candidates) <= 0:
        raise SingularDenominator(f"A x^2 + B x + 1 vanishes for some x in [{lo}, {hi}]")
    return VectorField(_predator_prey_rhs, 2, (A, B, C, D, E), ("A", "B", "C", "D", "E"), name="predator_prey")


def lorenz84(F: float = 6.886, G: float = 1.355, a: float = 0.255, b: float = 4.0) -> VectorField:
    return VectorField(_lorenz84_rhs, 3, (F, G, a, b), ("F", "G", "a", "b"), name="lorenz84")


def amoc_3box(**overrides: float) -> VectorField:
    """Three-box AMOC salinity model in ``(S_N, S_T)``; ``H`` is the hosing in Sv."""
    values = amoc_defaults()
    unknown = set(overrides) - set(values)
    if unknown:
        raise KeyError(f"unknown AMOC parameters: {sorted(unknown)}")
    values.update(overrides)
    params = tuple(float(values[name]) for name in _AMOC_NAMES)
    if not all(math.isfinite(v) for v in params):
        raise ValueError("AMOC parameters must be finite")
    return VectorField(_amoc_rhs, 2, params, _AMOC_NAMES, name="amoc")


@dataclass(frozen=True)
class SystemSpec:
    """A named system together with the configuration used to study it."""

    name: str
    build: Callable[..., VectorField]
    defaults: Mapping[str, float]
    grid: Grid
    box: tuple[tuple[float, ...], tuple[float, ...]]
    epsilon: float
    finite_time: float
    sweep_parameter: str
    sweep: tuple[float, float, float]  # start, step, stop
    recurrence: RecurrenceConfig
    finding: IntegratorConfig
    measuring: IntegratorConfig
    seeds_per_step: int = 100
    expected_attractors: int = 1
    lyapunov_times: tuple[float, float] = (100.0, 1000.0)  # transient, total

    @property
    def dimension(self) -> int:
        return len(self.box[0])

    def field(self, **overrides: float) -> VectorField:
        params = dict(self.defaults)
        params.update(overrides)
        return self.build(**params)

    def sweep_values(self) -> np.ndarray:
        start, step, stop = self.sweep
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return np.round(start + step * np.arange(count), 12)


@dataclass(frozen=True)
class AnalyticAnswers:
    """Closed-form measures of the origin attractor of :func:`radial_oracle`
    for uniform initial conditions on a box containing the unit disk."""

    a: float
    box_area: float
    t_R: float = field(init=False)
    R0: float = field(init=False)
    rho_max: float = 1.0
    t_max: float = 0.0
    s_min: float = 1.0
    s_max: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "t_R", 1.0 / self.a)
        object.__setattr__(self, "R0", -self.a)

    @property
    def S(self) -> float:
        return math.pi / self.box_area

    def tau(self, r, epsilon: float):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return np.where(r <= epsilon, 0.0, np.log(r / epsilon) / self.a)

    def beta(self, r, epsilon: float):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(r <= epsilon, 0.0, self.tau(r, epsilon) / np.where(r > 0, r, 1.0))

    def S_ft(self, T: float, epsilon: float) -> float:
        return math.pi * min(1.0, epsilon * math.exp(self.a * T)) ** 2 / self.box_area

    def median_tau(self, epsilon: float) -> float:
        # radius of a uniform point in the unit disk has density 2r, median sqrt(1/2)
        return float(self.tau(math.sqrt(0.5), epsilon))

    def median_beta(self, epsilon: float) -> float:
        """Median pace over the disk, by quadrature of the pace distribution."""

        def below(level: float) -> float:
            # P(beta(r) <= level) for r with density 2r on (0, 1)
            def integrand(r):
                return 2 * r if self.beta(r, epsilon) <= level else 0.0

            peak = math.e * epsilon
            pts = [epsilon, min(peak, 1.0)]
            return integrate.quad(integrand, 0.0, 1.0, points=pts, limit=400)[0]

        top = float(self.beta(min(math.e * epsilon, 1.0), epsilon))
        return optimize.brentq(lambda b: below(b) - 0.5, 0.0, top, xtol=1e-12)


def oracle_answers(a: float = 1.0, box: tuple[tuple[float, ...], tuple[float, ...]] = ((-2, -2), (2, 2))):
    lower, upper = np.asarray(box[0], float), np.asarray(box[1], float)
    if (lower > -1).any() or (upper < 1).any():
        raise ValueError("the sampling box must contain the unit disk")
    return AnalyticAnswers(a=a, box_area=float(np.prod(upper - lower)))


SYSTEMS: dict[str, SystemSpec] = {
    "oracle": SystemSpec(
        name="oracle",
        build=radial_oracle,
        defaults={"a": 1.0},
        grid=Grid(((-2.0, 2.0, 201), (-2.0, 2.0, 201))),
        box=((-2.0, -2.0), (2.0, 2.0)),
        epsilon=0.01,
        finite_time=3.0,
        sweep_parameter="a",
        sweep=(1.0, 1.0, 1.0),
        recurrence=RecurrenceConfig(100, 100, 100),
        finding=IntegratorConfig(dt_observe=0.1, max_time=1000.0),
        measuring=IntegratorConfig(dt_observe=0.1, max_time=1000.0),
        seeds_per_step=20,
        expected_attractors=1,
    ),
    "predator_prey": SystemSpec(
        name="predator_prey",
        build=predator_prey,
        defaults={"A": 2.05, "B": -2.6, "C": 0.4, "D": 1.0, "E": 0.36},
        grid=Grid(((0.0, 1.0, 201), (0.0, 0.05, 201))),
        box=((0.0, 0.0), (1.0, 0.05)),
        epsilon=0.001,
        finite_time=100.0,
        sweep_parameter="E",
        sweep=(0.35, 0.003, 0.45),
        recurrence=RecurrenceConfig(10_000, 1000, 1000),
        finding=IntegratorConfig(dt_observe=0.1, max_time=5000.0),
        measuring=IntegratorConfig(dt_observe=0.1, max_time=3000.0),
        seeds_per_step=100,
        expected_attractors=3,
    ),
    "lorenz84": SystemSpec(
        name="lorenz84",
        build=lorenz84,
        defaults={"F": 6.886, "G": 1.355, "a": 0.255, "b": 4.0},
        grid=Grid(((-4.0, 4.0, 101),) * 3),
        box=((-4.0, -4.0, -4.0), (4.0, 4.0, 4.0)),
        epsilon=0.01,
        finite_time=20.0,
        sweep_parameter="G",
        sweep=(1.34, 0.01, 1.7),
        # the chaotic band grazes the cycle's cells, so claiming needs a longer run of hits
        recurrence=RecurrenceConfig(1000, 10_000, 1000, 20),
        finding=IntegratorConfig(dt_observe=0.1, max_time=3000.0),
        measuring=IntegratorConfig(dt_observe=0.1, max_time=1000.0),
        seeds_per_step=200,
        expected_attractors=3,
    ),
    "amoc": SystemSpec(
        name="amoc",
        build=amoc_3box,
        defaults={"H": 0.0},
        grid=Grid(((32.0, 37.0, 201), (34.0, 38.0, 201))),
        box=((32.0, 34.0), (37.0, 38.0)),
        epsilon=0.01,
        finite_time=1000.0,
        sweep_parameter="H",
        sweep=(0.0, 0.01, 0.42),
        recurrence=RecurrenceConfig(1000, 200, 200),
        finding=IntegratorConfig(dt_observe=10.0, max_time=50_000.0),
        measuring=IntegratorConfig(dt_observe=10.0, max_time=50_000.0),
        seeds_per_step=100,
        expected_attractors=2,
        lyapunov_times=(1000.0, 10_000.0),
    ),
}


def get_system(name: str) -> SystemSpec:
    try:
        return SYSTEMS[name]
    except KeyError:
        raise KeyError(f"unknown system {name!r}; choose from {sorted(SYSTEMS)}") from None
