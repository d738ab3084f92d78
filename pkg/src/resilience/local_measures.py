"""Linear-stability measures of a point attractor, computed from its Jacobian."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from .dynsys import VectorField, jacobian
from .errors import UnstableMatrix
from .mapping import Attractor, Grid, is_point_attractor, refine_equilibrium


class _NotApplicable:
    """Marker for local measures of attractors that are not fixed points."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NOT_APPLICABLE"

    def __reduce__(self):
        return (_NotApplicable, ())


NOT_APPLICABLE = _NotApplicable()


@dataclass(frozen=True)
class LocalMeasures:
    t_R: float
    R0: float
    rho_max: float
    t_max: float


def _check(J) -> np.ndarray:
    J = np.atleast_2d(np.asarray(J, dtype=float))
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {J.shape}")
    if not np.isfinite(J).all():
        raise ValueError("matrix has non-finite entries")
    return J


def spectral_abscissa(J) -> float:
    return float(np.linalg.eigvals(_check(J)).real.max())


def characteristic_return_time(J) -> float:
    lam = spectral_abscissa(J)
    return -1.0 / lam if lam < 0 else math.inf


def reactivity(J) -> float:
    J = _check(J)
    return float(np.linalg.eigvalsh((J + J.T) / 2).max())


def amplification_envelope(J, t: float) -> float:
    """Operator 2-norm of ``exp(tJ)``."""
    J = _check(J)
    if not (t >= 0 and math.isfinite(t)):
        raise ValueError("t must be finite and non-negative")
    return float(np.linalg.norm(linalg.expm(t * J), 2))


def maximal_amplification(J, scan_points: int = 200) -> tuple[float, float]:
    """Global maximum ``(rho_max, t_max)`` of the amplification envelope."""
    J = _check(J)
    lam = spectral_abscissa(J)
    if lam >= 0:
        raise UnstableMatrix(f"spectral abscissa {lam:.3g} >= 0, amplification is unbounded")
    if reactivity(J) <= 0:
        return 1.0, 0.0
    t_R = -1.0 / lam
    ts = np.geomspace(1e-4 * t_R, 50 * t_R, scan_points)
    rho = np.array([amplification_envelope(J, t) for t in ts])
    k = int(rho.argmax())
    lo = ts[k - 1] if k > 0 else 0.0
    hi = ts[min(k + 1, len(ts) - 1)]
    res = optimize.minimize_scalar(
        lambda t: -amplification_envelope(J, t), bounds=(lo, hi), method="bounded", options={"xatol": 1e-10 * t_R}
    )
    best_t, best = (float(res.x), -float(res.fun)) if -res.fun >= rho[k] else (float(ts[k]), float(rho[k]))
    if best <= 1.0:
        return 1.0, 0.0
    return best, best_t


def local_measures_at(J) -> LocalMeasures:
    """All four measures for the Jacobian at an equilibrium.

    Past a loss of linear stability the envelope is unbounded, so ``rho_max``
    and ``t_max`` are reported as infinite.
    """
    J = _check(J)
    t_R = characteristic_return_time(J)
    R0 = reactivity(J)
    if math.isinf(t_R):
        return LocalMeasures(t_R, R0, math.inf, math.inf)
    rho_max, t_max = maximal_amplification(J)
    return LocalMeasures(t_R, R0, rho_max, t_max)


def local_measures(field: VectorField, attractor: Attractor, grid: Grid) -> LocalMeasures | _NotApplicable:
    if not is_point_attractor(attractor, grid):
        return NOT_APPLICABLE
    guess = attractor.points[0]
    x = refine_equilibrium(field, guess, 10 * grid.cell_diagonal)
    return local_measures_at(jacobian(field, guess if x is None else x))
