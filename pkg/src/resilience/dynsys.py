"""Autonomous ODE systems: representation, adaptive integration, Jacobians and
the maximal Lyapunov exponent.

Right-hand sides are written for batches. ``rhs(state, params)`` receives a
state of shape ``(n,)`` or ``(n, m)`` (one column per trajectory) and returns an
array of the same shape, so ``x, y = state`` unpacking works in both cases.
Every operation in the stepping engine is elementwise per column, which makes
a trajectory's result independent of which other trajectories share its batch.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import NonFiniteState, StepSizeUnderflow

Rhs = Callable[[np.ndarray, np.ndarray], np.ndarray]

# Row status codes reported by the batch engine.
RUNNING = -1
STOPPED = 0
DIVERGED = 1
TIMEOUT = 2
STALLED = 3


@dataclass(frozen=True)
class VectorField:
    """Right-hand side ``f(x, p)`` of an autonomous ODE in ``dimension`` variables."""

    rhs: Rhs
    dimension: int
    parameters: tuple[float, ...] = ()
    parameter_names: tuple[str, ...] = ()
    name: str = "system"

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        object.__setattr__(self, "parameters", tuple(float(v) for v in self.parameters))
        if self.parameter_names and len(self.parameter_names) != len(self.parameters):
            raise ValueError("parameter_names must match parameters in length")

    @property
    def p(self) -> np.ndarray:
        return np.array(self.parameters, dtype=float)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.rhs(np.asarray(x, dtype=float), self.p)

    def index_of(self, key: int | str) -> int:
        if isinstance(key, str):
            try:
                return self.parameter_names.index(key)
            except ValueError:
                raise KeyError(f"{self.name} has no parameter {key!r}") from None
        if not 0 <= key < len(self.parameters):
            raise KeyError(f"parameter index {key} out of range")
        return int(key)

    def parameter(self, key: int | str) -> float:
        return self.parameters[self.index_of(key)]

    def with_parameters(self, updates: Mapping[int | str, float]) -> "VectorField":
        values = list(self.parameters)
        for key, value in updates.items():
            values[self.index_of(key)] = float(value)
        return dataclasses.replace(self, parameters=tuple(values))


@dataclass(frozen=True)
class IntegratorConfig:
    abs_tol: float = 1e-8
    rel_tol: float = 1e-8
    dt_observe: float = 0.1
    max_time: float = 1000.0
    max_steps: int = 10_000_000
    divergence_norm: float = 1e12

    def __post_init__(self):
        for name in ("abs_tol", "rel_tol", "dt_observe", "max_time", "divergence_norm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if self.dt_observe > self.max_time:
            raise ValueError("dt_observe must not exceed max_time")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # shape (len(times), n)

    def __len__(self) -> int:
        return len(self.times)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


@dataclass
class BatchOutcome:
    """Per-row end state of :func:`integrate_batch`."""

    status: np.ndarray
    times: np.ndarray
    states: np.ndarray  # shape (m, n)
    steps: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))


# Dormand-Prince 5(4) tableau.
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_E1, _E3, _E4, _E5, _E6, _E7 = (
    71 / 57600,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)

_SAFETY = 0.9
_FAC_MIN = 0.2
_FAC_MAX = 5.0


def _rms(components: Sequence[np.ndarray]) -> np.ndarray:
    # explicit component loop keeps the reduction order independent of batch size
    total = components[0] * components[0]
    for c in components[1:]:
        total = total + c * c
    return np.sqrt(total / len(components))


def _norm(X: np.ndarray) -> np.ndarray:
    total = X[0] * X[0]
    for row in X[1:]:
        total = total + row * row
    return np.sqrt(total)


def _initial_step(f, X, K1, cfg: IntegratorConfig) -> np.ndarray:
    sc = cfg.abs_tol + cfg.rel_tol * np.abs(X)
    d0 = _rms(X / sc)
    d1 = _rms(K1 / sc)
    with np.errstate(divide="ignore", invalid="ignore"):
        h0 = np.where((d0 < 1e-5) | (d1 < 1e-5), 1e-6, 0.01 * d0 / d1)
        h0 = np.minimum(h0, cfg.dt_observe)
        K2 = f(X + h0 * K1)
        d2 = _rms((K2 - K1) / sc) / h0
        big = np.maximum(d1, d2)
        h1 = np.where(big <= 1e-15, np.maximum(1e-6, h0 * 1e-3), (0.01 / big) ** 0.2)
    h = np.minimum(100 * h0, h1)
    return np.where(np.isfinite(h) & (h > 0), h, 1e-6)


Observer = Callable[[np.ndarray, np.ndarray, np.ndarray], "np.ndarray | tuple[np.ndarray, np.ndarray]"]


def integrate_batch(
    field: VectorField,
    x0: np.ndarray,
    cfg: IntegratorConfig,
    observer: Observer | None = None,
) -> BatchOutcome:
    """Integrate ``m`` initial conditions (rows of ``x0``) in lock-step.

    Steps are truncated so that every trajectory lands exactly on the
    observation times ``k * dt_observe`` (and on ``max_time``). At each
    observation, including ``t = 0``, ``observer(rows, t, X)`` is called with
    the original row indices of the trajectories that reached an observation,
    their times and states (shape ``(n, k)``). It returns a boolean mask of
    rows to stop, or ``(mask, new_states)`` to also overwrite their states.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    m, n = x0.shape
    if n != field.dimension:
        raise ValueError(f"initial conditions have {n} columns, field has dimension {field.dimension}")
    p = field.p
    rhs = field.rhs

    def f(X):
        return rhs(X, p)

    dt = cfg.dt_observe
    t_end = cfg.max_time
    bound = cfg.divergence_norm

    status = np.full(m, RUNNING, dtype=np.int64)
    final_t = np.zeros(m)
    final_x = x0.copy()
    total_steps = np.zeros(m, dtype=np.int64)

    X = x0.T.copy()
    idx = np.arange(m)
    t = np.zeros(m)
    nobs = np.zeros(m, dtype=np.int64)
    steps = np.zeros(m, dtype=np.int64)

    def retire(sel: np.ndarray, code: int):
        rows = idx[sel]
        status[rows] = code
        final_t[rows] = t[sel]
        final_x[rows] = X[:, sel].T
        total_steps[rows] = steps[sel]

    def observe(sel: np.ndarray) -> np.ndarray:
        """Run the observer on rows ``sel``; returns mask (over ``sel``) of stopped rows."""
        if observer is None or not sel.any():
            return np.zeros(int(sel.sum()), dtype=bool)
        out = observer(idx[sel], t[sel], X[:, sel])
        if isinstance(out, tuple):
            done, new_states = out
            X[:, sel] = new_states
            K1[:, sel] = f(X[:, sel])
        else:
            done = out
        return np.asarray(done, dtype=bool)

    with np.errstate(over="ignore", invalid="ignore"):
        bad = ~np.isfinite(X).all(axis=0) | (_norm(X) > bound)
    retire(bad, DIVERGED)
    keep = ~bad
    X, idx, t, nobs, steps = X[:, keep], idx[keep], t[keep], nobs[keep], steps[keep]
    K1 = f(X) if idx.size else X.copy()

    if idx.size:
        done = observe(np.ones(idx.size, dtype=bool))
        retire(done, STOPPED)
        keep = ~done
        X, K1, idx, t, nobs, steps = X[:, keep], K1[:, keep], idx[keep], t[keep], nobs[keep], steps[keep]

    h = _initial_step(f, X, K1, cfg) if idx.size else np.zeros(0)
    last_bad = np.zeros(idx.size, dtype=bool)

    while idx.size:
        target = np.minimum((nobs + 1) * dt, t_end)
        remaining = target - t
        truncated = h >= remaining
        hs = np.where(truncated, remaining, h)

        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            K2 = f(X + hs * (_A21 * K1))
            K3 = f(X + hs * (_A31 * K1 + _A32 * K2))
            K4 = f(X + hs * (_A41 * K1 + _A42 * K2 + _A43 * K3))
            K5 = f(X + hs * (_A51 * K1 + _A52 * K2 + _A53 * K3 + _A54 * K4))
            K6 = f(X + hs * (_A61 * K1 + _A62 * K2 + _A63 * K3 + _A64 * K4 + _A65 * K5))
            Xn = X + hs * (_B1 * K1 + _B3 * K3 + _B4 * K4 + _B5 * K5 + _B6 * K6)
            K7 = f(Xn)
            E = hs * (_E1 * K1 + _E3 * K3 + _E4 * K4 + _E5 * K5 + _E6 * K6 + _E7 * K7)
            sc = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(X), np.abs(Xn))
            err = _rms(E / sc)
            finite = np.isfinite(err) & np.isfinite(Xn).all(axis=0)
            accept = finite & (err <= 1.0)
            fac = np.where(finite, np.clip(_SAFETY * err ** -0.2, _FAC_MIN, _FAC_MAX), _FAC_MIN)
        fac = np.where(accept, fac, np.minimum(fac, 1.0))
        h_new = hs * fac
        h = np.where(accept & truncated, np.maximum(h_new, h), h_new)
        steps += 1
        last_bad = ~finite

        if accept.any():
            X[:, accept] = Xn[:, accept]
            K1[:, accept] = K7[:, accept]
            reached = accept & truncated
            t = np.where(reached, target, np.where(accept, t + hs, t))
            nobs = np.where(reached, nobs + 1, nobs)
        else:
            reached = np.zeros(idx.size, dtype=bool)

        finished = np.zeros(idx.size, dtype=bool)
        if accept.any():
            with np.errstate(over="ignore", invalid="ignore"):
                diverged = accept & ((_norm(X) > bound) | ~np.isfinite(X).all(axis=0))
            if diverged.any():
                retire(diverged, DIVERGED)
                finished |= diverged
            check = reached & ~finished
            if check.any():
                done = observe(check)
                stopped = np.zeros(idx.size, dtype=bool)
                stopped[np.flatnonzero(check)[done]] = True
                if stopped.any():
                    retire(stopped, STOPPED)
                    finished |= stopped
            over = ~finished & (t >= t_end)
            if over.any():
                retire(over, TIMEOUT)
                finished |= over
        stall = ~finished & (hs <= 1e-13 * np.maximum(1.0, np.abs(t))) & ~accept
        if stall.any():
            blew = stall & last_bad
            if blew.any():
                retire(blew, DIVERGED)
            if (stall & ~blew).any():
                retire(stall & ~blew, STALLED)
            finished |= stall
        exhausted = ~finished & (steps >= cfg.max_steps)
        if exhausted.any():
            retire(exhausted, TIMEOUT)
            finished |= exhausted

        if finished.any():
            keep = ~finished
            X, K1, idx, t, nobs, steps, h = (
                X[:, keep],
                K1[:, keep],
                idx[keep],
                t[keep],
                nobs[keep],
                steps[keep],
                h[keep],
            )

    return BatchOutcome(status=status, times=final_t, states=final_x, steps=total_steps)


def integrate(
    field: VectorField,
    x0: Sequence[float] | np.ndarray,
    cfg: IntegratorConfig,
    stop: Callable[[float, np.ndarray], bool] | None = None,
) -> Trajectory:
    """Integrate one initial condition and record it at every observation time.

    Stops when ``stop(t, x)`` first holds at an observation, or at ``max_time``
    / ``max_steps``.

    Raises:
        NonFiniteState: the state became non-finite or exceeded the divergence bound.
        StepSizeUnderflow: the step-size controller stalled.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.shape != (field.dimension,):
        raise ValueError(f"x0 must have length {field.dimension}")
    if not np.isfinite(x0).all():
        raise ValueError("x0 must be finite")
    times: list[float] = []
    states: list[np.ndarray] = []

    def record(rows, t, X):
        times.append(float(t[0]))
        states.append(X[:, 0].copy())
        return np.array([stop is not None and bool(stop(float(t[0]), X[:, 0].copy()))])

    out = integrate_batch(field, x0[None, :], cfg, record)
    code = out.status[0]
    if code == DIVERGED:
        raise NonFiniteState(f"trajectory from {x0.tolist()} diverged at t={out.times[0]:.6g}")
    if code == STALLED:
        raise StepSizeUnderflow(f"step size underflow at t={out.times[0]:.6g}")
    return Trajectory(times=np.array(times), states=np.array(states).reshape(len(times), field.dimension))


def _fd_jacobian(field: VectorField, x: np.ndarray, steps: np.ndarray) -> np.ndarray:
    n = field.dimension
    shifts = np.diag(steps)
    probes = np.concatenate([x[:, None] + shifts, x[:, None] - shifts], axis=1)
    vals = field.rhs(probes, field.p)
    if not np.isfinite(vals).all():
        raise NonFiniteState(f"right-hand side is not finite near {x.tolist()}")
    return (vals[:, :n] - vals[:, n:]) / (2.0 * steps)


def jacobian(field: VectorField, x: Sequence[float] | np.ndarray) -> np.ndarray:
    """Central-difference Jacobian ``J[i, j] = d f_i / d x_j`` with one Richardson
    extrapolation step (h and h/2), accurate to O(h^4)."""
    x = np.asarray(x, dtype=float).ravel()
    if x.shape != (field.dimension,) or not np.isfinite(x).all():
        raise ValueError("x must be a finite vector of the field's dimension")
    h = 1e-3 * np.maximum(1.0, np.abs(x))
    coarse = _fd_jacobian(field, x, h)
    fine = _fd_jacobian(field, x, h / 2)
    return (4.0 * fine - coarse) / 3.0


def _tangent_field(field: VectorField) -> VectorField:
    n = field.dimension
    base = field.rhs

    def rhs(state, p):
        x, v = state[:n], state[n:]
        nv = np.sqrt(np.sum(v * v, axis=0))
        nv = np.where(nv > 0, nv, 1.0)
        u = v / nv
        delta = 1e-6 * (1.0 + np.sqrt(np.sum(x * x, axis=0)))
        k = x.shape[1] if x.ndim == 2 else None
        if k is None:
            probes = np.stack([x, x + delta * u, x - delta * u], axis=1)
            vals = base(probes, p)
            fx, jv = vals[:, 0], (vals[:, 1] - vals[:, 2]) / (2 * delta) * nv
        else:
            probes = np.concatenate([x, x + delta * u, x - delta * u], axis=1)
            vals = base(probes, p)
            fx = vals[:, :k]
            jv = (vals[:, k : 2 * k] - vals[:, 2 * k :]) / (2 * delta) * nv
        return np.concatenate([fx, jv], axis=0)

    return VectorField(rhs=rhs, dimension=2 * n, parameters=field.parameters, name=f"tangent({field.name})")


def max_lyapunov_batch(
    field: VectorField,
    points: np.ndarray,
    cfg: IntegratorConfig,
    transient: float = 100.0,
    total_time: float = 1000.0,
    renormalize_every: float = 1.0,
) -> np.ndarray:
    """Maximal Lyapunov exponents for several starting points at once.

    Integrates the state together with one tangent vector, renormalising the
    tangent vector every ``renormalize_every`` time units and averaging its
    log growth after ``transient``. Rows that diverge get ``nan``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    m, n = points.shape
    if not total_time > transient >= 0:
        raise ValueError("total_time must exceed transient")
    rng = np.random.default_rng(12345)
    v0 = rng.normal(size=n)
    v0 /= np.linalg.norm(v0)
    aug = np.concatenate([points, np.tile(v0, (m, 1))], axis=1)
    interval = max(cfg.dt_observe, renormalize_every)
    tcfg = dataclasses.replace(cfg, dt_observe=interval, max_time=total_time)
    log_sum = np.zeros(m)
    measured = np.zeros(m)

    def renormalize(rows, t, X):
        v = X[n:]
        norms = np.sqrt(np.sum(v * v, axis=0))
        counted = t > transient + 1e-9 * interval
        log_sum[rows[counted]] += np.log(norms[counted])
        measured[rows[counted]] += interval
        X = X.copy()
        X[n:] = v / np.where(norms > 0, norms, 1.0)
        return np.zeros(rows.size, dtype=bool), X

    out = integrate_batch(_tangent_field(field), aug, tcfg, renormalize)
    with np.errstate(invalid="ignore", divide="ignore"):
        result = log_sum / measured
    result[out.status == DIVERGED] = np.nan
    result[out.status == STALLED] = np.nan
    return result


def max_lyapunov(
    field: VectorField,
    x0_on_attractor: Sequence[float] | np.ndarray,
    cfg: IntegratorConfig,
    transient: float = 100.0,
    total_time: float = 1000.0,
    renormalize_every: float = 1.0,
) -> float:
    """Largest Lyapunov exponent of the trajectory started at ``x0_on_attractor``."""
    value = max_lyapunov_batch(
        field, np.asarray(x0_on_attractor, dtype=float)[None, :], cfg, transient, total_time, renormalize_every
    )[0]
    if not np.isfinite(value):
        raise NonFiniteState("trajectory diverged while estimating the Lyapunov exponent")
    return float(value)
