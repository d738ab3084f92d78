"""Command-line front end.

Configuration is a flat ``key = value`` file plus ``--set key=value``
overrides.  Parameter overrides use the ``p.<name>`` prefix, e.g.
``p.E = 0.36``.  Exit codes: 0 success, 1 configuration error, 2 empty result.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .continuation import ParameterCurve, global_continuation, measures_along_continuation, step_rng
from .dynsys import IntegratorConfig
from .errors import ConfigError, NoAttractorsFound, ResilienceError
from .local_measures import NOT_APPLICABLE, local_measures
from .mapping import Grid, RecurrenceConfig, find_attractors
from .nonlocal_measures import UniformBoxSampler, accumulate, nonlocal_measures
from .systems import SYSTEMS, get_system, oracle_answers

MEASURES = (
    "t_R", "R0", "rho_max", "t_max", "s_min", "s_max", "S", "med_tau", "med_beta", "S_ft",
    "lyapunov_max", "summary", "unresolved_fraction",
)  # fmt: skip
CONVERGENCE_MEASURES = ("S", "s_min", "s_max", "med_tau", "med_beta", "S_ft", "t_R", "R0", "rho_max", "t_max")

_FLOAT_KEYS = {
    "sweep_start", "sweep_step", "sweep_stop", "epsilon", "finite_time", "abs_tol", "rel_tol",
    "dt_observe", "max_time", "lyapunov_transient", "lyapunov_total", "match_threshold",
}  # fmt: skip
_INT_KEYS = {
    "N", "seeds_per_step", "seed", "max_steps", "consecutive_recurrences", "attractor_locate_steps",
    "consecutive_lost_steps", "consecutive_attractor_steps", "convergence_seeds",
}  # fmt: skip
_LIST_KEYS = {"grid_min", "grid_max", "grid_cells", "box_lower", "box_upper", "sweep_values", "ladder"}
_OTHER_KEYS = {"system", "sweep_parameter", "dump_accumulators"}


@dataclass(frozen=True)
class RunConfig:
    system: str
    params: dict
    sweep_parameter: str
    sweep_values: tuple[float, ...]
    grid: Grid
    box: tuple[tuple[float, ...], tuple[float, ...]]
    N: int
    seeds_per_step: int
    epsilon: float
    finite_time: float
    seed: int
    finding: IntegratorConfig
    measuring: IntegratorConfig
    recurrence: RecurrenceConfig
    lyapunov_times: tuple[float, float]
    match_threshold: float
    ladder: tuple[int, ...]
    convergence_seeds: int
    dump_accumulators: bool


def read_config_file(path: str | Path) -> dict[str, str]:
    entries: dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}", "expected key = value")
        entries[key.strip()] = value.strip()
    return entries


def _split_override(item: str) -> tuple[str, str]:
    key, sep, value = item.partition("=")
    if not sep or not key.strip():
        raise ConfigError(item, "expected key=value")
    return key.strip(), value.strip()


def _number(key: str, text: str, kind=float):
    try:
        value = float(text)
    except ValueError:
        value = math.nan
    if math.isnan(value) or (kind is int and not value.is_integer()):
        raise ConfigError(key, f"not a valid {'integer' if kind is int else 'number'}: {text!r}")
    return int(value) if kind is int else value


def _numbers(key: str, text: str, kind=float) -> list:
    parts = [p for p in text.replace(";", ",").split(",") if p.strip()]
    if not parts:
        raise ConfigError(key, "expected a comma-separated list")
    return [_number(key, p.strip(), kind) for p in parts]


def _positive(key: str, value) -> None:
    if not value > 0:
        raise ConfigError(key, f"must be positive, got {value}")


def build_config(entries: dict[str, str], seed: int | None = None) -> RunConfig:
    """Validate raw ``key -> text`` entries against the chosen system's defaults."""
    if "system" not in entries:
        raise ConfigError("system", f"required; one of {sorted(SYSTEMS)}")
    try:
        spec = get_system(entries["system"])
    except KeyError:
        raise ConfigError("system", f"unknown system {entries['system']!r}; one of {sorted(SYSTEMS)}") from None
    field = spec.field()
    params = dict(spec.defaults)
    values: dict = {}
    for key, text in entries.items():
        if key.startswith("p."):
            name = key[2:]
            if name not in field.parameter_names:
                raise ConfigError(key, f"{spec.name} has no parameter {name!r}")
            params[name] = _number(key, text)
        elif key in _FLOAT_KEYS:
            values[key] = _number(key, text)
        elif key in _INT_KEYS:
            values[key] = _number(key, text, int)
        elif key in {"grid_cells", "ladder"}:
            values[key] = _numbers(key, text, int)
        elif key in _LIST_KEYS:
            values[key] = _numbers(key, text)
        elif key in _OTHER_KEYS:
            values[key] = text
        else:
            raise ConfigError(key, "unknown configuration key")
    if seed is not None:
        values["seed"] = seed

    n = spec.dimension
    for key in ("N", "seeds_per_step", "epsilon", "finite_time", "abs_tol", "rel_tol", "dt_observe", "max_time",
                "max_steps", "consecutive_recurrences", "attractor_locate_steps", "consecutive_lost_steps",
                "consecutive_attractor_steps", "convergence_seeds", "lyapunov_total", "match_threshold"):  # fmt: skip
        if key in values:
            _positive(key, values[key])
    if values.get("seed", 0) < 0:
        raise ConfigError("seed", "must be non-negative")

    def vector(key, default):
        v = values.get(key, default)
        if len(v) != n:
            raise ConfigError(key, f"needs {n} entries for {spec.name}")
        return tuple(v)

    grid_min = vector("grid_min", spec.grid.minima.tolist())
    grid_max = vector("grid_max", spec.grid.maxima.tolist())
    cells = vector("grid_cells", list(spec.grid.shape))
    for k in range(n):
        if not grid_min[k] < grid_max[k]:
            raise ConfigError("grid_max", "must exceed grid_min in every dimension")
        if cells[k] < 2:
            raise ConfigError("grid_cells", "needs at least 2 cells per dimension")
    grid = Grid(tuple(zip(grid_min, grid_max, cells)))
    lower = vector("box_lower", list(spec.box[0]))
    upper = vector("box_upper", list(spec.box[1]))
    if not all(lo < hi for lo, hi in zip(lower, upper)):
        raise ConfigError("box_upper", "must exceed box_lower in every dimension")
    if not (grid.lower <= np.array(lower)).all() or not (np.array(upper) <= grid.upper).all():
        raise ConfigError("box_lower", "the sampling box must lie inside the grid")

    sweep_parameter = values.get("sweep_parameter", spec.sweep_parameter)
    if sweep_parameter not in field.parameter_names:
        raise ConfigError("sweep_parameter", f"{spec.name} has no parameter {sweep_parameter!r}")
    if "sweep_values" in values:
        sweep = tuple(values["sweep_values"])
    else:
        start = values.get("sweep_start", spec.sweep[0])
        step = values.get("sweep_step", spec.sweep[1])
        stop = values.get("sweep_stop", spec.sweep[2])
        _positive("sweep_step", step)
        if stop < start:
            raise ConfigError("sweep_stop", "must not be below sweep_start")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        sweep = tuple(np.round(start + step * np.arange(count), 12).tolist())

    def integrator(base: IntegratorConfig) -> IntegratorConfig:
        updates = {k: values[k] for k in ("abs_tol", "rel_tol", "dt_observe", "max_time", "max_steps") if k in values}
        try:
            return dataclasses.replace(base, **updates)
        except ValueError as exc:
            raise ConfigError("dt_observe", str(exc)) from None

    rc_updates = {
        k: values[k]
        for k in ("consecutive_recurrences", "attractor_locate_steps", "consecutive_lost_steps", "consecutive_attractor_steps")
        if k in values
    }
    transient = values.get("lyapunov_transient", spec.lyapunov_times[0])
    total = values.get("lyapunov_total", spec.lyapunov_times[1])
    if not total > transient >= 0:
        raise ConfigError("lyapunov_total", "must exceed lyapunov_transient, which must be non-negative")
    ladder = tuple(values.get("ladder", [100, 1000, 10_000, 100_000]))
    if any(v < 1 for v in ladder):
        raise ConfigError("ladder", "sample sizes must be positive")
    dump = values.get("dump_accumulators", "false").lower()
    if dump not in {"true", "false", "1", "0", "yes", "no"}:
        raise ConfigError("dump_accumulators", "expected true or false")

    return RunConfig(
        system=spec.name,
        params=params,
        sweep_parameter=sweep_parameter,
        sweep_values=sweep,
        grid=grid,
        box=(lower, upper),
        N=values.get("N", 10_000),
        seeds_per_step=values.get("seeds_per_step", spec.seeds_per_step),
        epsilon=values.get("epsilon", spec.epsilon),
        finite_time=values.get("finite_time", spec.finite_time),
        seed=values.get("seed", 0),
        finding=integrator(spec.finding),
        measuring=integrator(spec.measuring),
        recurrence=dataclasses.replace(spec.recurrence, **rc_updates),
        lyapunov_times=(transient, total),
        match_threshold=values.get("match_threshold", math.inf),
        ladder=ladder,
        convergence_seeds=values.get("convergence_seeds", 20),
        dump_accumulators=dump in {"true", "1", "yes"},
    )


def format_value(value) -> str:
    if value is None or value is NOT_APPLICABLE or (isinstance(value, float) and math.isnan(value)):
        return "na"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.9g}"


def _field(cfg: RunConfig):
    return get_system(cfg.system).build(**cfg.params)


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def cmd_find(cfg: RunConfig, out: Path, workers: int = 1) -> int:
    field = _field(cfg)
    sampler = UniformBoxSampler(*cfg.box)
    ics = sampler(step_rng(cfg.seed, 0, 0), cfg.seeds_per_step)
    _, store = find_attractors(field, ics, cfg.grid, cfg.recurrence, cfg.finding)
    doc = {
        "system": cfg.system,
        "parameters": {k: float(v) for k, v in cfg.params.items()},
        "attractors": [{"id": a.id, "points": a.points.tolist()} for a in store],
    }
    out.mkdir(parents=True, exist_ok=True)
    (out / "attractors.json").write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    print(f"{len(store)} attractor(s) written to {out / 'attractors.json'}")
    return 0 if len(store) else 2


def measure_rows(result, sweep_parameter: str) -> list[list[str]]:
    keyed = []
    for k, step in enumerate(result.steps):
        value = step.parameters[sweep_parameter]
        for aid, m in step.measures.items():
            loc = m.local
            entries = {
                "t_R": loc if loc is NOT_APPLICABLE else loc.t_R,
                "R0": loc if loc is NOT_APPLICABLE else loc.R0,
                "rho_max": loc if loc is NOT_APPLICABLE else loc.rho_max,
                "t_max": loc if loc is NOT_APPLICABLE else loc.t_max,
                "s_min": m.nonlocal_.s_min,
                "s_max": m.nonlocal_.s_max,
                "S": m.nonlocal_.S,
                "med_tau": m.nonlocal_.med_tau,
                "med_beta": m.nonlocal_.med_beta,
                "S_ft": m.nonlocal_.S_ft,
                "lyapunov_max": m.lyapunov_max,
                "summary": m.summary,
                "unresolved_fraction": step.unresolved_fraction,
            }
            for name in MEASURES:
                keyed.append(((value, aid, name, k), [format_value(value), str(aid), name, format_value(entries[name])]))
    keyed.sort(key=lambda item: item[0])
    return [row for _, row in keyed]


def cmd_continue(cfg: RunConfig, out: Path, workers: int = 1) -> int:
    field = _field(cfg)
    curve = ParameterCurve.sweep(cfg.sweep_parameter, cfg.sweep_values)
    sampler = UniformBoxSampler(*cfg.box)
    try:
        stores = global_continuation(
            field, curve, cfg.grid, cfg.recurrence, cfg.finding, cfg.seeds_per_step, sampler,
            seed=cfg.seed, threshold=cfg.match_threshold,
        )  # fmt: skip
    except NoAttractorsFound as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    result = measures_along_continuation(
        field, stores, curve, sampler, cfg.N, cfg.epsilon, cfg.finite_time, cfg.measuring, cfg.grid,
        seed=cfg.seed, workers=workers, lyapunov_times=cfg.lyapunov_times, keep_accumulators=cfg.dump_accumulators,
    )  # fmt: skip
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "measures.csv", ("param", "attractor_id", "measure", "value"), measure_rows(result, cfg.sweep_parameter))
    if cfg.dump_accumulators:
        for k, step in enumerate(result.steps):
            step.accumulator.save(out / f"accumulator_{k:04d}.csv")
    print(f"{len(result.steps)} step(s) written to {out / 'measures.csv'}")
    return 0


def convergence_rows(cfg: RunConfig, workers: int = 1) -> list[list[str]]:
    """Estimates against closed forms for every sample size and seed of the ladder."""
    field = _field(cfg)
    answers = oracle_answers(cfg.params["a"], cfg.box)
    sampler = UniformBoxSampler(*cfg.box)
    _, store = find_attractors(field, sampler(step_rng(cfg.seed, 0, 0), 20), cfg.grid, cfg.recurrence, cfg.finding)
    origin = min(store, key=lambda a: float(np.linalg.norm(a.centroid)))
    local = local_measures(field, origin, cfg.grid)
    truth = {
        "S": answers.S,
        "s_min": answers.s_min,
        "s_max": answers.s_max,
        "med_tau": answers.median_tau(cfg.epsilon),
        "med_beta": answers.median_beta(cfg.epsilon),
        "S_ft": answers.S_ft(cfg.finite_time, cfg.epsilon),
        "t_R": answers.t_R,
        "R0": answers.R0,
        "rho_max": answers.rho_max,
        "t_max": answers.t_max,
    }
    rows = []
    for N in cfg.ladder:
        for s in range(cfg.convergence_seeds):
            ics = sampler(step_rng(cfg.seed, N, s), N)
            acc = accumulate(field, store, ics, cfg.epsilon, cfg.measuring, workers=workers)
            nl = nonlocal_measures(acc, origin.id, cfg.finite_time)
            est = dataclasses.asdict(nl)
            est.update(
                t_R=getattr(local, "t_R", None),
                R0=getattr(local, "R0", None),
                rho_max=getattr(local, "rho_max", None),
                t_max=getattr(local, "t_max", None),
            )
            for name in CONVERGENCE_MEASURES:
                e = est[name]
                err = None if e is None else abs(e - truth[name]) if math.isfinite(e) else math.inf
                rows.append([str(N), str(s), name, format_value(e), format_value(truth[name]), format_value(err)])
    return rows


def cmd_oracle_convergence(cfg: RunConfig, out: Path, workers: int = 1) -> int:
    if cfg.system != "oracle":
        raise ConfigError("system", "oracle-convergence needs system = oracle")
    rows = convergence_rows(cfg, workers)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "convergence.csv", ("N", "seed", "measure", "estimate", "truth", "abs_error"), rows)
    print(f"{len(rows)} row(s) written to {out / 'convergence.csv'}")
    return 0


COMMANDS = {"find": cmd_find, "continue": cmd_continue, "oracle-convergence": cmd_oracle_convergence}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resilience", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="flat key = value configuration file")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one entry")
    parser.add_argument("--seed", type=int, help="random seed (overrides the config)")
    parser.add_argument("--workers", type=int, default=1, help="parallel workers; results do not depend on it")
    parser.add_argument("--out", default=".", help="output directory")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    started = time.perf_counter()
    try:
        entries = read_config_file(args.config) if args.config else {}
        entries.update(_split_override(item) for item in args.set)
        if args.seed is not None and args.seed < 0:
            raise ConfigError("seed", "must be non-negative")
        if args.workers < 1:
            raise ConfigError("workers", "must be positive")
        cfg = build_config(entries, args.seed)
        code = COMMANDS[args.command](cfg, Path(args.out), args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except ResilienceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"done in {time.perf_counter() - started:.1f} s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
