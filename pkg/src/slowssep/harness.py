"""Experiment configurations, execution and on-disk reports.

A run writes one directory holding ``spec.json`` (the fully resolved
configuration), ``report.json`` (results and checks; schema below), one CSV
per emitted table, and ``run_info.json`` with wall-clock data. Timing lives
only in ``run_info.json`` so that the other files are byte-identical across
reruns with the same configuration.

report.json, schema_version 1::

    {"schema_version": 1, "software_version": str, "name": str, "mode": str,
     "base_seed": int, "spec": {...}, "complete": bool, "passed": bool,
     "points": [{"point": int, <parameters>, "seed": int | null, ...}],
     "checks": [{"name": str, "description": str, "passed": bool,
                 "summary": {...}, "rows": [...]}],
     "tables": [str, ...]}
"""

from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import tomlkit

from . import __version__, exact, limits, observables, simulator, verify
from .model import Configuration, DomainError, ModelParams, TimeScale

SCHEMA_VERSION = 1
MODES = ("stationary", "trajectory", "exact", "pde", "ode", "verify")
LEVELS = ("fast", "full")

PDE_PROFILES: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "zeros": lambda u: np.zeros_like(u),
    "ones": lambda u: np.ones_like(u),
    "half": lambda u: np.full_like(u, 0.5),
    "linear": lambda u: u,
    "square": lambda u: u ** 2,
    "step": lambda u: (u < 0.5).astype(float),
    "sine": lambda u: 0.5 + 0.4 * np.sin(np.pi * u),
}
CONFIG_NAMES = ("zeros", "ones", "alternating", "left-half")
ESTIMATE_COLUMNS = ("quantity", "index", "estimate", "se", "n_samples")

_REQUIRED_GRID = {
    "stationary": ("N", "theta", "c", "alpha", "beta"),
    "trajectory": ("N", "theta", "c", "alpha", "beta"),
    "exact": ("N", "theta", "c", "alpha", "beta"),
    "pde": ("theta", "c", "alpha", "beta"),
    "ode": ("c", "alpha", "beta"),
    "verify": (),
}


class SpecError(ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass(frozen=True)
class Grid:
    N: tuple[int, ...] = ()
    theta: tuple[float, ...] = ()
    c: tuple[float, ...] = ()
    alpha: tuple[float, ...] = ()
    beta: tuple[float, ...] = ()


@dataclass(frozen=True)
class Sampling:
    burn_in: float | None = None
    thinning: int | None = None
    n_samples: int = 1000
    n_replicas: int = 4
    n_batches: int = simulator.DEFAULT_BATCHES
    with_pairs: bool = False


@dataclass(frozen=True)
class Numerics:
    M: int = limits.DEFAULT_M
    dt: float = limits.DEFAULT_DT
    T: float = 1.0
    times: tuple[float, ...] = ()
    initial: str = "zeros"
    m0: float = 0.0
    timescale: str = "boundary"

    @property
    def output_times(self) -> tuple[float, ...]:
        return self.times if self.times else (self.T,)


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    mode: str
    grid: Grid = Grid()
    sampling: Sampling = Sampling()
    numerics: Numerics = Numerics()
    base_seed: int = verify.DEFAULT_BASE_SEED
    output: str = "runs"
    level: str = "fast"

    def points(self) -> list[dict]:
        """Grid points in deterministic order (cartesian product, N varying slowest)."""
        keys = [k for k in ("N", "theta", "c", "alpha", "beta") if getattr(self.grid, k)]
        return [dict(zip(keys, vals))
                for vals in itertools.product(*(getattr(self.grid, k) for k in keys))]


# ----------------------------------------------------------------- parsing


def _as_int(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise SpecError(path, f"expected an integer, got {value!r}")
    return int(value)


def _as_float(value, path):
    if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
        raise SpecError(path, f"expected a number, got {value!r}")
    out = float(value)
    if not math.isfinite(out):
        raise SpecError(path, "must be finite")
    return out


def _as_str(value, path):
    if not isinstance(value, str):
        raise SpecError(path, f"expected a string, got {value!r}")
    return value


def _as_bool(value, path):
    if not isinstance(value, bool):
        raise SpecError(path, f"expected true or false, got {value!r}")
    return value


def _as_list(value, path, conv):
    items = value if isinstance(value, (list, tuple)) else [value]
    if len(items) == 0:
        raise SpecError(path, "must be non-empty")
    return tuple(conv(v, f"{path}[{i}]") for i, v in enumerate(items))


def _section(cls, data, path, converters):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise SpecError(path, "expected a table")
    kwargs = {}
    for key, value in data.items():
        if key not in converters:
            raise SpecError(f"{path}.{key}", "unknown field")
        kwargs[key] = converters[key](value, f"{path}.{key}")
    return cls(**kwargs)


_GRID_CONV = {
    "N": lambda v, p: _as_list(v, p, _as_int),
    "theta": lambda v, p: _as_list(v, p, _as_float),
    "c": lambda v, p: _as_list(v, p, _as_float),
    "alpha": lambda v, p: _as_list(v, p, _as_float),
    "beta": lambda v, p: _as_list(v, p, _as_float),
}
_SAMPLING_CONV = {
    "burn_in": _as_float, "thinning": _as_int, "n_samples": _as_int,
    "n_replicas": _as_int, "n_batches": _as_int, "with_pairs": _as_bool,
}
_NUMERICS_CONV = {
    "M": _as_int, "dt": _as_float, "T": _as_float,
    "times": lambda v, p: _as_list(v, p, _as_float),
    "initial": _as_str, "m0": _as_float, "timescale": _as_str,
}
_TOP_KEYS = ("name", "mode", "grid", "sampling", "numerics", "base_seed", "output", "level")


def spec_from_mapping(data: dict) -> ExperimentSpec:
    """Build and validate a spec from nested plain data (as read from TOML)."""
    if not isinstance(data, dict):
        raise SpecError("<root>", "expected a table")
    for key in data:
        if key not in _TOP_KEYS:
            raise SpecError(key, "unknown field")
    if "name" not in data:
        raise SpecError("name", "required")
    if "mode" not in data:
        raise SpecError("mode", "required")
    spec = ExperimentSpec(
        name=_as_str(data["name"], "name"),
        mode=_as_str(data["mode"], "mode"),
        grid=_section(Grid, data.get("grid"), "grid", _GRID_CONV),
        sampling=_section(Sampling, data.get("sampling"), "sampling", _SAMPLING_CONV),
        numerics=_section(Numerics, data.get("numerics"), "numerics", _NUMERICS_CONV),
        base_seed=_as_int(data.get("base_seed", verify.DEFAULT_BASE_SEED), "base_seed"),
        output=_as_str(data.get("output", "runs"), "output"),
        level=_as_str(data.get("level", "fast"), "level"),
    )
    validate(spec)
    return spec


def validate(spec: ExperimentSpec) -> None:
    if not spec.name:
        raise SpecError("name", "must be non-empty")
    if spec.mode not in MODES:
        raise SpecError("mode", f"must be one of {', '.join(MODES)}")
    if spec.level not in LEVELS:
        raise SpecError("level", f"must be one of {', '.join(LEVELS)}")
    if spec.base_seed < 0:
        raise SpecError("base_seed", "must be non-negative")
    for key in _REQUIRED_GRID[spec.mode]:
        if not getattr(spec.grid, key):
            raise SpecError(f"grid.{key}", f"required for mode {spec.mode!r}")
    g = spec.grid
    for i, n in enumerate(g.N):
        if n < 3:
            raise SpecError(f"grid.N[{i}]", "must be >= 3")
        if spec.mode == "exact" and n > exact.N_MAX:
            raise SpecError(f"grid.N[{i}]", f"enumeration supports N <= {exact.N_MAX}")
    for i, v in enumerate(g.theta):
        if v < 0:
            raise SpecError(f"grid.theta[{i}]", "must be >= 0")
    for i, v in enumerate(g.c):
        if v <= 0:
            raise SpecError(f"grid.c[{i}]", "must be > 0")
    for key in ("alpha", "beta"):
        for i, v in enumerate(getattr(g, key)):
            if not 0 < v < 1:
                raise SpecError(f"grid.{key}[{i}]", "must lie in (0, 1)")

    s = spec.sampling
    if s.burn_in is not None and s.burn_in <= 0:
        raise SpecError("sampling.burn_in", "must be > 0")
    if s.thinning is not None and s.thinning < 1:
        raise SpecError("sampling.thinning", "must be >= 1")
    for key in ("n_samples", "n_replicas", "n_batches"):
        if getattr(s, key) < 1:
            raise SpecError(f"sampling.{key}", "must be >= 1")
    if spec.mode == "stationary" and s.n_samples * s.n_replicas < 2:
        raise SpecError("sampling.n_samples", "need at least 2 samples in total")
    if spec.mode == "trajectory" and s.n_replicas < 2:
        raise SpecError("sampling.n_replicas", "trajectory mode needs >= 2 replicas")

    m = spec.numerics
    if m.M < 2:
        raise SpecError("numerics.M", "must be >= 2")
    if m.dt <= 0:
        raise SpecError("numerics.dt", "must be > 0")
    if m.T <= 0:
        raise SpecError("numerics.T", "must be > 0")
    times = np.asarray(m.times, dtype=float)
    if times.size and (np.any(np.diff(times) <= 0) or times[0] <= 0 or times[-1] > m.T):
        raise SpecError("numerics.times", "must be strictly increasing within (0, T]")
    if not 0 <= m.m0 <= 1:
        raise SpecError("numerics.m0", "must lie in [0, 1]")
    if m.timescale not in tuple(t.value for t in TimeScale):
        raise SpecError("numerics.timescale", "must be raw, diffusive or boundary")
    if spec.mode == "pde" and m.initial not in PDE_PROFILES:
        raise SpecError("numerics.initial", f"must be one of {', '.join(PDE_PROFILES)}")
    if spec.mode == "trajectory" and m.initial not in CONFIG_NAMES:
        if set(m.initial) - {"0", "1"}:
            raise SpecError("numerics.initial",
                            f"must be one of {', '.join(CONFIG_NAMES)} or a 0/1 string")
        if any(len(m.initial) != n - 1 for n in g.N):
            raise SpecError("numerics.initial", "0/1 string length must equal N-1")
    for i, point in enumerate(spec.points() if spec.mode in ("stationary", "trajectory",
                                                             "exact") else []):
        try:
            ModelParams(**point)
        except DomainError as exc:
            raise SpecError(f"grid[{i}]", str(exc)) from exc


def spec_to_mapping(spec: ExperimentSpec) -> dict:
    """Nested plain data; fields equal to None are omitted (TOML has no null)."""
    def clean(obj):
        out = {}
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if v is None or v == ():
                continue
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    return {
        "name": spec.name, "mode": spec.mode, "base_seed": spec.base_seed,
        "output": spec.output, "level": spec.level,
        "grid": clean(spec.grid), "sampling": clean(spec.sampling),
        "numerics": clean(spec.numerics),
    }


def spec_to_toml(spec: ExperimentSpec) -> str:
    return tomlkit.dumps(spec_to_mapping(spec))


def parse_toml(text: str) -> dict:
    try:
        return tomlkit.parse(text).unwrap()
    except tomlkit.exceptions.ParseError as exc:
        raise SpecError("<config>", str(exc)) from exc


def spec_from_toml(text: str) -> ExperimentSpec:
    return spec_from_mapping(parse_toml(text))


def _parse_value(text: str) -> Any:
    try:
        return tomlkit.parse(f"v = {text}").unwrap()["v"]
    except tomlkit.exceptions.ParseError:
        pass
    try:
        return float(text)  # forms TOML rejects, such as ".2" or "1."
    except ValueError:
        return text


def apply_overrides(data: dict, overrides: Sequence[str]) -> dict:
    """Apply ``key.path=value`` overrides; values are read as TOML, else as strings."""
    out = json.loads(json.dumps(data))
    for item in overrides:
        if "=" not in item:
            raise SpecError(item, "override must look like key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        if not all(parts):
            raise SpecError(key, "malformed key")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise SpecError(key, f"{p} is not a table")
        node[parts[-1]] = _parse_value(raw.strip())
    return out


def load_spec(config_path: str | Path | None, overrides: Sequence[str] = (),
              defaults: dict | None = None) -> ExperimentSpec:
    data = dict(defaults or {})
    if config_path is not None:
        data.update(parse_toml(Path(config_path).read_text(encoding="utf-8")))
    return spec_from_mapping(apply_overrides(data, overrides))


# ------------------------------------------------------------------ reports


@dataclass
class RunReport:
    spec: ExperimentSpec
    points: list[dict] = field(default_factory=list)
    checks: list[dict] = field(default_factory=list)
    tables: dict[str, list[dict]] = field(default_factory=dict)
    complete: bool = True
    wall_clock: float = 0.0
    check_seconds: dict[str, float] = field(default_factory=dict)
    software_version: str = __version__

    @property
    def passed(self) -> bool:
        return self.complete and all(c["passed"] for c in self.checks)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "software_version": self.software_version,
            "name": self.spec.name,
            "mode": self.spec.mode,
            "base_seed": self.spec.base_seed,
            "spec": spec_to_mapping(self.spec),
            "complete": self.complete,
            "passed": self.passed,
            "points": self.points,
            "checks": self.checks,
            "tables": sorted(f"{k}.csv" for k in self.tables),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, dict)):
        return json.dumps(_jsonable(v))
    return v


def write_table(path: Path, rows: list[dict]) -> None:
    header: list[str] = []
    for r in rows:
        header.extend(k for k in r if k not in header)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(r.get(k, "")) for k in header])


def write_report(report: RunReport, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "spec.json", spec_to_mapping(report.spec))
    write_json(out / "report.json", report.to_dict())
    for name, rows in report.tables.items():
        write_table(out / f"{name}.csv", rows)
    write_json(out / "run_info.json", {"wall_clock_seconds": report.wall_clock,
                                       "check_seconds": report.check_seconds,
                                       "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
                                       "software_version": report.software_version})
    return out


# ---------------------------------------------------------------- execution


def _check(name, description, passed, summary=None, rows=None) -> dict:
    return {"name": name, "description": description, "passed": bool(passed),
            "summary": summary or {}, "rows": rows or []}


def _initial_configuration(name: str, n_sites: int) -> Configuration:
    if name == "zeros":
        return Configuration.zeros(n_sites)
    if name == "ones":
        return Configuration.ones(n_sites)
    if name == "alternating":
        return Configuration.from_sequence([x % 2 for x in range(1, n_sites + 1)])
    if name == "left-half":
        return Configuration.from_sequence([int(x <= n_sites // 2)
                                            for x in range(1, n_sites + 1)])
    return Configuration.from_string(name)


def _run_exact(spec, report, workers):
    prof_rows, corr_rows, check_rows = [], [], []
    for i, point in enumerate(spec.points()):
        p = ModelParams(**point)
        dist = exact.stationary_distribution(p)
        ex = exact.exact_mean_profile(p, dist)
        cf = exact.closed_form_profile(p)
        err = float(np.max(np.abs(ex.mean - cf.mean)))
        table = exact.exact_two_point(p, dist)
        ratio = (p.N ** p.theta + p.N) * table.max_abs()
        slope, intercept = exact.closed_form_coefficients(p)
        report.points.append({"point": i, **point, "seed": None, "max_error": err,
                              "a_N": slope, "b_N": intercept, "correlation_ratio": ratio,
                              "residual": exact.stationary_residual(p, dist)})
        check_rows.append({"point": i, **point, "max_error": err, "passed": err <= 1e-10})
        for x, e, c in zip(ex.sites, ex.mean, cf.mean):
            prof_rows.append({"point": i, **point, "site": int(x), "exact": e,
                              "closed_form": c})
        n = p.n_sites
        for x in range(1, n + 1):
            for y in range(x + 1, n + 1):
                corr_rows.append({"point": i, **point, "x": x, "y": y, "phi": table(x, y)})
    report.tables["profiles"] = prof_rows
    report.tables["correlations"] = corr_rows
    report.checks.append(_check("exact_profile", "enumerated profile equals a_N x + b_N",
                                all(r["passed"] for r in check_rows), {"tolerance": 1e-10},
                                check_rows))


def _run_stationary(spec, report, workers):
    s = spec.sampling
    sampling = simulator.SamplingSpec(s.burn_in, s.thinning, s.n_samples, s.with_pairs,
                                      s.n_batches)
    prof_rows, corr_rows, check_rows = [], [], []
    for i, point in enumerate(spec.points()):
        p = ModelParams(**point)
        seed = simulator.derive_seed(spec.base_seed, i)
        ens = simulator.run_replicas(p, sampling, s.n_replicas, seed, workers)
        prof = observables.estimate_profile(ens)
        ref = exact.closed_form_profile(p).mean
        z = np.abs(prof.mean - ref) / np.where(prof.se > 0, prof.se, np.inf)
        limit = limits.stationary_profile(p)
        d = observables.weak_distance(prof, observables.DensityMeasure(limit))
        ok = bool(np.all(np.abs(prof.mean - ref) <= verify.SIGMAS * prof.se))
        report.points.append({"point": i, **point, "seed": seed,
                              "replica_seeds": list(ens.seeds), "n_samples": ens.n_samples,
                              "mass_mean": ens.mass_sum / ens.n_samples,
                              "max_abs_z": float(np.max(z)), "weak_distance_to_limit": d})
        check_rows.append({"point": i, **point, "seed": seed, "max_abs_z": float(np.max(z)),
                           "passed": ok})
        for x, m, se, r in zip(prof.sites, prof.mean, prof.se, ref):
            prof_rows.append({"point": i, **point, "seed": seed, "quantity": "density",
                              "index": int(x), "estimate": m, "se": se,
                              "n_samples": prof.n_samples, "exact_mean": r,
                              "limit": float(limit(np.array([x / p.N]))[0])})
        if s.with_pairs:
            table = observables.estimate_two_point(ens)
            for row in table.rows():
                corr_rows.append({"point": i, **point, "seed": seed,
                                  **dict(zip(ESTIMATE_COLUMNS, row))})
    report.tables["profile"] = prof_rows
    if s.with_pairs:
        report.tables["correlations"] = corr_rows
    report.checks.append(_check("profile_vs_exact",
                                "per-site means within 3 SE of the exact finite-N profile",
                                all(r["passed"] for r in check_rows),
                                {"sigmas": verify.SIGMAS}, check_rows))


def _run_trajectory(spec, report, workers):
    s, m = spec.sampling, spec.numerics
    ts = TimeScale(m.timescale)
    times = list(m.output_times)
    path_rows, mart_rows, check_rows = [], [], []
    centred_all = True
    for i, point in enumerate(spec.points()):
        p = ModelParams(**point)
        seed = simulator.derive_seed(spec.base_seed, i)
        init = _initial_configuration(m.initial, p.n_sites)
        trajs = simulator.run_trajectory_replicas(p, init, m.T, ts, times, s.n_replicas,
                                                  seed, workers)
        masses = np.array([t.masses for t in trajs])
        mean = masses.mean(axis=0)
        se = masses.std(axis=0, ddof=1) / math.sqrt(len(trajs))
        grid = trajs[0].sample_times
        expected = exact.mean_profile_path(p, grid, init.to_array(), ts).mean(axis=1)
        ok = bool(np.all(np.abs(mean - expected) <= verify.SIGMAS * se + 1e-15))
        diag = observables.martingale_diagnostics(trajs, p)
        centred = bool(np.all(diag.centered()[1:]))
        centred_all &= centred
        report.points.append({"point": i, **point, "seed": seed,
                              "replica_seeds": [t.seed for t in trajs],
                              "initial": str(init), "events_mean": float(np.mean(
                                  [t.events[-1] for t in trajs]))})
        check_rows.append({"point": i, **point, "seed": seed, "passed": ok,
                           "martingale_centred": centred})
        for j, t in enumerate(grid):
            row = {"point": i, **point, "seed": seed, "time": float(t), "mean_mass": mean[j],
                   "se": se[j], "exact_mean_mass": expected[j]}
            if ts is TimeScale.BOUNDARY:
                row["mass_ode"] = float(limits.mass_ode_closed(
                    masses[0, 0], p.c, p.alpha, p.beta, t))
            path_rows.append(row)
            mart_rows.append({"point": i, **point, "seed": seed, "time": float(t),
                              "mean_residual": diag.mean[j], "se": diag.se[j],
                              "variance": diag.variance[j],
                              "quadratic_variation": diag.qv_mean[j]})
    report.tables["mass_path"] = path_rows
    report.tables["martingale"] = mart_rows
    report.checks.append(_check("mass_vs_exact",
                                "ensemble mass within 3 SE of the exact finite-N mean",
                                all(r["passed"] for r in check_rows),
                                {"sigmas": verify.SIGMAS}, check_rows))
    report.checks.append(_check("martingale_centred", "Dynkin residual mean within 3 SE of 0",
                                centred_all, {"sigmas": verify.SIGMAS}))


def _run_pde(spec, report, workers):
    m = spec.numerics
    rho0 = PDE_PROFILES[m.initial]
    times = [0.0] + list(m.output_times)
    check_rows = []
    for i, point in enumerate(spec.points()):
        fam = limits.BoundaryFamily.from_theta(point["theta"])
        f = limits.solve_hde(fam, point["c"], point["alpha"], point["beta"], rho0, m.T,
                             M=m.M, dt=m.dt, times=times)
        within = bool(np.all(f.values >= -1e-12) and np.all(f.values <= 1 + 1e-12))
        row = {"point": i, **point, "family": fam.value, "in_unit_interval": within}
        ok = within
        if fam is limits.BoundaryFamily.NEUMANN:
            drift = float(np.max(np.abs(f.mass() - f.mass()[0])))
            row["mass_drift"] = drift
            ok &= drift <= 1e-10 * max(1.0, m.T)
            target = np.full(f.grid.shape, f.mass()[0])
        else:
            target = limits.family_profile(fam, point["c"], point["alpha"],
                                           point["beta"])(f.grid)
        if fam is limits.BoundaryFamily.DIRICHLET:
            pinned = bool(np.all(f.values[1:, 0] == point["alpha"])
                          and np.all(f.values[1:, -1] == point["beta"]))
            row["boundary_pinned"] = pinned
            ok &= pinned
        row["passed"] = ok
        check_rows.append(row)
        report.points.append({"point": i, **point, "seed": None, "family": fam.value,
                              "distance_to_stationary": float(np.max(np.abs(
                                  f.values[-1] - target))),
                              "final_mass": float(f.mass()[-1])})
        report.tables[f"pde_point{i}"] = [
            {"time": float(t), **{f"u={float(u)!r}": v for u, v in zip(f.grid, vals)}}
            for t, vals in zip(f.times, f.values)]
    report.checks.append(_check("pde_sanity",
                                "solution in [0,1]; Neumann mass conserved; Dirichlet data pinned",
                                all(r["passed"] for r in check_rows), {}, check_rows))


def _run_ode(spec, report, workers):
    m = spec.numerics
    check_rows = []
    for i, point in enumerate(spec.points()):
        path = limits.mass_ode_numeric(m.m0, point["c"], point["alpha"], point["beta"],
                                       m.T, m.dt)
        closed = limits.mass_ode_closed(m.m0, point["c"], point["alpha"], point["beta"],
                                        path.times)
        err = float(np.max(np.abs(path.values - closed)))
        check_rows.append({"point": i, **point, "m0": m.m0, "max_error": err,
                           "passed": err <= 1e-8})
        report.points.append({"point": i, **point, "seed": None, "m0": m.m0,
                              "final_mass": float(path.values[-1]), "max_error": err})
        report.tables[f"ode_point{i}"] = [
            {"time": float(t), "mass": v, "closed_form": c}
            for t, v, c in zip(path.times, path.values, closed)]
    report.checks.append(_check("ode_vs_closed_form", "RK4 path within 1e-8 of the closed form",
                                all(r["passed"] for r in check_rows), {"tolerance": 1e-8},
                                check_rows))


def _run_verify(spec, report, workers, progress=None):
    for res in verify.verify_suite(spec.level, spec.base_seed, progress):
        report.checks.append(res.to_dict())
        report.tables[res.name] = res.rows
        report.check_seconds[res.name] = res.seconds


_RUNNERS = {"exact": _run_exact, "stationary": _run_stationary,
            "trajectory": _run_trajectory, "pde": _run_pde, "ode": _run_ode}


def run_experiment(spec: ExperimentSpec, out_dir: str | Path | None = None,
                   workers: int | None = None,
                   progress: Callable[[verify.CheckResult], None] | None = None) -> RunReport:
    """Run ``spec`` and, if ``out_dir`` is given, write its directory of artifacts.

    Solver failures and resource exhaustion stop the run with a report flagged
    incomplete (and therefore failed) rather than raising.
    """
    validate(spec)
    report = RunReport(spec)
    start = time.perf_counter()
    try:
        if spec.mode == "verify":
            _run_verify(spec, report, workers, progress)
        else:
            _RUNNERS[spec.mode](spec, report, workers)
    except (MemoryError, OverflowError, exact.SolverError) as exc:
        report.complete = False
        report.checks.append(_check("incomplete", "run stopped early", False,
                                    {"error": f"{type(exc).__name__}: {exc}"}))
    report.wall_clock = time.perf_counter() - start
    if out_dir is not None:
        write_report(report, out_dir)
    return report
