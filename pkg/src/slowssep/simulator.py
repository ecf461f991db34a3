"""Exact stochastic simulation: single steps, trajectories and stationary ensembles.

Random streams come from :class:`numpy.random.Philox`, a counter-based
generator. Replica streams are keyed by ``SeedSequence(base_seed,
spawn_key=(replica,))`` (see :func:`derive_seed`), so replicas never share a
stream and results do not depend on the order in which replicas finish.
"""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernel
from .model import (
    Configuration,
    DomainError,
    ModelParams,
    TimeScale,
    apply_event,
    as_configuration,
    enumerate_events,
)

DEFAULT_BATCHES = 32
BURN_IN_DEFAULT = 10.0  # macroscopic time at the boundary timescale
_MAX_RAW_TIME = 2.0 ** 52


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))


def derive_seed(base_seed: int, *keys: int) -> int:
    """Seed keyed by ``keys``: first 63 bits of SeedSequence(base, spawn_key=keys).

    ``derive_seed(base, i)`` is the seed of replica i; longer keys namespace
    independent experiments that share a base seed.
    """
    ss = np.random.SeedSequence(int(base_seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def default_workers() -> int:
    env = os.environ.get("SLOWSSEP_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _map(fn, items, workers: int | None):
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# --------------------------------------------------------------------- step


def step(config: Configuration, params: ModelParams, rng: np.random.Generator):
    """One jump of the chain: returns (new configuration, holding time, rng).

    Draws a standard exponential and then a uniform, like the compiled loop.
    The compiled loop lists discordant bonds in ascending order only right
    after initialisation, so the first jump from a fresh state coincides
    with this one for the same stream; later jumps agree in law only.
    """
    config = as_configuration(config)
    events = enumerate_events(config, params)
    total = sum(e.rate for e in events)
    if not total > 0:
        raise RuntimeError("total event rate is zero; boundary rates must be positive")
    holding = rng.standard_exponential() / total
    u = rng.random() * total
    n_exchange = len(events) - 2
    if u < n_exchange:
        chosen = events[min(int(u), n_exchange - 1)]
    elif u < n_exchange + events[-2].rate:
        chosen = events[-2]
    else:
        chosen = events[-1]
    return apply_event(config, chosen), holding, rng


# --------------------------------------------------------------- trajectory


@dataclass
class Trajectory:
    """States of one run at macroscopic sample times.

    Alongside each state the exact raw-time integrals accumulated since time
    0 are kept: ``boundary_integral`` of alpha+beta-eta(1)-eta(N-1),
    ``v_integral`` of V and ``rate_integral`` of r_alpha+r_beta. They are
    exact because boundary occupancies are constant between jumps.
    """

    params: ModelParams
    timescale: TimeScale
    sample_times: np.ndarray
    states: list[Configuration]
    seed: int
    boundary_integral: np.ndarray
    v_integral: np.ndarray
    rate_integral: np.ndarray
    events: np.ndarray
    flips: np.ndarray

    @property
    def multiplier(self) -> float:
        return self.timescale.multiplier(self.params)

    @property
    def masses(self) -> np.ndarray:
        return np.array([s.particles for s in self.states]) / self.params.n_sites

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["macroscopic_time", "mass", "eta_string"])
            for t, s in zip(self.sample_times, self.states):
                w.writerow([repr(float(t)), repr(s.particles / s.n_sites), str(s)])


def run_trajectory(params: ModelParams, init, horizon: float,
                   timescale: TimeScale = TimeScale.BOUNDARY,
                   sample_grid: Sequence[float] | None = None,
                   seed: int = 0) -> Trajectory:
    """Simulate from ``init`` and record the state at each macroscopic grid time.

    The grid always includes time 0; without ``sample_grid`` it is ``[0, horizon]``.

    Macroscopic time t corresponds to raw generator time t * multiplier.
    """
    init = as_configuration(init)
    if init.n_sites != params.n_sites:
        raise DomainError("initial configuration does not match N")
    timescale = TimeScale(timescale)
    mult = timescale.multiplier(params)
    if horizon < 0:
        raise DomainError("horizon must be non-negative")
    if not math.isfinite(horizon * mult) or horizon * mult > _MAX_RAW_TIME:
        raise OverflowError(f"raw horizon {horizon}*{mult} exceeds the time representation")
    if sample_grid is None:
        sample_grid = [0.0, horizon] if horizon > 0 else [0.0]
    grid = np.asarray(sample_grid, dtype=float)
    if grid.size == 0 or grid[0] != 0.0:
        grid = np.concatenate([[0.0], grid])
    if np.any(np.diff(grid) <= 0) or grid[-1] > horizon or grid[0] < 0:
        raise DomainError("sample_grid must be strictly increasing within [0, horizon]")

    return _continue(params, init, horizon, timescale, grid, seed, make_rng(seed))


# --------------------------------------------------------- stationary ensembles


@dataclass
class SampleEnsemble:
    """Sufficient statistics of thinned stationary samples.

    Batch-level sums are kept with a (seed, batch index) key so that merging
    is exactly associative and commutative and batch-means error bars remain
    available after merging.
    """

    params: ModelParams
    n_samples: int
    site_sums: np.ndarray
    pair_sums: np.ndarray | None
    mass_sum: float
    mass_sq_sum: float
    thinning_events: int
    seeds: tuple[int, ...]
    batch_keys: list[tuple[int, int]] = field(default_factory=list)
    batch_counts: np.ndarray | None = None
    batch_site_sums: np.ndarray | None = None
    batch_pair_sums: np.ndarray | None = None
    batch_mass: np.ndarray | None = None  # columns: sum m, sum m^2

    @property
    def has_pairs(self) -> bool:
        return self.pair_sums is not None

    def merge(self, other: "SampleEnsemble") -> "SampleEnsemble":
        if other.params != self.params:
            raise ValueError("cannot merge ensembles with different parameters")
        if self.has_pairs != other.has_pairs:
            raise ValueError("cannot merge ensembles with and without pair sums")
        keys = self.batch_keys + other.batch_keys
        order = sorted(range(len(keys)), key=keys.__getitem__)

        def cat(a, b):
            return np.concatenate([a, b])[order]

        return SampleEnsemble(
            params=self.params,
            n_samples=self.n_samples + other.n_samples,
            site_sums=self.site_sums + other.site_sums,
            pair_sums=None if not self.has_pairs else self.pair_sums + other.pair_sums,
            mass_sum=math.fsum(cat(self.batch_mass, other.batch_mass)[:, 0]),
            mass_sq_sum=math.fsum(cat(self.batch_mass, other.batch_mass)[:, 1]),
            thinning_events=self.thinning_events,
            seeds=tuple(sorted(self.seeds + other.seeds)),
            batch_keys=[keys[i] for i in order],
            batch_counts=cat(self.batch_counts, other.batch_counts),
            batch_site_sums=cat(self.batch_site_sums, other.batch_site_sums),
            batch_pair_sums=(None if not self.has_pairs
                             else cat(self.batch_pair_sums, other.batch_pair_sums)),
            batch_mass=cat(self.batch_mass, other.batch_mass),
        )

    def to_json_dict(self) -> dict:
        from .observables import estimate_profile  # local: observables imports us

        prof = estimate_profile(self)
        out = {
            "params": self.params.to_dict(),
            "n_samples": self.n_samples,
            "thinning_events": self.thinning_events,
            "site_means": prof.mean.tolist(),
            "standard_errors": prof.se.tolist(),
            "mass_mean": self.mass_sum / self.n_samples,
            "seeds": list(self.seeds),
        }
        if self.has_pairs:
            out["pair_second_moments"] = (self.pair_sums / self.n_samples).tolist()
        return out

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=2, sort_keys=True)


def _ensemble_from_state(params, seed, n_samples, thinning, n_batches, with_pairs,
                         eta, bonds, pos, istate, fstate, acc, rng):
    n = params.n_sites
    n_batches = max(1, min(n_batches, n_samples))
    site_sums = np.zeros(n, dtype=np.int64)
    pair_sums = np.zeros((n, n) if with_pairs else (1, 1), dtype=np.int64)
    batch_counts = np.zeros(n_batches, dtype=np.int64)
    batch_site = np.zeros((n_batches, n), dtype=np.int64)
    batch_pair = np.zeros((n_batches, n, n) if with_pairs else (1, 1, 1), dtype=np.int64)
    batch_mass = np.zeros((n_batches, 2))
    mass_acc = np.zeros(2)
    _kernel.sample(eta, bonds, pos, istate, fstate, acc, rng,
                   params.boundary_scale, params.alpha, params.beta,
                   n_samples, thinning / uniform_rate(params), n_batches, with_pairs,
                   site_sums, pair_sums, batch_counts, batch_site, batch_pair,
                   batch_mass, mass_acc)
    return SampleEnsemble(
        params=params, n_samples=n_samples, site_sums=site_sums,
        pair_sums=pair_sums if with_pairs else None,
        mass_sum=math.fsum(batch_mass[:, 0]), mass_sq_sum=math.fsum(batch_mass[:, 1]),
        thinning_events=int(thinning), seeds=(int(seed),),
        batch_keys=[(int(seed), b) for b in range(n_batches)],
        batch_counts=batch_counts, batch_site_sums=batch_site,
        batch_pair_sums=batch_pair if with_pairs else None, batch_mass=batch_mass)


def uniform_rate(params: ModelParams) -> float:
    """Upper bound (N-2) + 2cN^-theta on the total jump rate."""
    return (params.N - 2) + 2.0 * params.boundary_scale


def default_burn_in(params: ModelParams) -> float:
    """Burn-in in macroscopic boundary-timescale units: raw time 10*max(N^2, N^(1+theta))."""
    return BURN_IN_DEFAULT * max(1.0, float(params.N) ** (1.0 - params.theta))


def default_thinning(params: ModelParams) -> int:
    """max(N^2, N^(1+theta)) slots of the uniform rate between samples."""
    return int(math.ceil(max(params.N ** 2, float(params.N) ** (1.0 + params.theta))))


def sample_stationary(params: ModelParams, burn_in: float | None = None,
                      thinning: int | None = None, n_samples: int = 1000,
                      seed: int = 0, with_pairs: bool = False,
                      n_batches: int = DEFAULT_BATCHES) -> SampleEnsemble:
    """Approximate samples from the stationary state.

    Starts from the empty configuration and runs for ``burn_in`` macroscopic
    time at the boundary timescale N^(1+theta) (default
    :func:`default_burn_in`). Afterwards one state is recorded every
    ``thinning / uniform_rate(params)`` units of raw time, i.e. ``thinning``
    event slots of the uniformised chain (default :func:`default_thinning`).
    """
    if burn_in is None:
        burn_in = default_burn_in(params)
    if not burn_in > 0:
        raise DomainError("burn_in must be positive")
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    if thinning is None:
        thinning = default_thinning(params)
    if thinning < 1:
        raise DomainError("thinning must be >= 1")
    raw_burn = burn_in * TimeScale.BOUNDARY.multiplier(params)
    if raw_burn > _MAX_RAW_TIME:
        raise OverflowError("burn-in exceeds the time representation")
    rng = make_rng(seed)
    state = _kernel.new_state(np.zeros(params.n_sites, dtype=np.uint8))
    _kernel.advance(*state, rng, params.boundary_scale, params.alpha, params.beta,
                    raw_burn, np.iinfo(np.int64).max)
    return _ensemble_from_state(params, seed, int(n_samples), int(thinning),
                                int(n_batches), bool(with_pairs), *state, rng)


@dataclass(frozen=True)
class SamplingSpec:
    burn_in: float | None = None
    thinning: int | None = None
    n_samples: int = 1000
    with_pairs: bool = False
    n_batches: int = DEFAULT_BATCHES


def merge_all(ensembles: Sequence[SampleEnsemble]) -> SampleEnsemble:
    out = ensembles[0]
    for e in ensembles[1:]:
        out = out.merge(e)
    return out


def run_replicas(params: ModelParams, spec: SamplingSpec, n_replicas: int,
                 base_seed: int, workers: int | None = None) -> SampleEnsemble:
    """Independent stationary samplers with seeds ``derive_seed(base_seed, i)``, merged."""
    if n_replicas < 1:
        raise DomainError("n_replicas must be >= 1")

    def one(i):
        return sample_stationary(params, spec.burn_in, spec.thinning, spec.n_samples,
                                 derive_seed(base_seed, i), spec.with_pairs, spec.n_batches)

    return merge_all(_map(one, list(range(n_replicas)), workers))


def run_trajectory_replicas(params: ModelParams, init, horizon: float,
                            timescale: TimeScale, sample_grid: Sequence[float],
                            n_replicas: int, base_seed: int,
                            workers: int | None = None) -> list[Trajectory]:
    """Trajectories with derived seeds, returned in replica order."""
    def one(i):
        return run_trajectory(params, init, horizon, timescale, sample_grid,
                              derive_seed(base_seed, i))

    return _map(one, list(range(n_replicas)), workers)


def stationary_trajectory(params: ModelParams, horizon: float,
                          sample_grid: Sequence[float], seed: int,
                          burn_in: float | None = None,
                          timescale: TimeScale = TimeScale.BOUNDARY) -> Trajectory:
    """Trajectory started from a burned-in (approximately stationary) state."""
    if burn_in is None:
        burn_in = default_burn_in(params)
    rng = make_rng(seed)
    state = _kernel.new_state(np.zeros(params.n_sites, dtype=np.uint8))
    _kernel.advance(*state, rng, params.boundary_scale, params.alpha, params.beta,
                    burn_in * TimeScale.BOUNDARY.multiplier(params),
                    np.iinfo(np.int64).max)
    start = Configuration.from_array(state[0])
    # continue the same stream so the whole run is one seeded computation
    return _continue(params, start, horizon, timescale, sample_grid, seed, rng)


def _continue(params, init, horizon, timescale, sample_grid, seed, rng):
    mult = TimeScale(timescale).multiplier(params)
    grid = np.asarray(sample_grid, dtype=float)
    if grid[0] != 0.0:
        grid = np.concatenate([[0.0], grid])
    if np.any(np.diff(grid) <= 0) or grid[-1] > horizon:
        raise DomainError("sample_grid must be strictly increasing within [0, horizon]")
    eta, bonds, pos, istate, fstate, acc = _kernel.new_state(init.to_array())
    k = grid.size
    states, acc_rows = [], np.zeros((k, 3))
    events = np.zeros(k, dtype=np.int64)
    flips = np.zeros(k, dtype=np.int64)
    for i, t in enumerate(grid):
        if t > 0:
            _kernel.advance(eta, bonds, pos, istate, fstate, acc, rng,
                            params.boundary_scale, params.alpha, params.beta,
                            t * mult, np.iinfo(np.int64).max)
        states.append(Configuration.from_array(eta))
        acc_rows[i] = acc
        events[i] = istate[2]
        flips[i] = istate[3]
    return Trajectory(params, TimeScale(timescale), grid, states, int(seed),
                      acc_rows[:, 0].copy(), acc_rows[:, 1].copy(),
                      acc_rows[:, 2].copy(), events, flips)
