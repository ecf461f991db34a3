"""Estimators linking simulations to the limiting objects.

Standard errors use batch means: every :class:`~slowssep.simulator.SampleEnsemble`
carries per-batch sums, and the variance of a ratio estimator is taken as

    Var(mean) ~ B / (B - 1) * sum_b (n_b / n)**2 * (mean_b - mean)**2,

which reduces to the usual batch-means formula for equal batch sizes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import Configuration, ModelParams, replacement_observable
from .simulator import SampleEnsemble, Trajectory

PASS_SIGMAS = 3.0


@dataclass
class DensityProfile:
    """Per-site means with standard errors (zero for exact profiles)."""

    sites: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    n_samples: int = 0

    def rows(self, quantity: str = "density"):
        for x, m, s in zip(self.sites, self.mean, self.se):
            yield quantity, str(int(x)), float(m), float(s), self.n_samples

    def to_csv(self, path, quantity: str = "density") -> None:
        write_estimate_csv(path, self.rows(quantity))


@dataclass
class CorrelationTable:
    """phi(x, y) for 0 < x < y < N as a symmetric array; the diagonal is NaN."""

    values: np.ndarray
    se: np.ndarray
    n_samples: int = 0

    @property
    def n_sites(self) -> int:
        return self.values.shape[0]

    def __call__(self, x: int, y: int) -> float:
        if x == y:
            raise ValueError("phi is only tabulated for x != y")
        return float(self.values[x - 1, y - 1])

    def offdiag(self) -> np.ndarray:
        iu = np.triu_indices(self.n_sites, k=1)
        return self.values[iu]

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.offdiag())))

    def rows(self, quantity: str = "phi"):
        n = self.n_sites
        for x in range(n):
            for y in range(x + 1, n):
                yield (quantity, f"{x + 1}:{y + 1}", float(self.values[x, y]),
                       float(self.se[x, y]), self.n_samples)

    def to_csv(self, path, quantity: str = "phi") -> None:
        write_estimate_csv(path, self.rows(quantity))


def write_estimate_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "index", "estimate", "se", "n_samples"])
        for q, idx, est, se, n in rows:
            w.writerow([q, idx, repr(est), repr(se), n])


# ----------------------------------------------------------- batch-means core


def batch_means_se(batch_sums: np.ndarray, batch_counts: np.ndarray) -> np.ndarray:
    """Standard error of sum(batch_sums)/sum(batch_counts) along axis 0."""
    counts = np.asarray(batch_counts, dtype=float)
    keep = counts > 0
    counts = counts[keep]
    sums = np.asarray(batch_sums, dtype=float)[keep]
    nb = counts.size
    if nb < 2:
        return np.full(sums.shape[1:], np.nan)
    n = counts.sum()
    mean = sums.sum(axis=0) / n
    shape = (nb,) + (1,) * (sums.ndim - 1)
    bm = sums / counts.reshape(shape)
    w = (counts / n).reshape(shape)
    var = nb / (nb - 1) * np.sum(w ** 2 * (bm - mean) ** 2, axis=0)
    return np.sqrt(var)


def batch_se_1d(values: Sequence[float], n_batches: int = 32) -> float:
    """Batch-means standard error of the mean of an ordered series."""
    v = np.asarray(values, dtype=float)
    nb = max(2, min(n_batches, v.size))
    idx = np.arange(v.size) * nb // v.size
    sums = np.bincount(idx, weights=v, minlength=nb)
    counts = np.bincount(idx, minlength=nb)
    return float(batch_means_se(sums, counts))


# ---------------------------------------------------------------- estimators


def empirical_pairing(config: Configuration, H: Callable[[np.ndarray], np.ndarray]) -> float:
    """<pi_N, H> = (N-1)^-1 sum_x H(x/N) eta(x)."""
    n = config.n_sites
    N = n + 1
    eta = config.to_array().astype(float)
    u = np.arange(1, N) / N
    h = np.broadcast_to(np.asarray(H(u), dtype=float), u.shape)
    return float(np.dot(h, eta) / n)


def estimate_profile(ensemble: SampleEnsemble) -> DensityProfile:
    """Site means with binomial SE inflated by the batch-means autocorrelation factor."""
    n = ensemble.n_samples
    if n < 2:
        raise ValueError("need at least two samples for an error bar")
    mean = ensemble.site_sums / n
    naive_var = mean * (1.0 - mean) / n
    bm = batch_means_se(ensemble.batch_site_sums, ensemble.batch_counts) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        inflation = np.where(naive_var > 0, bm / naive_var, 1.0)
    inflation = np.where(np.isfinite(inflation), np.maximum(inflation, 1.0), 1.0)
    se = np.sqrt(naive_var * inflation)
    sites = np.arange(1, ensemble.params.N)
    return DensityProfile(sites, mean, se, n)


def estimate_two_point(ensemble: SampleEnsemble) -> CorrelationTable:
    """phi_hat(x,y) = mean(eta_x eta_y) - mean(eta_x) mean(eta_y), delta-method batch SE."""
    if not ensemble.has_pairs:
        raise ValueError("ensemble was sampled without pair sums")
    n = ensemble.n_samples
    if n < 2:
        raise ValueError("need at least two samples for an error bar")
    m = ensemble.site_sums / n
    pair = ensemble.pair_sums / n
    pair = np.triu(pair, 1)
    pair = pair + pair.T
    phi = pair - np.outer(m, m)
    np.fill_diagonal(phi, np.nan)

    counts = ensemble.batch_counts.astype(float)
    keep = counts > 0
    counts = counts[keep]
    bp = ensemble.batch_pair_sums[keep].astype(float)
    bp = np.triu(bp, 1)
    bp = bp + np.transpose(bp, (0, 2, 1))
    bpm = bp / counts[:, None, None]
    bsm = ensemble.batch_site_sums[keep] / counts[:, None]
    dm = bsm - m
    # linearised influence of each batch on phi(x,y)
    infl = (bpm - pair) - dm[:, :, None] * m[None, None, :] - m[None, :, None] * dm[:, None, :]
    nb = counts.size
    w = (counts / counts.sum())[:, None, None]
    var = nb / (nb - 1) * np.sum(w ** 2 * infl ** 2, axis=0) if nb > 1 else np.full_like(phi, np.nan)
    se = np.sqrt(var)
    np.fill_diagonal(se, np.nan)
    return CorrelationTable(phi, se, n)


# ------------------------------------------------------------- weak distance


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finite sum of weighted point masses on [0, 1]."""

    points: np.ndarray
    weights: np.ndarray

    def integrate(self, H) -> float:
        return float(np.dot(H(self.points), self.weights))


@dataclass(frozen=True)
class DensityMeasure:
    """rho(u) du on [0, 1], integrated by 64-point Gauss-Legendre quadrature."""

    density: Callable[[np.ndarray], np.ndarray]

    def integrate(self, H) -> float:
        x, w = np.polynomial.legendre.leggauss(64)
        u = 0.5 * (x + 1.0)
        vals = np.broadcast_to(np.asarray(self.density(u), dtype=float), u.shape)
        return float(0.5 * np.dot(w, H(u) * vals))


def empirical_measure(config: Configuration) -> DiscreteMeasure:
    n = config.n_sites
    N = n + 1
    return DiscreteMeasure(np.arange(1, N) / N, config.to_array() / n)


def profile_measure(profile: DensityProfile) -> DiscreteMeasure:
    """Measure with mass mean(x)/(N-1) at x/N: the expected empirical measure."""
    n = profile.sites.size
    N = n + 1
    return DiscreteMeasure(profile.sites / N, profile.mean / n)


def _dictionary():
    funcs = [(lambda u: np.ones_like(u), 1.0),
             (lambda u: u, 2.0),
             (lambda u: u ** 2, 3.0)]
    for k in range(1, 9):
        lip = k * math.pi
        funcs.append((lambda u, k=k: np.sin(k * math.pi * u), 1.0 + lip))
        funcs.append((lambda u, k=k: np.cos(k * math.pi * u), 1.0 + lip))
    return funcs


TEST_DICTIONARY = _dictionary()
"""(H, ||H||_BL) pairs: 1, u, u^2, sin(k pi u), cos(k pi u) for k = 1..8,
with ||H||_BL = sup|H| + Lip(H)."""


def weak_distance(a, b) -> float:
    """max over the test dictionary of |<a - b, H>| / ||H||_BL.

    ``a`` and ``b`` are anything with an ``integrate(H)`` method
    (:class:`DiscreteMeasure`, :class:`DensityMeasure`) or a
    :class:`DensityProfile`, which is read as its expected empirical measure.
    """
    a = profile_measure(a) if isinstance(a, DensityProfile) else a
    b = profile_measure(b) if isinstance(b, DensityProfile) else b
    return max(abs(a.integrate(H) - b.integrate(H)) / norm for H, norm in TEST_DICTIONARY)


# --------------------------------------------------- trajectory diagnostics


def time_average_V(trajectory: Trajectory, t_end: float | None = None,
                   t_start: float = 0.0, method: str = "exact") -> float:
    """|int_{t_start}^{t_end} V(eta_s) ds| in macroscopic time.

    ``method='exact'`` uses the integral accumulated jump by jump during the
    simulation; ``method='trapezoid'`` applies the trapezoid rule to V at the
    recorded sample times. Both endpoints must be grid times.
    """
    times = trajectory.sample_times
    if times.size < 2:
        raise ValueError("need at least two samples")
    t_end = times[-1] if t_end is None else t_end
    i0 = _grid_index(times, t_start)
    i1 = _grid_index(times, t_end)
    if method == "exact":
        raw = trajectory.v_integral[i1] - trajectory.v_integral[i0]
        return abs(raw / trajectory.multiplier)
    if method == "trapezoid":
        v = np.array([replacement_observable(s) for s in trajectory.states[i0:i1 + 1]])
        return abs(float(np.trapezoid(v, times[i0:i1 + 1])))
    raise ValueError(f"unknown method {method!r}")


def _grid_index(times, t) -> int:
    idx = np.flatnonzero(np.isclose(times, t, rtol=0, atol=1e-12))
    if idx.size == 0:
        raise ValueError(f"time {t} is not a grid time")
    return int(idx[0])


def window_V_integrals(trajectory: Trajectory) -> np.ndarray:
    """|int V ds| over each consecutive grid interval."""
    raw = np.diff(trajectory.v_integral) / trajectory.multiplier
    return np.abs(raw)


@dataclass
class MartingaleDiagnostics:
    """Residual paths m_t - m_0 - (cN/(N-1)) int (alpha+beta-eta(1)-eta(N-1)) ds."""

    times: np.ndarray
    residuals: np.ndarray          # (n_trajectories, n_times)
    mean: np.ndarray
    se: np.ndarray
    variance: np.ndarray
    variance_se: np.ndarray
    qv_mean: np.ndarray            # ensemble mean of the predictable quadratic variation

    @property
    def n_trajectories(self) -> int:
        return self.residuals.shape[0]

    def centered(self, sigmas: float = PASS_SIGMAS) -> np.ndarray:
        ok = np.abs(self.mean) <= sigmas * self.se
        ok[self.se == 0] = self.mean[self.se == 0] == 0
        return ok


def martingale_diagnostics(trajectories: Sequence[Trajectory],
                           params: ModelParams) -> MartingaleDiagnostics:
    """Dynkin martingale residuals of the averaged density, across an ensemble.

    Works on any timescale: the drift is integrated in raw time with the
    generator prefactor c N^-theta / (N-1), which at the boundary timescale
    equals cN/(N-1) per unit macroscopic time.
    """
    if not trajectories:
        raise ValueError("no trajectories")
    times = trajectories[0].sample_times
    for tr in trajectories:
        if tr.params != params:
            raise ValueError("trajectory parameters do not match")
        if tr.sample_times.shape != times.shape or not np.array_equal(tr.sample_times, times):
            raise ValueError("trajectories must share one sample grid")
    n = params.n_sites
    pref = params.boundary_scale / n
    res = np.array([tr.masses - tr.masses[0] - pref * tr.boundary_integral
                    for tr in trajectories])
    qv = np.array([params.boundary_scale / n ** 2 * tr.rate_integral for tr in trajectories])
    k = res.shape[0]
    mean = res.mean(axis=0)
    if k > 1:
        var = res.var(axis=0, ddof=1)
        se = np.sqrt(var / k)
        # SE of the sample variance from the fourth central moment
        m4 = np.mean((res - mean) ** 4, axis=0)
        var_se = np.sqrt(np.maximum(m4 - var ** 2 * (k - 3) / (k - 1), 0.0) / k)
    else:
        var = np.zeros_like(mean)
        se = np.full_like(mean, np.nan)
        var_se = np.full_like(mean, np.nan)
    return MartingaleDiagnostics(times, res, mean, se, var, var_se, qv.mean(axis=0))


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])
