"""Registry of numerical checks run by ``slowssep verify``.

Every check returns a :class:`CheckResult` whose rows carry the parameters
(and seeds, for Monte Carlo checks) that produced them. The ``fast`` level
holds the enumeration, PDE and ODE checks; ``full`` adds the Monte Carlo
experiments. Seeds are derived from one base seed and a per-check key, so a
check's output depends only on the base seed.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.optimize

from . import exact, limits, observables, simulator
from .model import Configuration, ModelParams, TimeScale

DEFAULT_BASE_SEED = 20261015
SIGMAS = observables.PASS_SIGMAS


@dataclass
class CheckResult:
    name: str
    description: str
    passed: bool
    summary: dict
    rows: list[dict] = field(default_factory=list)
    seconds: float = 0.0  # wall clock; kept out of to_dict so reports stay reproducible

    def to_dict(self) -> dict:
        return {"name": self.name, "description": self.description,
                "passed": bool(self.passed), "summary": self.summary, "rows": self.rows}


def _f(x) -> float:
    return float(x)


# ----------------------------------------------------------------- enumeration


def check_exact_profile(base_seed: int) -> CheckResult:
    """Master-equation mean profile against the affine closed form."""
    tol = 1e-10
    rows = []
    grid = itertools.product(range(3, 11), (0.0, 0.5, 1.0, 2.0), (0.5, 1.0, 2.0),
                             ((0.2, 0.8), (0.1, 0.5)))
    for N, theta, c, (a, b) in grid:
        p = ModelParams(N, theta, c, a, b)
        err = float(np.max(np.abs(exact.exact_mean_profile(p).mean
                                  - exact.closed_form_profile(p).mean)))
        rows.append({**p.to_dict(), "max_error": err, "passed": err <= tol})
    worst = max(r["max_error"] for r in rows)
    return CheckResult("exact_profile", "stationary mean profile is a_N x + b_N",
                       all(r["passed"] for r in rows),
                       {"tolerance": tol, "max_error": worst, "points": len(rows)}, rows)


def _same_parity_tail(Ns, ratios, growth_tol):
    """Saturation test on each parity class of N.

    Passes when successive same-parity increments shrink in magnitude and the
    last relative increment is below ``growth_tol``.
    """
    ok = True
    detail = {}
    for parity in (0, 1):
        seq = [r for n, r in zip(Ns, ratios) if n % 2 == parity]
        inc = np.diff(seq)
        shrinking = bool(np.all(np.abs(inc[1:]) <= np.abs(inc[:-1]) + 1e-15))
        last_growth = float(inc[-1] / seq[-2])
        detail["even" if parity == 0 else "odd"] = {
            "increments_shrinking": shrinking, "last_relative_increment": last_growth}
        ok &= shrinking and last_growth < growth_tol
    return ok, detail


def check_correlation_envelope(base_seed: int) -> CheckResult:
    """(N^theta + N) max|phi| over N = 4..12 saturates to a finite envelope."""
    growth_tol = 0.02
    Ns = list(range(4, 13))
    c, a, b = 1.0, 0.2, 0.8
    rows, summary, passed = [], {"growth_tolerance": growth_tol, "thetas": {}}, True
    envelopes = {}
    for theta in (0.0, 0.5, 1.0, 2.0):
        ratios = []
        for N in Ns:
            p = ModelParams(N, theta, c, a, b)
            r = exact.correlation_bound_ratio(p)
            ratios.append(r)
            rows.append({**p.to_dict(), "ratio": r})
        ok, detail = _same_parity_tail(Ns, ratios, growth_tol)
        envelopes[theta] = max(ratios)
        summary["thetas"][repr(theta)] = {"envelope": max(ratios), "passed": ok, **detail}
        passed &= ok
    # the slow-boundary regimes should sit inside the fast-boundary envelope
    inside = envelopes[2.0] <= envelopes[0.0]
    summary["theta2_inside_theta0_envelope"] = inside
    return CheckResult("correlation_envelope",
                       "(N^theta+N) max|phi^N| is uniformly bounded over N=4..12",
                       passed and inside, summary, rows)


def _worst_density(objective: Callable[[np.ndarray], float], N: int, alpha: float,
                   rng: np.random.Generator, n_starts: int, maxiter: int = 60):
    """Minimise ``objective`` over densities parametrised by softmax log-weights."""
    nu = np.asarray(exact.bernoulli_weights(N, alpha))
    dim = nu.size

    def to_density(z):
        w = np.exp(z - z.max())
        w /= w.sum()
        return w / nu

    best = math.inf
    for _ in range(n_starts):
        z0 = rng.normal(scale=3.0, size=dim)
        res = scipy.optimize.minimize(lambda z: objective(to_density(z)), z0,
                                      method="L-BFGS-B", options={"maxiter": maxiter})
        best = min(best, float(res.fun))
    return best


def check_functional_inequalities(base_seed: int, n_random: int = 10_000,
                                  n_adversarial: int = 500, n_search: int = 2) -> CheckResult:
    """Moving-particle gap, entropy bound and boundary-form envelope on densities."""
    alpha, beta, c = 0.2, 0.8, 1.0
    thetas = (0.0, 1.0, 2.0)
    C0 = exact.entropy_constant(alpha)
    k = exact.boundary_form_constant(alpha, beta)
    gap_tol = -1e-10
    rows = []
    for N in (4, 6, 8):
        rng = simulator.make_rng(simulator.derive_seed(base_seed, 7, N))
        params = {th: ModelParams(N, th, c, alpha, beta) for th in thetas}
        p0 = params[thetas[0]]
        nu = exact.Distribution.bernoulli(N, alpha)
        min_gap = math.inf
        max_entropy_ratio = 0.0
        envelope = {th: -math.inf for th in thetas}
        densities = itertools.chain(
            (exact.random_density(N, alpha, rng) for _ in range(n_random)),
            (exact.adversarial_density(N, alpha, rng, sharpness=s)
             for s in np.linspace(0.5, 8.0, n_adversarial)))
        for f in densities:
            min_gap = min(min_gap, exact.moving_particle_gap(f, p0))
            H = exact.relative_entropy(f.measure(), nu)
            max_entropy_ratio = max(max_entropy_ratio, H / ((N - 1) * C0))
            for th in thetas:
                lhs, D = exact.generator_sqrt_form(f, params[th])
                envelope[th] = max(envelope[th], N ** th * (lhs + D))
        searched_gap = _worst_density(lambda f: exact.moving_particle_gap(f, p0),
                                      N, alpha, rng, n_search)
        p2 = params[2.0]

        def neg_form(f):
            lhs, D = exact.generator_sqrt_form(f, p2)
            return -(N ** 2.0) * (lhs + D)

        searched_env = -_worst_density(neg_form, N, alpha, rng, n_search)
        env_all = max(max(envelope.values()), searched_env)
        rows.append({
            "N": N, "alpha": alpha, "beta": beta, "c": c,
            "min_gap": min(min_gap, searched_gap),
            "min_gap_sampled": min_gap, "min_gap_searched": searched_gap,
            "max_entropy_over_bound": max_entropy_ratio,
            "envelope": env_all,
            **{f"envelope_theta={th!r}": envelope[th] for th in thetas},
            "envelope_searched": searched_env,
            "passed": (min(min_gap, searched_gap) >= gap_tol and max_entropy_ratio <= 1.0
                       and env_all <= c * k * (1 + 1e-9)),
        })
    return CheckResult(
        "functional_inequalities",
        "moving-particle gap >= 0, entropy <= (N-1)C_0, finite boundary-form envelope",
        all(r["passed"] for r in rows),
        {"gap_tolerance": gap_tol, "C0": C0, "analytic_envelope": c * k,
         "n_random_per_N": n_random, "n_adversarial_per_N": n_adversarial + n_search},
        rows)


# ------------------------------------------------------------------ PDE and ODE


def _manufactured_error(family, c, alpha, beta, M, dt=2e-5, T=0.1):
    lam, phi = limits.heat_mode(family, c)
    base = limits.family_profile(family, c, alpha, beta)
    field_ = limits.solve_hde(family, c, alpha, beta, lambda u: base(u) + 0.15 * phi(u),
                              T, M=M, dt=dt)
    exact_ = base(field_.grid) + 0.15 * math.exp(-lam * T) * phi(field_.grid)
    return float(np.max(np.abs(field_.values[-1] - exact_)))


def check_pde_convergence(base_seed: int) -> CheckResult:
    """Second-order spatial convergence against exact decaying eigenmodes."""
    c, a, b = 1.0, 0.2, 0.8
    rows = []
    for fam in limits.BoundaryFamily:
        errs = [_manufactured_error(fam, c, a, b, M) for M in (32, 64, 128)]
        ratios = [errs[0] / errs[1], errs[1] / errs[2]]
        rows.append({"family": fam.value, "c": c, "alpha": a, "beta": b,
                     "errors_M32_M64_M128": errs, "ratios": ratios,
                     "passed": all(abs(r - 4.0) <= 0.5 for r in ratios)})
    return CheckResult("pde_convergence", "spatial error ratio 4 +- 0.5 under mesh doubling",
                       all(r["passed"] for r in rows), {"ratio_band": [3.5, 4.5]}, rows)


ROBIN_LONGTIME_C = 4.0


def check_pde_longtime(base_seed: int) -> CheckResult:
    """Sup distance to the stationary solution after relaxation, and mass conservation."""
    tol = 1e-4
    rho0 = lambda u: u ** 2
    rows = []
    for fam, c, T in ((limits.BoundaryFamily.DIRICHLET, 1.0, 2.0),
                      (limits.BoundaryFamily.ROBIN, ROBIN_LONGTIME_C, 2.0),
                      (limits.BoundaryFamily.NEUMANN, 1.0, 5.0)):
        d = limits.hde_longtime_distance(fam, c, 0.2, 0.8, rho0, T)
        rows.append({"family": fam.value, "c": c, "alpha": 0.2, "beta": 0.8, "T": T,
                     "distance": d, "passed": d < tol})
    # informational: Robin relaxation at c = 1 is limited by its spectral gap
    d1 = limits.hde_longtime_distance("robin", 1.0, 0.2, 0.8, rho0, 2.0)
    gap1 = limits.heat_mode("robin", 1.0)[0]
    field_ = limits.solve_hde("neumann", 1.0, 0.2, 0.8, rho0, 5.0,
                              times=np.linspace(0.0, 5.0, 11))
    drift = float(np.max(np.abs(field_.mass() - field_.mass()[0])))
    rows.append({"family": "neumann", "c": 1.0, "alpha": 0.2, "beta": 0.8, "T": 5.0,
                 "mass_drift": drift, "passed": drift <= 1e-10})
    return CheckResult(
        "pde_longtime", "long-time distance < 1e-4 and Neumann mass conserved",
        all(r["passed"] for r in rows),
        {"tolerance": tol, "mass_tolerance": 1e-10,
         "robin_c1_distance_T2": d1, "robin_c1_decay_rate": gap1}, rows)


def check_pde_stationary(base_seed: int) -> CheckResult:
    """The stationary profile of each family is a fixed point of the solver."""
    rows = []
    for fam in limits.BoundaryFamily:
        for c, (a, b) in itertools.product((0.5, 1.0, 2.0), ((0.2, 0.8), (0.1, 0.5))):
            prof = limits.family_profile(fam, c, a, b)
            field_ = limits.solve_hde(fam, c, a, b, prof, 1.0)
            d = float(np.max(np.abs(field_.values[-1] - prof(field_.grid))))
            rows.append({"family": fam.value, "c": c, "alpha": a, "beta": b,
                         "drift": d, "passed": d <= 1e-10})
    return CheckResult("pde_stationary", "stationary profiles are fixed points",
                       all(r["passed"] for r in rows), {"tolerance": 1e-10}, rows)


def check_mass_ode(base_seed: int) -> CheckResult:
    rows = []
    for m0, c in ((0.1, 1.0), (0.9, 0.5), (0.5, 2.0), (0.0, 1.0), (1.0, 1.0)):
        path = limits.mass_ode_numeric(m0, c, 0.2, 0.8, 5.0)
        err = float(np.max(np.abs(path.values - limits.mass_ode_closed(m0, c, 0.2, 0.8,
                                                                        path.times))))
        rows.append({"m0": m0, "c": c, "alpha": 0.2, "beta": 0.8, "T": 5.0,
                     "max_error": err, "passed": err <= 1e-8})
    return CheckResult("mass_ode", "RK4 mass path matches the closed form",
                       all(r["passed"] for r in rows), {"tolerance": 1e-8}, rows)


# ------------------------------------------------------------------ Monte Carlo


def check_hydrostatic(base_seed: int, n_samples: int = 10_000) -> CheckResult:
    """Stationary Monte Carlo profiles at N=64 against the limiting profiles."""
    N, c, a, b = 64, 1.0, 0.2, 0.8
    rows, passed = [], True
    summary = {"n_samples": n_samples, "sigmas": SIGMAS, "weak_tolerance": 0.02}
    for i, theta in enumerate((0.0, 1.0, 2.0)):
        p = ModelParams(N, theta, c, a, b)
        seed = simulator.derive_seed(base_seed, 3, i)
        ens = simulator.sample_stationary(p, n_samples=n_samples, seed=seed)
        prof = observables.estimate_profile(ens)
        u = prof.sites / N
        if theta == 0.0:
            ref = exact.closed_form_profile(p).mean
        else:
            ref = limits.stationary_profile(p)(u)
        z = (prof.mean - ref) / prof.se
        ok = bool(np.all(np.abs(z) <= SIGMAS))
        entry = {"max_abs_z": float(np.max(np.abs(z))),
                 "max_abs_deviation": float(np.max(np.abs(prof.mean - ref))),
                 "mean_se": float(np.mean(prof.se)), "sites_passed": int(np.sum(np.abs(z) <= SIGMAS)),
                 "seed": seed}
        if theta == 2.0:
            d = observables.weak_distance(prof, observables.DensityMeasure(
                limits.stationary_profile(p)))
            entry["weak_distance"] = d
            ok &= d < 0.02
        entry["passed"] = ok
        summary[f"theta={theta!r}"] = entry
        passed &= ok
        for x, m, s, r in zip(prof.sites, prof.mean, prof.se, ref):
            rows.append({**p.to_dict(), "seed": seed, "site": int(x), "estimate": _f(m),
                         "se": _f(s), "reference": _f(r)})
    return CheckResult("hydrostatic", "N=64 stationary profiles match rho_D, rho_R, rho_N",
                       passed, summary, rows)


def _mass_relaxation_point(N, base_seed, n_replicas, times):
    p = ModelParams(N, 2.0, 1.0, 0.2, 0.8)
    seed = simulator.derive_seed(base_seed, 4, N)
    trajs = simulator.run_trajectory_replicas(
        p, Configuration.zeros(N - 1), times[-1], TimeScale.BOUNDARY, times,
        n_replicas, seed)
    masses = np.array([t.masses[1:] for t in trajs])
    mean = masses.mean(axis=0)
    se = masses.std(axis=0, ddof=1) / math.sqrt(n_replicas)
    return p, seed, mean, se


def check_mass_relaxation(base_seed: int, n_replicas: int = 256) -> CheckResult:
    """Mean averaged density from the empty state follows the mass ODE."""
    times = [0.25, 0.5, 1.0, 2.0]
    rows, spread = [], {}
    passed = True
    for N in (32, 64):
        p, seed, mean, se = _mass_relaxation_point(N, base_seed, n_replicas, times)
        target = limits.mass_ode_closed(0.0, p.c, p.alpha, p.beta, times)
        dev = np.abs(mean - target)
        spread[N] = float(np.max(dev + SIGMAS * se))
        for t, m, s, tg in zip(times, mean, se, target):
            ok = abs(m - tg) <= SIGMAS * s
            passed &= ok
            rows.append({**p.to_dict(), "seed": seed, "n_replicas": n_replicas, "t": t,
                         "mean": _f(m), "se": _f(s), "target": _f(tg), "passed": bool(ok)})
    tightening = spread[64] < spread[32]
    return CheckResult(
        "mass_relaxation", "ensemble mass tracks 0.5 + (m0 - 0.5) exp(-2t), tightening in N",
        passed and tightening,
        {"sigmas": SIGMAS, "n_replicas": n_replicas,
         "sup_deviation_plus_3se": {str(k): v for k, v in spread.items()},
         "tightening": tightening}, rows)


def check_martingale(base_seed: int, n_replicas: int = 128) -> CheckResult:
    """Dynkin residual centred at every grid time; variance slope in N near -1."""
    times = [0.025, 0.05, 0.075, 0.1]
    Ns = (16, 32, 64, 128)
    rows, variances = [], []
    centred = True
    for N in Ns:
        p = ModelParams(N, 2.0, 1.0, 0.2, 0.8)
        seed = simulator.derive_seed(base_seed, 5, N)
        trajs = simulator.run_trajectory_replicas(
            p, Configuration.zeros(N - 1), times[-1], TimeScale.BOUNDARY, times,
            n_replicas, seed)
        diag = observables.martingale_diagnostics(trajs, p)
        ok = diag.centered()[1:]
        centred &= bool(np.all(ok))
        variances.append(float(diag.variance[-1]))
        for j, t in enumerate(diag.times[1:], start=1):
            rows.append({**p.to_dict(), "seed": seed, "n_replicas": n_replicas,
                         "t": _f(t), "mean_residual": _f(diag.mean[j]), "se": _f(diag.se[j]),
                         "variance": _f(diag.variance[j]),
                         "variance_se": _f(diag.variance_se[j]),
                         "quadratic_variation": _f(diag.qv_mean[j]),
                         "centred": bool(ok[j - 1])})
    slope = observables.loglog_slope(Ns, variances)
    in_band = -1.3 <= slope <= -0.7
    return CheckResult(
        "martingale", "residual mean within 3 SE; variance slope in [-1.3, -0.7]",
        centred and in_band,
        {"variance_time": times[-1], "slope": slope, "band": [-1.3, -0.7],
         "all_centred": centred, "n_replicas": n_replicas}, rows)


def check_replacement(base_seed: int, n_windows: int = 128) -> CheckResult:
    """Mean of |int_0^1 V ds| at theta=2 decreases in N beyond 3-SE bands."""
    rows, stats = [], []
    for N in (16, 32, 64):
        p = ModelParams(N, 2.0, 1.0, 0.2, 0.8)
        seed = simulator.derive_seed(base_seed, 6, N)
        traj = simulator.stationary_trajectory(p, float(n_windows),
                                               np.arange(1, n_windows + 1, dtype=float), seed)
        w = observables.window_V_integrals(traj)
        mean, se = float(w.mean()), observables.batch_se_1d(w)
        stats.append((mean, se))
        rows.append({**p.to_dict(), "seed": seed, "n_windows": n_windows,
                     "mean_abs_V_integral": mean, "se": se})
    separated = all(m0 - SIGMAS * s0 > m1 + SIGMAS * s1
                    for (m0, s0), (m1, s1) in zip(stats, stats[1:]))
    return CheckResult("replacement", "E|int_0^1 V ds| decreases across N=16,32,64",
                       separated, {"sigmas": SIGMAS, "separated": separated}, rows)


FAST_CHECKS = (check_exact_profile, check_correlation_envelope,
               check_functional_inequalities, check_pde_convergence,
               check_pde_longtime, check_pde_stationary, check_mass_ode)
FULL_CHECKS = FAST_CHECKS + (check_hydrostatic, check_mass_relaxation,
                             check_martingale, check_replacement)


def checks_for(level: str):
    if level == "fast":
        return FAST_CHECKS
    if level == "full":
        return FULL_CHECKS
    raise ValueError(f"unknown verification level {level!r}")


def verify_suite(level: str = "fast", base_seed: int = DEFAULT_BASE_SEED,
                 progress: Callable[[CheckResult], None] | None = None) -> list[CheckResult]:
    results = []
    for check in checks_for(level):
        start = time.perf_counter()
        res = check(base_seed)
        res.seconds = time.perf_counter() - start
        results.append(res)
        if progress is not None:
            progress(res)
    return results
