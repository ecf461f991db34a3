"""Deterministic limits: the heat equation with Dirichlet/Robin/Neumann data,
its stationary profiles, and the averaged-density ODE.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.optimize
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import DomainError

DEFAULT_M = 256
DEFAULT_DT = 1e-3


class BoundaryFamily(enum.Enum):
    DIRICHLET = "dirichlet"
    ROBIN = "robin"
    NEUMANN = "neumann"

    @classmethod
    def from_theta(cls, theta: float) -> "BoundaryFamily":
        if theta < 1:
            return cls.DIRICHLET
        if theta == 1:
            return cls.ROBIN
        return cls.NEUMANN


def _unpack(params):
    return params.theta, params.c, params.alpha, params.beta


def family_profile(family: BoundaryFamily, c: float, alpha: float,
                   beta: float) -> Callable[[np.ndarray], np.ndarray]:
    family = BoundaryFamily(family)
    if family is BoundaryFamily.DIRICHLET:
        return lambda u: (beta - alpha) * np.asarray(u, float) + alpha
    if family is BoundaryFamily.ROBIN:
        slope = c * (beta - alpha) / (2.0 + c)
        shift = alpha + (beta - alpha) / (2.0 + c)
        return lambda u: slope * np.asarray(u, float) + shift
    mid = 0.5 * (alpha + beta)
    return lambda u: np.full_like(np.asarray(u, float), mid)


def stationary_profile(params) -> Callable[[np.ndarray], np.ndarray]:
    """rho_theta: the stationary solution selected by theta.

    ``params`` is a :class:`~slowssep.model.ModelParams` or anything with
    ``theta``, ``c``, ``alpha`` and ``beta`` attributes.
    """
    theta, c, alpha, beta = _unpack(params)
    return family_profile(BoundaryFamily.from_theta(theta), c, alpha, beta)


# ----------------------------------------------------------------- heat equation


@dataclass
class PdeField:
    grid: np.ndarray
    times: np.ndarray
    values: np.ndarray          # (len(times), M + 1)
    family: BoundaryFamily
    c: float
    alpha: float
    beta: float

    def mass(self) -> np.ndarray:
        """Trapezoid-rule mass at every output time."""
        h = self.grid[1] - self.grid[0]
        v = self.values
        return h * (v.sum(axis=1) - 0.5 * (v[:, 0] + v[:, -1]))

    def at(self, t: float) -> np.ndarray:
        i = int(np.argmin(np.abs(self.times - t)))
        return self.values[i]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["time"] + [f"u={float(u)!r}" for u in self.grid])
            for t, row in zip(self.times, self.values):
                w.writerow([repr(float(t))] + [repr(float(x)) for x in row])


def _boundary_coefficients(family: BoundaryFamily, c: float, alpha: float, beta: float):
    """Ghost-point relations rho_{-1} = rho_1 - 2h (k0 rho_0 - g0) and
    rho_{M+1} = rho_{M-1} + 2h (g1 - k1 rho_M).

    Robin data d_u rho(0) = c (rho(0) - alpha), d_u rho(1) = c (beta - rho(1))
    give k0 = k1 = c, g0 = c alpha, g1 = c beta; Neumann is the case c = 0.
    """
    if family is BoundaryFamily.ROBIN:
        return c, c * alpha, c, c * beta
    return 0.0, 0.0, 0.0, 0.0


def _operator(family: BoundaryFamily, c: float, alpha: float, beta: float, M: int):
    """Discrete Laplacian as (L, g): d rho/dt = L rho + g on the unknowns."""
    h = 1.0 / M
    inv = 1.0 / h ** 2
    if family is BoundaryFamily.DIRICHLET:
        n = M - 1
        main = np.full(n, -2.0 * inv)
        off = np.full(n - 1, inv)
        L = sp.diags([off, main, off], [-1, 0, 1], format="csc")
        g = np.zeros(n)
        g[0] = alpha * inv
        g[-1] += beta * inv
        return L, g
    k0, g0, k1, g1 = _boundary_coefficients(family, c, alpha, beta)
    n = M + 1
    main = np.full(n, -2.0 * inv)
    lower = np.full(n - 1, inv)
    upper = np.full(n - 1, inv)
    upper[0] = 2.0 * inv
    lower[-1] = 2.0 * inv
    main[0] -= 2.0 * h * k0 * inv
    main[-1] -= 2.0 * h * k1 * inv
    L = sp.diags([lower, main, upper], [-1, 0, 1], format="csc")
    g = np.zeros(n)
    g[0] = 2.0 * h * g0 * inv
    g[-1] = 2.0 * h * g1 * inv
    return L, g


def solve_hde(family, c: float, alpha: float, beta: float, rho0, T: float,
              M: int = DEFAULT_M, dt: float = DEFAULT_DT,
              times: Sequence[float] | None = None,
              startup_steps: int = 2) -> PdeField:
    """Crank-Nicolson for d_t rho = d_u^2 rho on [0, 1] with the chosen boundary data.

    ``rho0`` is a callable on [0, 1] or an array of M + 1 grid values. The
    first ``startup_steps`` steps are split into half steps of backward Euler
    (Rannacher start-up) to damp rough initial data; this keeps second order
    in time. ``times`` lists the output times (default ``[0, T]``); each
    interval is divided into equal steps no longer than ``dt``.
    """
    family = BoundaryFamily(family)
    if M < 2 or dt <= 0 or T < 0:
        raise DomainError("need M >= 2, dt > 0 and T >= 0")
    grid = np.linspace(0.0, 1.0, M + 1)
    init = np.asarray(rho0(grid) if callable(rho0) else rho0, dtype=float)
    init = np.broadcast_to(init, grid.shape).copy()
    if np.any(init < 0) or np.any(init > 1):
        raise DomainError("initial profile must take values in [0, 1]")
    out_times = np.asarray([0.0, T] if times is None else times, dtype=float)
    if np.any(np.diff(out_times) < 0) or out_times[0] < 0:
        raise DomainError("output times must be non-decreasing and non-negative")

    L, g = _operator(family, c, alpha, beta, M)
    n = L.shape[0]
    I = sp.identity(n, format="csc")
    if family is BoundaryFamily.DIRICHLET:
        init[0], init[-1] = alpha, beta
        u = init[1:-1].copy()
    else:
        u = init.copy()

    solvers = {}

    def cn(step):
        if ("cn", step) not in solvers:
            solvers[("cn", step)] = (spla.factorized((I - 0.5 * step * L).tocsc()),
                                     (I + 0.5 * step * L).tocsr())
        return solvers[("cn", step)]

    def be(step):
        if ("be", step) not in solvers:
            solvers[("be", step)] = spla.factorized((I - step * L).tocsc())
        return solvers[("be", step)]

    def full(v):
        if family is BoundaryFamily.DIRICHLET:
            return np.concatenate([[alpha], v, [beta]])
        return v.copy()

    values = []
    t_now = 0.0
    steps_done = 0
    for t_out in out_times:
        span = t_out - t_now
        if span > 1e-15:
            k = max(1, int(math.ceil(span / dt - 1e-9)))
            step = span / k
            for _ in range(k):
                if steps_done < startup_steps:
                    solve = be(0.5 * step)
                    for _ in range(2):
                        u = solve(u + 0.5 * step * g)
                else:
                    solve, rhs = cn(step)
                    u = solve(rhs @ u + step * g)
                steps_done += 1
            t_now = t_out
        values.append(full(u))
    return PdeField(grid, out_times, np.array(values), family, c, alpha, beta)


def hde_longtime_distance(family, c: float, alpha: float, beta: float, rho0, T: float,
                          M: int = DEFAULT_M, dt: float = DEFAULT_DT) -> float:
    """Sup-norm distance between rho(T, .) and the stationary solution it approaches.

    For Neumann data the target is the constant equal to the (trapezoid) mass
    of the initial profile, which the scheme conserves.
    """
    family = BoundaryFamily(family)
    field = solve_hde(family, c, alpha, beta, rho0, T, M, dt)
    if family is BoundaryFamily.NEUMANN:
        target = np.full(field.grid.shape, field.mass()[0])
    else:
        target = family_profile(family, c, alpha, beta)(field.grid)
    return float(np.max(np.abs(field.values[-1] - target)))


def heat_mode(family, c: float = 1.0):
    """Slowest decaying eigenmode of the homogeneous problem.

    Returns ``(lam, phi)``: exp(-lam t) phi(u) solves the heat equation with
    homogeneous boundary data. For Robin data phi = cos(ku) + (c/k) sin(ku)
    where k is the first positive root of 2ck cos k = (k^2 - c^2) sin k.
    """
    family = BoundaryFamily(family)
    if family is BoundaryFamily.DIRICHLET:
        return math.pi ** 2, lambda u: np.sin(math.pi * np.asarray(u, float))
    if family is BoundaryFamily.NEUMANN:
        return math.pi ** 2, lambda u: np.cos(math.pi * np.asarray(u, float))
    f = lambda k: 2 * c * k * math.cos(k) - (k * k - c * c) * math.sin(k)
    ks = np.linspace(1e-6, math.pi, 2001)
    vals = [f(k) for k in ks]
    i = next(i for i in range(len(ks) - 1) if vals[i] * vals[i + 1] <= 0)
    k = scipy.optimize.brentq(f, ks[i], ks[i + 1], xtol=1e-15)
    return k * k, lambda u: np.cos(k * np.asarray(u, float)) + (c / k) * np.sin(k * np.asarray(u, float))


# -------------------------------------------------------------------- mass ODE


def mass_ode_closed(m0: float, c: float, alpha: float, beta: float, t):
    """m_t = (alpha+beta)/2 + (m0 - (alpha+beta)/2) exp(-2ct)."""
    mid = 0.5 * (alpha + beta)
    return mid + (m0 - mid) * np.exp(-2.0 * c * np.asarray(t, dtype=float))


@dataclass
class MassPath:
    times: np.ndarray
    values: np.ndarray
    m0: float
    c: float
    alpha: float
    beta: float

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "mass"])
            for t, m in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(m))])


def mass_ode_numeric(m0: float, c: float, alpha: float, beta: float, T: float,
                     dt: float = DEFAULT_DT) -> MassPath:
    """Classical fixed-step RK4 for dm/dt = c (alpha + beta - 2m)."""
    if not 0 <= m0 <= 1:
        raise DomainError("m0 must lie in [0, 1]")
    k = max(1, int(math.ceil(T / dt - 1e-9)))
    h = T / k
    rhs = lambda m: c * (alpha + beta - 2.0 * m)
    values = np.empty(k + 1)
    values[0] = m = m0
    for i in range(k):
        k1 = rhs(m)
        k2 = rhs(m + 0.5 * h * k1)
        k3 = rhs(m + 0.5 * h * k2)
        k4 = rhs(m + h * k3)
        m = m + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        values[i + 1] = m
    return MassPath(np.linspace(0.0, T, k + 1), values, m0, c, alpha, beta)
