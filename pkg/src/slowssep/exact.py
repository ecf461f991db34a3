"""Exhaustive computations on the full state space for small N.

States are indexed by their bitmask (site 1 = least significant bit), so
state ``s`` of :func:`enumerate_states` is ``Configuration(s, N - 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .model import Configuration, DomainError, ModelParams, TimeScale
from .observables import CorrelationTable, DensityProfile

N_MAX = 15
DENSE_MAX_DIM = 2 ** 11
RESIDUAL_TOL = 1e-12


class SolverError(RuntimeError):
    pass


def _check_N(N: int):
    if not 3 <= N <= N_MAX:
        raise DomainError(f"enumeration needs 3 <= N <= {N_MAX}, got {N}")


def enumerate_states(N: int) -> list[Configuration]:
    """All 2^(N-1) configurations in binary counting order."""
    _check_N(N)
    n = N - 1
    return [Configuration(s, n) for s in range(2 ** n)]


@lru_cache(maxsize=16)
def state_matrix(N: int) -> np.ndarray:
    """uint8 array (2^(N-1), N-1); row s is the occupancy of state s."""
    _check_N(N)
    n = N - 1
    s = np.arange(2 ** n, dtype=np.int64)
    out = ((s[:, None] >> np.arange(n)[None, :]) & 1).astype(np.uint8)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=64)
def bernoulli_weights(N: int, rho: float) -> np.ndarray:
    """Product Bernoulli(rho) probabilities of every state (read-only)."""
    k = state_matrix(N).sum(axis=1)
    n = N - 1
    out = rho ** k * (1.0 - rho) ** (n - k)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Distribution:
    weights: np.ndarray
    N: int

    def __post_init__(self):
        w = self.weights
        if w.shape != (2 ** (self.N - 1),):
            raise DomainError("weights do not match the state space")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("weights must be non-negative and sum to 1")

    @classmethod
    def bernoulli(cls, N: int, rho: float) -> "Distribution":
        return cls(bernoulli_weights(N, rho), N)

    @classmethod
    def point_mass(cls, config: Configuration) -> "Distribution":
        w = np.zeros(2 ** config.n_sites)
        w[config.bits] = 1.0
        return cls(w, config.n_sites + 1)


@dataclass(frozen=True)
class DensityFunction:
    """f >= 0 on Omega_N with int f d(nu_alpha) = 1."""

    values: np.ndarray
    N: int
    alpha: float

    def __post_init__(self):
        if self.values.shape != (2 ** (self.N - 1),):
            raise DomainError("density does not match the state space")
        if np.any(self.values < 0):
            raise DomainError("a density must be non-negative")
        total = float(np.dot(self.values, bernoulli_weights(self.N, self.alpha)))
        if abs(total - 1.0) > 1e-12:
            raise DomainError(f"density integrates to {total!r}, not 1")

    @classmethod
    def from_measure(cls, weights: np.ndarray, N: int, alpha: float) -> "DensityFunction":
        """Radon-Nikodym derivative of a probability vector w.r.t. nu_alpha."""
        w = np.asarray(weights, dtype=float)
        w = w / w.sum()
        return cls(w / bernoulli_weights(N, alpha), N, alpha)

    @classmethod
    def constant(cls, N: int, alpha: float) -> "DensityFunction":
        return cls(np.ones(2 ** (N - 1)), N, alpha)

    def measure(self) -> Distribution:
        w = self.values * bernoulli_weights(self.N, self.alpha)
        return Distribution(w / w.sum(), self.N)


# ------------------------------------------------------------------ generator


def _transitions(params: ModelParams):
    """(source, target, rate, kind) arrays for every positive-rate jump.

    kind is 0 for bulk exchanges, 1 for the left flip, 2 for the right flip.
    """
    N = params.N
    _check_N(N)
    n = N - 1
    s = np.arange(2 ** n, dtype=np.int64)
    src, dst, rate, kind = [], [], [], []
    for b in range(n - 1):
        disc = ((s >> b) ^ (s >> (b + 1))) & 1
        idx = s[disc == 1]
        src.append(idx)
        dst.append(idx ^ (3 << b))
        rate.append(np.ones(idx.size))
        kind.append(np.zeros(idx.size, dtype=np.int8))
    scale = params.boundary_scale
    e1 = s & 1
    src.append(s)
    dst.append(s ^ 1)
    rate.append(scale * np.where(e1 == 0, params.alpha, 1.0 - params.alpha))
    kind.append(np.ones(s.size, dtype=np.int8))
    en = (s >> (n - 1)) & 1
    src.append(s)
    dst.append(s ^ (1 << (n - 1)))
    rate.append(scale * np.where(en == 0, params.beta, 1.0 - params.beta))
    kind.append(np.full(s.size, 2, dtype=np.int8))
    return (np.concatenate(src), np.concatenate(dst), np.concatenate(rate),
            np.concatenate(kind))


@dataclass(frozen=True)
class GeneratorMatrix:
    """Rate matrix Q over the enumerated states; Q[i, j] = rate(i -> j)."""

    params: ModelParams
    Q: sp.csr_matrix

    @property
    def dimension(self) -> int:
        return self.Q.shape[0]

    def dense(self) -> np.ndarray:
        return self.Q.toarray()

    def apply(self, f: np.ndarray) -> np.ndarray:
        """(L f)(eta) for a function given by its values on the states."""
        return self.Q @ f


def _assemble(params, src, dst, rate) -> sp.csr_matrix:
    dim = 2 ** (params.N - 1)
    off = sp.csr_matrix((rate, (src, dst)), shape=(dim, dim))
    out = sp.csr_matrix((np.concatenate([rate, -np.asarray(off.sum(axis=1)).ravel()]),
                         (np.concatenate([src, np.arange(dim)]),
                          np.concatenate([dst, np.arange(dim)]))), shape=(dim, dim))
    out.sum_duplicates()
    return out


def generator_matrix(params: ModelParams, parts: str = "all") -> GeneratorMatrix:
    """Generator of the full dynamics, or of one piece of it.

    ``parts`` is ``'all'``, ``'bulk'``, ``'left'`` or ``'right'``. Results
    are cached per parameter point; treat the matrix as read-only.
    """
    if parts not in ("all", "bulk", "left", "right"):
        raise ValueError(f"unknown generator part {parts!r}")
    return _generator_matrix(params, parts)


@lru_cache(maxsize=32)
def _generator_matrix(params: ModelParams, parts: str) -> GeneratorMatrix:
    src, dst, rate, kind = _transitions(params)
    sel = {"all": None, "bulk": 0, "left": 1, "right": 2}[parts]
    if sel is not None:
        m = kind == sel
        src, dst, rate = src[m], dst[m], rate[m]
    return GeneratorMatrix(params, _assemble(params, src, dst, rate))


def detailed_balance_defect(gen: GeneratorMatrix, weights: np.ndarray) -> float:
    """max |w_i Q_ij - w_j Q_ji| over off-diagonal pairs."""
    Q = gen.Q.tocsr().copy()
    Q.setdiag(0)
    Q.eliminate_zeros()
    flux = sp.diags(weights) @ Q
    diff = flux - flux.T
    return float(abs(diff).max()) if diff.nnz else 0.0


def stationary_distribution(params: ModelParams) -> Distribution:
    """Solve pi Q = 0 with one balance equation replaced by sum(pi) = 1."""
    gen = generator_matrix(params)
    dim = gen.dimension
    A = gen.Q.T.tolil()
    A[dim - 1, :] = np.ones(dim)
    rhs = np.zeros(dim)
    rhs[-1] = 1.0
    try:
        if dim <= DENSE_MAX_DIM:
            pi = scipy.linalg.solve(A.toarray(), rhs)
        else:
            # symmetric-pattern ordering: Q has the sparsity pattern of its transpose
            pi = spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A").solve(rhs)
    except (np.linalg.LinAlgError, RuntimeError) as exc:
        raise SolverError(f"stationary solve failed for {params}") from exc
    residual = float(np.max(np.abs(gen.Q.T @ pi)))
    if not np.all(np.isfinite(pi)) or residual > RESIDUAL_TOL:
        raise SolverError(f"stationary residual {residual:.3e} exceeds {RESIDUAL_TOL}")
    pi = np.clip(pi, 0.0, None)
    return Distribution(pi / pi.sum(), params.N)


def stationary_residual(params: ModelParams, dist: Distribution) -> float:
    return float(np.max(np.abs(generator_matrix(params).Q.T @ dist.weights)))


# ----------------------------------------------------------- mean & correlations


def exact_mean_profile(params: ModelParams, dist: Distribution | None = None) -> DensityProfile:
    dist = stationary_distribution(params) if dist is None else dist
    mean = dist.weights @ state_matrix(params.N)
    n = params.n_sites
    return DensityProfile(np.arange(1, n + 1), mean, np.zeros(n), 0)


def closed_form_coefficients(params: ModelParams) -> tuple[float, float]:
    """(a_N, b_N) of the affine stationary mean rho^N(x) = a_N x + b_N."""
    N, c, a, b = params.N, params.c, params.alpha, params.beta
    Nt = float(N) ** params.theta
    slope = c * (b - a) / (2.0 * Nt + c * (N - 2))
    return slope, a + slope * (Nt / c - 1.0)


def closed_form_profile(params: ModelParams) -> DensityProfile:
    slope, intercept = closed_form_coefficients(params)
    x = np.arange(1, params.N)
    return DensityProfile(x, slope * x + intercept, np.zeros(x.size), 0)


def exact_two_point(params: ModelParams, dist: Distribution | None = None) -> CorrelationTable:
    dist = stationary_distribution(params) if dist is None else dist
    S = state_matrix(params.N).astype(float)
    w = dist.weights
    mean = w @ S
    second = (S * w[:, None]).T @ S
    phi = second - np.outer(mean, mean)
    np.fill_diagonal(phi, np.nan)
    se = np.zeros_like(phi)
    np.fill_diagonal(se, np.nan)
    return CorrelationTable(phi, se, 0)


def correlation_bound_ratio(params: ModelParams) -> float:
    """(N^theta + N) * max_{x<y} |phi^N(x, y)|."""
    table = exact_two_point(params)
    return (float(params.N) ** params.theta + params.N) * table.max_abs()


def mean_profile_path(params: ModelParams, times, init: np.ndarray,
                      timescale: TimeScale = TimeScale.BOUNDARY) -> np.ndarray:
    """Exact E[eta_t(x)] for any N; one-point functions obey a closed linear ODE.

    Returns an array (len(times), N-1) started from the deterministic or
    product initial profile ``init``.
    """
    n = params.n_sites
    s = params.boundary_scale
    A = np.zeros((n + 1, n + 1))
    idx = np.arange(n)
    A[idx[1:], idx[:-1]] += 1.0
    A[idx[:-1], idx[1:]] += 1.0
    A[idx, idx] -= 2.0
    A[0, 0] += 1.0 - s
    A[n - 1, n - 1] += 1.0 - s
    A[0, n] = s * params.alpha
    A[n - 1, n] = s * params.beta
    mult = TimeScale(timescale).multiplier(params)
    y0 = np.concatenate([np.asarray(init, dtype=float), [1.0]])
    return np.array([(scipy.linalg.expm(A * (t * mult)) @ y0)[:n] for t in times])


# ------------------------------------------------------ functional inequalities


def relative_entropy(mu: Distribution | np.ndarray, nu: Distribution | np.ndarray) -> float:
    """sum mu log(mu/nu) with 0 log 0 = 0; +inf if mu charges a nu-null state."""
    m = mu.weights if isinstance(mu, Distribution) else np.asarray(mu, float)
    v = nu.weights if isinstance(nu, Distribution) else np.asarray(nu, float)
    if m.shape != v.shape:
        raise DomainError("distributions live on different spaces")
    pos = m > 0
    if np.any(v[pos] == 0):
        return math.inf
    return float(np.sum(m[pos] * np.log(m[pos] / v[pos])))


def entropy_constant(alpha: float) -> float:
    """C_0 = -log min(alpha, 1 - alpha): H(mu | nu_alpha) <= (N-1) C_0."""
    return -math.log(min(alpha, 1.0 - alpha))


def _swap_targets(N: int) -> list[np.ndarray]:
    n = N - 1
    s = np.arange(2 ** n, dtype=np.int64)
    out = []
    for b in range(n - 1):
        disc = ((s >> b) ^ (s >> (b + 1))) & 1
        out.append(np.where(disc == 1, s ^ (3 << b), s))
    return out


def _density(f, params) -> np.ndarray:
    if isinstance(f, DensityFunction):
        if f.N != params.N or f.alpha != params.alpha:
            raise DomainError("density was built for different N or alpha")
        return f.values
    return np.asarray(f, dtype=float)


def carre_inner(f, g, params: ModelParams) -> float:
    """<f, g>_alpha: L^2 inner product under the product Bernoulli(alpha) measure."""
    nu = bernoulli_weights(params.N, params.alpha)
    return float(np.sum(_density(f, params) * _density(g, params) * nu))


def dirichlet_form(f, params: ModelParams) -> float:
    """D_{N,0}(f; nu_alpha) = 1/2 sum_x int [sqrt f(eta^{x,x+1}) - sqrt f(eta)]^2 d nu_alpha."""
    g = np.sqrt(_density(f, params))
    nu = bernoulli_weights(params.N, params.alpha)
    total = 0.0
    for tgt in _swap_targets(params.N):
        total += float(np.sum(nu * (g[tgt] - g) ** 2))
    return 0.5 * total


def replacement_values(N: int) -> np.ndarray:
    """V on every state."""
    S = state_matrix(N)
    return S[:, 0] + S[:, -1] - 2.0 * S.mean(axis=1)


def moving_particle_gap(f, params: ModelParams) -> float:
    """4 N^(1/2) D_{N,0}(f)^(1/2) - <V, f>_alpha; non-negative for every density."""
    lhs = carre_inner(replacement_values(params.N), f, params)
    rhs = 4.0 * math.sqrt(params.N) * math.sqrt(dirichlet_form(f, params))
    return rhs - lhs


def generator_sqrt_form(f, params: ModelParams) -> tuple[float, float]:
    """(<L_N sqrt f, sqrt f>_alpha, D_{N,0}(f; nu_alpha))."""
    g = np.sqrt(_density(f, params))
    Lg = generator_matrix(params).apply(g)
    return carre_inner(Lg, g, params), dirichlet_form(f, params)


def boundary_form_constant(alpha: float, beta: float) -> float:
    """k with N^theta (<L_N sqrt f, sqrt f>_alpha + D) <= c k for every density f.

    The bulk part contributes exactly -D and the left flips are
    nu_alpha-reversible, so only the right flips count; bounding
    sqrt f(eta^{N-1}) sqrt f(eta) by the mean of squares and changing
    variables gives k = max((beta-alpha)/alpha, (alpha-beta)/(1-alpha), 0) / 2.
    """
    return 0.5 * max((beta - alpha) / alpha, (alpha - beta) / (1.0 - alpha), 0.0)


def random_density(N: int, alpha: float, rng: np.random.Generator,
                   concentration: float = 1.0) -> DensityFunction:
    """Density of a Dirichlet(concentration)-distributed probability vector."""
    w = rng.dirichlet(np.full(2 ** (N - 1), concentration))
    w = np.maximum(w, 1e-300)
    return DensityFunction.from_measure(w, N, alpha)


def adversarial_density(N: int, alpha: float, rng: np.random.Generator,
                        sharpness: float = 4.0) -> DensityFunction:
    """Mass concentrated on eta(1) = eta(N-1) = 1 with a nearly empty bulk."""
    S = state_matrix(N)
    bulk = S[:, 1:-1].sum(axis=1)
    ends = (S[:, 0] == 1) & (S[:, -1] == 1)
    logw = -sharpness * bulk + np.where(ends, 0.0, -2.0 * sharpness)
    logw = logw + 0.5 * rng.standard_normal(logw.size)
    w = np.exp(logw - logw.max())
    return DensityFunction.from_measure(w, N, alpha)
