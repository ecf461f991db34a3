"""Parameters, configurations and elementary moves of the slow-boundary SSEP.

Sites are labelled 1..N-1 everywhere in the public interface. A configuration
is stored as a Python integer bitmask with site 1 in the least significant bit,
which is also the enumeration order used by :mod:`slowssep.exact`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


@dataclass(frozen=True)
class ModelParams:
    """The tuple (N, theta, c, alpha, beta) defining the process."""

    N: int
    theta: float
    c: float
    alpha: float
    beta: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 3:
            raise DomainError(f"N must be an integer >= 3, got {self.N!r}")
        if not self.theta >= 0:
            raise DomainError(f"theta must be >= 0, got {self.theta!r}")
        if not self.c > 0:
            raise DomainError(f"c must be > 0, got {self.c!r}")
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise DomainError(f"{name} must lie in (0, 1), got {v!r}")
        object.__setattr__(self, "N", int(self.N))

    @property
    def n_sites(self) -> int:
        return self.N - 1

    @cached_property
    def boundary_scale(self) -> float:
        """c * N**(-theta), the prefactor of both boundary rates."""
        return self.c * float(self.N) ** (-self.theta)

    def to_dict(self) -> dict:
        return {"N": self.N, "theta": self.theta, "c": self.c,
                "alpha": self.alpha, "beta": self.beta}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        return cls(N=int(d["N"]), theta=float(d["theta"]), c=float(d["c"]),
                   alpha=float(d["alpha"]), beta=float(d["beta"]))


@dataclass(frozen=True)
class Configuration:
    """Occupancy vector eta over sites 1..N-1, packed into an integer."""

    bits: int
    n_sites: int

    def __post_init__(self):
        if self.n_sites < 2:
            raise DomainError("a configuration needs at least two sites")
        if self.bits < 0 or self.bits >> self.n_sites:
            raise DomainError(f"bits {self.bits:#x} do not fit {self.n_sites} sites")

    @classmethod
    def from_sequence(cls, occupancy: Iterable[int]) -> "Configuration":
        occ = list(occupancy)
        bits = 0
        for i, v in enumerate(occ):
            if v not in (0, 1):
                raise DomainError(f"occupancy values must be 0 or 1, got {v!r}")
            bits |= int(v) << i
        return cls(bits, len(occ))

    @classmethod
    def from_string(cls, s: str) -> "Configuration":
        """Parse a '0'/'1' string with site 1 leftmost."""
        if not s or set(s) - {"0", "1"}:
            raise DomainError(f"not a configuration string: {s!r}")
        return cls.from_sequence(int(ch) for ch in s)

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Configuration":
        arr = np.asarray(arr, dtype=np.uint8)
        packed = np.packbits(arr, bitorder="little")
        return cls(int.from_bytes(packed.tobytes(), "little"), arr.size)

    @classmethod
    def zeros(cls, n_sites: int) -> "Configuration":
        return cls(0, n_sites)

    @classmethod
    def ones(cls, n_sites: int) -> "Configuration":
        return cls((1 << n_sites) - 1, n_sites)

    def __getitem__(self, x: int) -> int:
        if not 1 <= x <= self.n_sites:
            raise DomainError(f"site {x} outside 1..{self.n_sites}")
        return (self.bits >> (x - 1)) & 1

    def __len__(self) -> int:
        return self.n_sites

    def __iter__(self):
        return (self[x] for x in range(1, self.n_sites + 1))

    def __str__(self) -> str:
        return "".join(str(v) for v in self)

    def to_array(self) -> np.ndarray:
        nbytes = (self.n_sites + 7) // 8
        raw = np.frombuffer(self.bits.to_bytes(nbytes, "little"), dtype=np.uint8)
        return np.unpackbits(raw, bitorder="little")[: self.n_sites].copy()

    @property
    def particles(self) -> int:
        return self.bits.bit_count()


class TimeScale(enum.Enum):
    """Speed-up applied to the generator: raw, N**2 or N**(1+theta)."""

    RAW = "raw"
    DIFFUSIVE = "diffusive"
    BOUNDARY = "boundary"

    def multiplier(self, params: ModelParams) -> float:
        if self is TimeScale.RAW:
            return 1.0
        if self is TimeScale.DIFFUSIVE:
            return float(params.N) ** 2
        return float(params.N) ** (1.0 + params.theta)


class EventKind(enum.Enum):
    EXCHANGE = "exchange"
    FLIP_LEFT = "flip_left"
    FLIP_RIGHT = "flip_right"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    rate: float
    bond: int | None = field(default=None)  # left site x of bond (x, x+1)


def _check(config: Configuration, params: ModelParams | None):
    if params is not None and config.n_sites != params.n_sites:
        raise DomainError(
            f"configuration has {config.n_sites} sites, params expect {params.n_sites}")


def exchange(config: Configuration, x: int) -> Configuration:
    """Swap the occupations of sites x and x+1."""
    if not 1 <= x <= config.n_sites - 1:
        raise DomainError(f"bond ({x}, {x + 1}) outside 1..{config.n_sites}")
    b = config.bits
    if ((b >> (x - 1)) ^ (b >> x)) & 1:
        b ^= 0b11 << (x - 1)
    return Configuration(b, config.n_sites)


def flip(config: Configuration, side: str) -> Configuration:
    """Flip site 1 (``side='left'``) or site N-1 (``side='right'``)."""
    if side == "left":
        return Configuration(config.bits ^ 1, config.n_sites)
    if side == "right":
        return Configuration(config.bits ^ (1 << (config.n_sites - 1)), config.n_sites)
    raise DomainError(f"side must be 'left' or 'right', got {side!r}")


def boundary_rates(config: Configuration, params: ModelParams) -> tuple[float, float]:
    """Rates of the left and right flips, c N^-theta r_alpha and c N^-theta r_beta."""
    _check(config, params)
    a, b = params.alpha, params.beta
    left = a if config[1] == 0 else 1.0 - a
    right = b if config[config.n_sites] == 0 else 1.0 - b
    s = params.boundary_scale
    return s * left, s * right


def discordant_bonds(config: Configuration) -> list[int]:
    d = config.bits ^ (config.bits >> 1)
    return [x for x in range(1, config.n_sites) if (d >> (x - 1)) & 1]


def enumerate_events(config: Configuration, params: ModelParams) -> list[Event]:
    """All jumps with positive rate: one per discordant bond, plus both flips."""
    _check(config, params)
    events = [Event(EventKind.EXCHANGE, 1.0, x) for x in discordant_bonds(config)]
    rl, rr = boundary_rates(config, params)
    events.append(Event(EventKind.FLIP_LEFT, rl))
    events.append(Event(EventKind.FLIP_RIGHT, rr))
    return events


def total_rate(config: Configuration, params: ModelParams) -> float:
    return math.fsum(e.rate for e in enumerate_events(config, params))


def apply_event(config: Configuration, event: Event) -> Configuration:
    if event.kind is EventKind.EXCHANGE:
        return exchange(config, event.bond)
    return flip(config, "left" if event.kind is EventKind.FLIP_LEFT else "right")


def averaged_density(config: Configuration) -> float:
    """G(eta): fraction of occupied sites."""
    return config.particles / config.n_sites


def replacement_observable(config: Configuration) -> float:
    """V(eta) = eta(1) + eta(N-1) - 2 G(eta)."""
    return config[1] + config[config.n_sites] - 2.0 * averaged_density(config)


def bernoulli_weight(config: Configuration, rho: float) -> float:
    """Probability of ``config`` under the product Bernoulli(rho) measure."""
    k = config.particles
    return rho ** k * (1.0 - rho) ** (config.n_sites - k)


def as_configuration(value: Configuration | str | Sequence[int]) -> Configuration:
    if isinstance(value, Configuration):
        return value
    if isinstance(value, str):
        return Configuration.from_string(value)
    return Configuration.from_sequence(value)
