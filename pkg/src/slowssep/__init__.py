"""Open symmetric simple exclusion with slow boundaries.

Exact simulation, small-N enumeration, the deterministic limits (heat
equation with Dirichlet/Robin/Neumann data and the mass ODE), estimators
linking the two, and a reproducible experiment driver.
"""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    Configuration,
    DomainError,
    Event,
    EventKind,
    ModelParams,
    TimeScale,
    apply_event,
    averaged_density,
    boundary_rates,
    enumerate_events,
    exchange,
    flip,
    replacement_observable,
    total_rate,
)
