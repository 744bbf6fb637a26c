"""Exact simulator and numerical laboratory for a constant-size
trait-structured population with resampling and rare small mutations.

The package simulates the individual-based dynamics exactly (uniformized
thinning), integrates the limiting mean-trait ODE, simulates the frozen
fast component (Moran pre-limit of a centred Fleming-Viot process),
evaluates generators exactly on test functionals, and carries the
polynomial dual process used to verify moment identities.
"""

from . import (  # noqa: F401
    cead,
    config,
    exprs,
    fvfast,
    gencheck,
    gillespie,
    kernels,
    model,
    observables,
    polydual,
    reports,
)

__version__ = "0.1.0"
