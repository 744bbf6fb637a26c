"""Model ingredients: birth/death kernel b, mutation rate theta, mutation law.

A :class:`ModelSpec` bundles the triple (b, theta, m) with verified bounds
and the derived quantities used throughout: the fitness
``Fit(y, x) = b(x, y) - b(y, x)``, its diagonal gradient, the mutation/
resampling ratio ``beta = theta/b`` and the resampling rate
``lambda = b/(theta*m2)`` of the fast limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import exprs
from .exprs import ExprError, ValidationFailed

MUTATION_FAMILIES = ("uniform", "cosine_bump")

# Unit-halfwidth second moments of the two mutation shapes on [-1, 1]:
# uniform: 1/3; cosine bump (1+cos(pi h))/2: 1/3 - 2/pi^2.
_UNIT_M2 = {
    "uniform": 1.0 / 3.0,
    "cosine_bump": 1.0 / 3.0 - 2.0 / math.pi**2,
}


def _leggauss(order):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return nodes, weights


@dataclass(frozen=True)
class MutationLaw:
    """Symmetric, compactly supported mutation law m(x, dh).

    ``family`` selects the shape (uniform or raised-cosine bump), the support
    is ``[-half_width*s(x), half_width*s(x)]`` where ``s`` is an optional
    positive scale expression in ``x`` (default 1).
    """

    family: str = "uniform"
    half_width: float = 1.0
    scale_source: str | None = None
    scale_ast: object = field(default=None, compare=False)

    def __post_init__(self):
        if self.family not in MUTATION_FAMILIES:
            raise ExprError(f"unknown mutation family {self.family!r}")
        if not (self.half_width > 0 and math.isfinite(self.half_width)):
            raise ExprError("mutation half_width must be positive and finite")
        if self.scale_source is not None and self.scale_ast is None:
            object.__setattr__(
                self, "scale_ast", exprs.parse(self.scale_source, variables=("x",))
            )

    def scale(self, x):
        if self.scale_ast is None:
            return 1.0
        return exprs.evaluate(self.scale_ast, {"x": x})

    def support_half_width(self, x):
        return self.half_width * self.scale(x)

    def density(self, x, h):
        a = self.support_half_width(x)
        if abs(h) > a:
            return 0.0
        if self.family == "uniform":
            return 1.0 / (2.0 * a)
        return (1.0 + math.cos(math.pi * h / a)) / (2.0 * a)

    def moment(self, x, ell, order=64):
        """ell-th absolute moment of m(x, .) by Gauss-Legendre quadrature."""
        if not (1 <= ell <= 8):
            raise ExprError("moment order must be in 1..8")
        a = self.support_half_width(x)
        nodes, weights = _leggauss(order)
        # integrate over [0, a] and double by symmetry: |h|**ell has a kink
        # at 0 that would spoil quadrature on the full interval
        h = (nodes + 1.0) * (0.5 * a)
        vals = h**ell * np.array([self.density(x, hi) for hi in h])
        return float(a * np.dot(weights, vals))

    def signed_moment(self, x, ell):
        """Signed ell-th moment; zero for odd ell by symmetry."""
        if ell % 2 == 1:
            return 0.0
        return self.moment(x, ell)

    def unit_m2(self):
        """Second moment of the unit-halfwidth shape."""
        return _UNIT_M2[self.family]

    def m2(self, x):
        """Closed-form second moment (shape moment times squared support)."""
        a = self.support_half_width(x)
        return self.unit_m2() * a * a

    def sample(self, x, rng, size=None):
        """Draw mutation steps h ~ m(x, .)."""
        a = self.support_half_width(x)
        if self.family == "uniform":
            return rng.uniform(-a, a, size=size)
        n = 1 if size is None else int(np.prod(size))
        out = np.empty(n)
        filled = 0
        while filled < n:
            cand = rng.uniform(-1.0, 1.0, size=2 * (n - filled))
            acc = rng.random(2 * (n - filled)) < 0.5 * (1.0 + np.cos(np.pi * cand))
            take = cand[acc][: n - filled]
            out[filled : filled + take.size] = take
            filled += take.size
        out *= a
        if size is None:
            return float(out[0])
        return out.reshape(size)


@dataclass(frozen=True)
class Domain:
    """Trait space: the real line, or a torus [x0-2R, x0+2R)."""

    kind: str = "line"  # "line" or "torus"
    center: float = 0.0
    half_width: float = 0.0  # R; the wrapped interval has length 4R

    def wrap(self, x):
        if self.kind == "line":
            return x
        lo = self.center - 2.0 * self.half_width
        span = 4.0 * self.half_width
        return lo + np.mod(x - lo, span)

    def difference(self, a, b):
        """a - b, as the minimal signed arc on a torus."""
        if self.kind == "line":
            return a - b
        span = 4.0 * self.half_width
        d = np.mod(a - b + span / 2.0, span) - span / 2.0
        return d


class ModelSpec:
    """The validated model triple (b, theta, m) with derived quantities."""

    def __init__(
        self,
        b_source,
        theta_source,
        mutation: MutationLaw,
        domain: Domain | None = None,
        bounds_box=10.0,
        grid_n=101,
        margin=1e-3,
    ):
        self.b_source = b_source
        self.theta_source = theta_source
        self.mutation = mutation
        self.domain = domain or Domain()
        self.b_ast = exprs.parse(b_source, variables=("x", "y"))
        self.theta_ast = exprs.parse(theta_source, variables=("x",))

        if self.domain.kind == "torus":
            lo = self.domain.center - 2.0 * self.domain.half_width
            hi = self.domain.center + 2.0 * self.domain.half_width
        else:
            lo, hi = -bounds_box, bounds_box
        self._box = (lo, hi)
        rep_b = exprs.require_positive(
            self.b_ast, {"x": (lo, hi), "y": (lo, hi)}, grid_n, margin,
            variables=["x", "y"], what="b",
        )
        rep_th = exprs.require_positive(
            self.theta_ast, {"x": (lo, hi)}, grid_n, margin,
            variables=["x"], what="theta",
        )
        if mutation.scale_ast is not None:
            exprs.require_positive(
                mutation.scale_ast, {"x": (lo, hi)}, grid_n, margin,
                variables=["x"], what="mutation scale",
            )
        self.b_lo, self.b_hi = rep_b.min_observed, rep_b.max_observed
        self.theta_lo, self.theta_hi = rep_th.min_observed, rep_th.max_observed
        scales = [mutation.scale(x) for x in np.linspace(lo, hi, grid_n)]
        m2u = mutation.unit_m2()
        self.m2_lo = m2u * (mutation.half_width * min(scales)) ** 2
        self.m2_hi = m2u * (mutation.half_width * max(scales)) ** 2

    # -- raw ingredients ----------------------------------------------------

    def b(self, x, y):
        return exprs.evaluate(self.b_ast, {"x": x, "y": y})

    def theta(self, x):
        return exprs.evaluate(self.theta_ast, {"x": x})

    def m2(self, x):
        return self.mutation.m2(x)

    def mutation_moment(self, x, ell, order=64):
        return self.mutation.moment(x, ell, order)

    def sample_mutation(self, x, rng, size=None):
        return self.mutation.sample(x, rng, size)

    # -- derived quantities --------------------------------------------------

    def fitness(self, y, x):
        """Invasion fitness of a y-mutant in an x-resident population."""
        return self.b(x, y) - self.b(y, x)

    def fitness_gradient_diag(self, z):
        """d/dy Fit(y, z) at y = z, by Richardson-extrapolated central FD."""
        h = max(1e-5, 1e-5 * abs(z))

        def cd(step):
            return (self.fitness(z + step, z) - self.fitness(z - step, z)) / (2.0 * step)

        d1, d2 = cd(h), cd(h / 2.0)
        return (4.0 * d2 - d1) / 3.0

    def beta(self, z):
        return self.theta(z) / self.b(z, z)

    def lambda_rate(self, z):
        return self.b(z, z) / (self.theta(z) * self.m2(z))


@dataclass(frozen=True)
class ScalingParams:
    """Population size, mutation amplitude, stopping exponent, horizon."""

    K: int
    sigma: float
    eps: float = 0.5
    T_slow: float = 1.0

    def __post_init__(self):
        if self.K < 2:
            raise ExprError("K must be at least 2")
        for name in ("sigma", "eps"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ExprError(f"{name} must be positive and finite")
        if not (self.T_slow >= 0 and math.isfinite(self.T_slow)):
            raise ExprError("T_slow must be nonnegative and finite")

    @property
    def regime(self):
        """Which scaling regime sigma falls in for this K."""
        if self.sigma < self.K ** -(2.0 + self.eps):
            return "theorem"
        if self.sigma < self.K ** -1.5:
            return "conjectured"
        return "outside"

    @property
    def nu_horizon(self):
        """Horizon in the unrescaled (nu) clock."""
        return self.T_slow / (self.K * self.sigma**2)

    def slow_to_nu(self, t_slow):
        return t_slow / (self.K * self.sigma**2)

    def nu_to_slow(self, t_nu):
        return t_nu * self.K * self.sigma**2

    @property
    def m2_threshold(self):
        """Level whose first hit defines the moment stopping time."""
        return self.K**self.eps

    @property
    def diam_threshold(self):
        """Level whose first crossing defines the diameter stopping time."""
        return 1.0 / (self.sigma * self.K ** ((3.0 + self.eps) / 2.0))


REFRESH_EVERY = 1 << 20


class Population:
    """K trait values with an exact running sum and event bookkeeping."""

    def __init__(self, traits, nu_time=0.0, events=0):
        self.traits = np.asarray(traits, dtype=np.float64).copy()
        self.K = self.traits.size
        if self.K < 2:
            raise ExprError("population needs at least 2 individuals")
        self.running_sum = float(self.traits.sum())
        self.nu_time = float(nu_time)
        self.events = int(events)
        self._since_refresh = 0

    @classmethod
    def monomorphic(cls, x0, K):
        return cls(np.full(K, float(x0)))

    @classmethod
    def spread(cls, x0, K, width, rng):
        """i.i.d. bump spread of the given width around x0, recentred to x0."""
        u = rng.uniform(-1.0, 1.0, K) * width
        u -= u.mean()
        return cls(x0 + u)

    @property
    def mean(self):
        return self.running_sum / self.K

    def refresh(self):
        self.running_sum = float(self.traits.sum())
        self._since_refresh = 0

    def apply_resampling(self, i, j):
        """Individual i dies, individual j reproduces."""
        self.running_sum += self.traits[j] - self.traits[i]
        self.traits[i] = self.traits[j]
        self._bump()

    def apply_mutation(self, i, new_value):
        self.running_sum += new_value - self.traits[i]
        self.traits[i] = new_value
        self._bump()

    def _bump(self):
        self.events += 1
        self._since_refresh += 1
        if self._since_refresh >= REFRESH_EVERY:
            self.refresh()
