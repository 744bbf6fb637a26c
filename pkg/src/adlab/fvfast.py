"""Frozen-slow-component fast dynamics and its limiting generator.

With the mean trait pinned at ``z``, the rescaled cloud of deviations is
approximated by an N-particle Moran system run directly on the fast clock.
Its large-N limit is a centred Fleming-Viot process whose generator acts on
cylinder functionals F(<g, mu>); this module provides both the simulator and
exact generator evaluations (cylinder form, and polynomial form via the
operator algebra of :mod:`adlab.polydual`) so that stationarity and moment
identities can be checked numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels, polydual


@dataclass(frozen=True)
class FrozenConfig:
    """Parameters of a frozen-z fast-component run.

    ``n_particles`` is the Moran system size N; ``horizon`` the total
    fast-clock duration; snapshots of the centred power sums (orders
    1..max_order) are recorded on a uniform grid of ``n_obs`` times.
    ``burn_in_frac`` of the run is discarded before time-averaging.
    """

    z: float
    n_particles: int
    horizon: float
    n_obs: int = 2001
    burn_in_frac: float = 0.2
    max_order: int = 6

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("need at least two particles")
        if not (self.horizon > 0.0 and math.isfinite(self.horizon)):
            raise ValueError("horizon must be positive and finite")
        if not (0.0 <= self.burn_in_frac < 1.0):
            raise ValueError("burn_in_frac must lie in [0, 1)")
        if self.n_obs < 2:
            raise ValueError("need at least two observation times")


@dataclass
class FastTrajectory:
    """Observed centred power sums of a frozen-z Moran run."""

    cfg: FrozenConfig
    lam: float
    times: np.ndarray          # (n_obs,)
    power_sums: np.ndarray     # (n_obs, max_order); column q is order q+1
    final_atoms: np.ndarray

    @property
    def m2_series(self):
        return self.power_sums[:, 1]

    @property
    def burn_count(self):
        return int(round(self.cfg.burn_in_frac * (self.cfg.n_obs - 1)))

    def time_average_m2(self):
        return float(np.mean(self.m2_series[self.burn_count:]))

    def batch_means(self, n_batches=10):
        """Batch-means estimate of the stationary M2.

        Returns (mean, standard_error); the s.e. is computed from the spread
        of the batch means, which absorbs serial correlation at the batch
        scale.
        """
        tail = self.m2_series[self.burn_count:]
        usable = (tail.size // n_batches) * n_batches
        batches = tail[:usable].reshape(n_batches, -1).mean(axis=1)
        se = float(np.std(batches, ddof=1) / math.sqrt(n_batches))
        return float(np.mean(batches)), se

    def equilibrium_m2_prediction(self):
        """Stationary mean of M2 for the N-particle system.

        Setting the stationary expectation of the generator applied to M2 to
        zero gives (1 - 1/N) / (2 lam); its large-N limit is 1 / (2 lam).
        """
        n = self.cfg.n_particles
        return (1.0 - 1.0 / n) / (2.0 * self.lam)

    def summary(self):
        mean, se = self.batch_means()
        return {
            "z": self.cfg.z,
            "n_particles": self.cfg.n_particles,
            "horizon": self.cfg.horizon,
            "lambda": self.lam,
            "m2_time_average": self.time_average_m2(),
            "m2_batch_mean": mean,
            "m2_batch_se": se,
            "m2_equilibrium_prediction": self.equilibrium_m2_prediction(),
            "m2_large_n_limit": 1.0 / (2.0 * self.lam),
        }


def moran_rates(model, z, n_particles):
    """Fast-clock rates of the frozen-z Moran system.

    Resampling happens at rate lambda(z) per ordered pair and mutation at
    rate N / m2(z) per particle, with steps of size (halfwidth / sqrt(N))
    times a unit-scale draw from the mutation shape; that combination makes
    each particle's mutation part converge to a standard Brownian motion on
    the fast clock, matching the 1/2-Laplacian term of the limit generator.
    """
    lam = model.lambda_rate(z)
    m2 = model.m2(z)
    mut_rate = n_particles / m2
    step_scale = (model.mutation.support_half_width(z)
                  / math.sqrt(n_particles))
    return lam, mut_rate, step_scale


def run_frozen(model, cfg: FrozenConfig, rng, initial_atoms=None):
    """Simulate the frozen-z Moran system and record centred power sums."""
    n = cfg.n_particles
    if initial_atoms is None:
        atoms = np.zeros(n)
    else:
        atoms = np.asarray(initial_atoms, dtype=float).copy()
        if atoms.size != n:
            raise ValueError("initial_atoms size does not match n_particles")
    lam, mut_rate, step_scale = moran_rates(model, cfg.z, n)
    family = kernels.MUT_FAMILY_CODES[model.mutation.family]
    times = np.linspace(0.0, cfg.horizon, cfg.n_obs)
    sums = np.empty((cfg.n_obs, cfg.max_order))
    sums[0] = kernels.moran_power_sums(atoms, cfg.max_order)
    t = 0.0
    for k in range(1, cfg.n_obs):
        t = kernels.moran_advance(atoms, t, times[k], rng, lam, mut_rate,
                                  step_scale, family)
        sums[k] = kernels.moran_power_sums(atoms, cfg.max_order)
    return FastTrajectory(cfg=cfg, lam=lam, times=times, power_sums=sums,
                          final_atoms=atoms)


# ---------------------------------------------------------------------------
# Exact evaluation of the limit generator at an empirical measure.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CylinderFunctional:
    """Phi(mu) = F(<g, mu>) with explicit derivatives of F and g.

    All six callables must accept numpy arrays elementwise (F, dF, d2F are
    only ever called on scalars, but vectorised definitions are fine).
    """

    F: callable
    dF: callable
    d2F: callable
    g: callable
    dg: callable
    d2g: callable

    def value(self, atoms):
        return float(
            self.F(float(np.mean(self.g(np.asarray(atoms, dtype=float)))))
        )


def eval_L_FVc_cyl(phi: CylinderFunctional, atoms, lam):
    """Centred Fleming-Viot generator applied to a cylinder functional.

    ``atoms`` is the support of the (uniform) empirical measure mu at which
    the generator is evaluated. With p = <g, mu> the generator reads

      L Phi(mu) = F'(p) [ <g''/2, mu>
                          + lam ( <g'', mu> M2(mu) - 2 <g' id, mu> ) ]
                + lam F''(p) [ <g^2, mu> - p^2
                               + <g', mu>^2 M2(mu)
                               - 2 <g', mu> <g id, mu> ].

    The F' line combines plain mutation diffusion with the drift produced by
    recentring; the F'' line combines resampling fluctuations with the
    quadratic variation of the recentring term.
    """
    u = np.asarray(atoms, dtype=float)
    g = np.asarray(phi.g(u), dtype=float)
    dg = np.asarray(phi.dg(u), dtype=float)
    d2g = np.asarray(phi.d2g(u), dtype=float)
    p = float(np.mean(g))
    m2 = float(np.mean(u * u))
    drift = (0.5 * float(np.mean(d2g))
             + lam * (float(np.mean(d2g)) * m2
                      - 2.0 * float(np.mean(dg * u))))
    fluct = (float(np.mean(g * g)) - p * p
             + float(np.mean(dg)) ** 2 * m2
             - 2.0 * float(np.mean(dg)) * float(np.mean(g * u)))
    return float(phi.dF(p)) * drift + lam * float(phi.d2F(p)) * fluct


def eval_L_FVc_poly(f: "polydual.Poly", atoms, lam):
    """Generator applied to the polynomial functional mu -> <f, mu^n>.

    Independent route from :func:`eval_L_FVc_cyl`: the action on polynomial
    functionals decomposes into a per-variable drift/diffusion operator, the
    variable-identification operators (measure power n-1) and the
    second-derivative insertion operators (measure power n+1); each piece is
    contracted exactly against the empirical signed moments.
    """
    u = np.asarray(atoms, dtype=float)
    moments = polydual.signed_moments(u, f.degree() + 2)
    n = f.n_vars
    total = polydual.contract(polydual.b_operator(f, lam), moments)
    base = polydual.contract(f, moments)
    for i in range(n):
        for j in range(n):
            if i != j:
                total += lam * (
                    polydual.contract(polydual.apply_phi(f, i, j), moments)
                    - base
                )
            total += lam * polydual.contract(polydual.apply_k(f, i, j),
                                             moments)
    return total
