"""Exact simulation of the trait process by uniformized thinning.

Proposals arrive at the constant envelope rate K*(b_hi + theta_hi); a
proposal is a resampling attempt with probability b_hi/(b_hi + theta_hi)
(ordered pair (i, j) uniform, accepted with probability b(x_i, x_j)/b_hi,
on acceptance x_i <- x_j) and otherwise a mutation attempt (i uniform,
accepted with probability theta(x_i)/theta_hi, on acceptance
x_i <- x_i + sigma h with h ~ m(x_i, .)). Rejected proposals advance time
only, so the simulated law is exactly the model's.

A brute-force direct-method sampler (all K^2 + K true rates tabulated) is
kept for small-K cross-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels, observables
from .model import Population, REFRESH_EVERY

DEFAULT_EVENT_BUDGET = 2_000_000_000


@dataclass(frozen=True)
class Event:
    kind: str  # "resampling" or "mutation" (accepted) / "rejected"
    time: float  # nu-time stamp
    i: int = -1
    j: int = -1
    step: float = 0.0


@dataclass
class SimConfig:
    """Scaling parameters plus the slow-time observation grid."""

    params: object  # ScalingParams
    obs_times: np.ndarray = None  # slow times, including 0 and T_slow
    budget: int = DEFAULT_EVENT_BUDGET
    track_ladder: bool = True

    def __post_init__(self):
        if self.obs_times is None:
            n = 512 if self.params.T_slow > 0 else 0
            self.obs_times = np.linspace(0.0, self.params.T_slow, n + 1)
        self.obs_times = np.asarray(self.obs_times, dtype=np.float64)
        if self.obs_times[0] != 0.0 or np.any(np.diff(self.obs_times) < 0):
            raise ValueError("observation grid must start at 0 and be nondecreasing")
        if self.obs_times[-1] > self.params.T_slow:
            raise ValueError("observation grid exceeds the horizon")


@dataclass
class Trajectory:
    """Time-indexed observables of one replicate."""

    t_slow: np.ndarray
    z: np.ndarray
    moments: np.ndarray  # shape (n, 6): absolute moments M1..M6
    m3_signed: np.ndarray
    diam: np.ndarray
    tau_hat: np.ndarray  # 0/1 flags (monotone)
    tau_check: np.ndarray
    ladder_level: np.ndarray
    events_so_far: np.ndarray
    budget_exceeded: bool = False
    flags: object = None  # StopFlags
    ladder: object = None  # LadderDiag
    params: object = None


def total_proposal_rate(model, K):
    """Envelope rate K*(b_hi + theta_hi) for the thinning proposals."""
    return K * (model.b_hi + model.theta_hi)


def run(pop, cfg, model, rng, observers=()):
    """Advance ``pop`` to the slow horizon, recording at the grid times."""
    params = cfg.params
    bfun, thfun, sfun = kernels.compiled_model_functions(model)
    mut_family = kernels.MUT_FAMILY_CODES[model.mutation.family]
    torus = model.domain.kind == "torus"
    wrap_lo = model.domain.center - 2.0 * model.domain.half_width
    wrap_span = 4.0 * model.domain.half_width if torus else 1.0

    n = cfg.obs_times.size
    z = np.empty(n)
    moments = np.empty((n, 6))
    m3_signed = np.empty(n)
    diam = np.empty(n)
    tau_hat = np.zeros(n, dtype=np.int64)
    tau_check = np.zeros(n, dtype=np.int64)
    ladder_level = np.zeros(n, dtype=np.int64)
    events_arr = np.zeros(n, dtype=np.int64)

    flags = observables.StopFlags()
    fs0 = observables.fast_state_of_pop(pop, params.sigma)
    ladder = observables.LadderDiag.start(fs0.M2, params.K, params.eps)
    budget_exceeded = False

    since_refresh = 0
    for idx, t_obs in enumerate(cfg.obs_times):
        t_target = params.slow_to_nu(t_obs) if params.T_slow > 0 else 0.0
        if t_target > pop.nu_time and not budget_exceeded:
            (pop.nu_time, pop.running_sum, pop.events, since_refresh,
             budget_exceeded) = kernels.ibm_advance(
                pop.traits, pop.running_sum, pop.nu_time, t_target, rng,
                bfun, thfun, sfun, model.b_hi, model.theta_hi, params.sigma,
                model.mutation.half_width, mut_family,
                torus, wrap_lo, wrap_span,
                pop.events, since_refresh, cfg.budget, REFRESH_EVERY,
            )
        fs = observables.fast_state_of_pop(pop, params.sigma)
        t_slow_now = params.nu_to_slow(pop.nu_time)
        flags.update(fs, params, t_slow_now)
        if cfg.track_ladder:
            ladder.update(fs, t_slow_now)
        z[idx] = pop.mean
        moments[idx] = fs.moments
        m3_signed[idx] = fs.m3_signed
        diam[idx] = fs.diam
        tau_hat[idx] = int(flags.tau_hat_hit)
        tau_check[idx] = int(flags.tau_check_hit)
        ladder_level[idx] = ladder.level
        events_arr[idx] = pop.events
        for obs in observers:
            obs(t_obs, pop, fs)
        if budget_exceeded:
            # Truncate the grid at the last reached time.
            n_done = idx + 1
            return Trajectory(
                cfg.obs_times[:n_done].copy(), z[:n_done], moments[:n_done],
                m3_signed[:n_done], diam[:n_done], tau_hat[:n_done],
                tau_check[:n_done], ladder_level[:n_done], events_arr[:n_done],
                budget_exceeded=True, flags=flags, ladder=ladder, params=params,
            )
    return Trajectory(
        cfg.obs_times.copy(), z, moments, m3_signed, diam, tau_hat,
        tau_check, ladder_level, events_arr,
        budget_exceeded=False, flags=flags, ladder=ladder, params=params,
    )


# ---------------------------------------------------------------------------
# Single-proposal reference step (Python mirror of the kernel), and the
# direct method. Both are exercised as oracles for the thinning kernel.

def step(pop, model, params, rng):
    """One thinning proposal; returns the (possibly rejected) Event."""
    K = pop.K
    envelope = total_proposal_rate(model, K)
    dt = rng.exponential(1.0 / envelope)
    pop.nu_time += dt
    t = pop.nu_time
    if rng.random() < model.b_hi / (model.b_hi + model.theta_hi):
        i = int(rng.integers(0, K))
        j = int(rng.integers(0, K))
        if rng.random() * model.b_hi < model.b(pop.traits[i], pop.traits[j]):
            pop.apply_resampling(i, j)
            return Event("resampling", t, i=i, j=j)
        return Event("rejected", t)
    i = int(rng.integers(0, K))
    if rng.random() * model.theta_hi < model.theta(pop.traits[i]):
        h = model.sample_mutation(pop.traits[i], rng)
        new_x = model.domain.wrap(pop.traits[i] + params.sigma * h)
        pop.apply_mutation(i, new_x)
        return Event("mutation", t, i=i, step=h)
    return Event("rejected", t)


def run_direct(pop, model, params, rng, n_events):
    """Direct-method Gillespie: exact but O(K^2) per event; small-K oracle.

    Returns the list of accepted Events (every direct-method event is an
    acceptance; there is no thinning).
    """
    events = []
    K = pop.K
    for _ in range(n_events):
        x = pop.traits
        res_rates = np.empty((K, K))
        for i in range(K):
            for j in range(K):
                res_rates[i, j] = model.b(x[i], x[j]) / K
        mut_rates = np.array([model.theta(xi) for xi in x])
        flat = np.concatenate([res_rates.ravel(), mut_rates])
        total = flat.sum()
        pop.nu_time += rng.exponential(1.0 / total)
        pick = np.searchsorted(np.cumsum(flat), rng.random() * total)
        pick = min(pick, flat.size - 1)
        if pick < K * K:
            i, j = divmod(int(pick), K)
            pop.apply_resampling(i, j)
            events.append(Event("resampling", pop.nu_time, i=i, j=j))
        else:
            i = int(pick) - K * K
            h = model.sample_mutation(x[i], rng)
            pop.apply_mutation(i, model.domain.wrap(x[i] + params.sigma * h))
            events.append(Event("mutation", pop.nu_time, i=i, step=h))
    return events
