"""Jitted event loops and expression compilation.

The individual-based runs need ~1e7-1e9 thinning proposals per replicate,
which rules out a pure-Python loop; the inner loops live here as numba
kernels. Model expressions are code-generated into plain functions first
and jitted so they can be passed into the kernels.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from . import exprs

_MUT_UNIFORM = 0
_MUT_COSINE = 1

MUT_FAMILY_CODES = {"uniform": _MUT_UNIFORM, "cosine_bump": _MUT_COSINE}


@njit(cache=True, inline="always")
def _gdiv(a, b):
    if b == 0.0:
        if a == 0.0:
            return 0.0
        return math.copysign(1e300, a)
    return a / b


@njit(cache=True, inline="always")
def _gpow(a, b):
    if a == 0.0 and b == 0.0:
        return 1.0
    if a < 0.0 and b != math.floor(b):
        return 0.0
    r = a**b
    if r > 1e300:
        return 1e300
    if r < -1e300:
        return -1e300
    return r


_compiled_cache = {}


def compile_expr(ast, variables):
    """Compile an expression AST into a jitted function of ``variables``."""
    src_expr = exprs.to_python_source(ast)
    key = (src_expr, tuple(variables))
    if key in _compiled_cache:
        return _compiled_cache[key]
    args = ", ".join(variables)
    src = f"def _f({args}):\n    return {src_expr}\n"
    namespace = {"math": math, "_gdiv": _gdiv, "_gpow": _gpow}
    exec(src, namespace)
    fn = njit(namespace["_f"])
    # Force compilation now so kernel specialization errors surface early.
    fn(*([0.5] * len(variables)))
    _compiled_cache[key] = fn
    return fn


def compiled_model_functions(model):
    """Jitted (b(x,y), theta(x), mutation-scale s(x)) for a ModelSpec."""
    bfun = compile_expr(model.b_ast, ("x", "y"))
    thfun = compile_expr(model.theta_ast, ("x",))
    if model.mutation.scale_ast is not None:
        sfun = compile_expr(model.mutation.scale_ast, ("x",))
    else:
        sfun = compile_expr(exprs.parse("1", variables=("x",)), ("x",))
    return bfun, thfun, sfun


def make_rng(base_seed, stream):
    """Counter-based generator for (base_seed, stream); independent streams."""
    return np.random.default_rng(
        np.random.Philox(key=np.array([base_seed, stream], dtype=np.uint64))
    )


@njit(cache=True, inline="always")
def _draw_unit_step(rng, family):
    """Unit-halfwidth mutation step: uniform or raised-cosine bump."""
    if family == _MUT_UNIFORM:
        return rng.uniform(-1.0, 1.0)
    while True:
        h = rng.uniform(-1.0, 1.0)
        if rng.random() < 0.5 * (1.0 + math.cos(math.pi * h)):
            return h


@njit(cache=True)
def ibm_advance(
    traits,
    running_sum,
    t_nu,
    t_end_nu,
    rng,
    bfun,
    thfun,
    sfun,
    b_hi,
    theta_hi,
    sigma,
    half_width,
    mut_family,
    torus,
    wrap_lo,
    wrap_span,
    events,
    since_refresh,
    budget,
    refresh_every,
):
    """Advance the population to ``t_end_nu`` by uniformized thinning.

    The proposal clock is Poisson with the constant envelope rate
    K*(b_hi+theta_hi), so segments may be stitched with fresh exponentials.
    Returns (t_nu, running_sum, events, since_refresh, budget_hit).
    """
    K = traits.size
    envelope = K * (b_hi + theta_hi)
    p_resample = b_hi / (b_hi + theta_hi)
    budget_hit = False
    while True:
        dt = rng.exponential(1.0 / envelope)
        if t_nu + dt >= t_end_nu:
            t_nu = t_end_nu
            break
        if events >= budget:
            budget_hit = True
            break
        t_nu += dt
        events += 1
        since_refresh += 1
        if rng.random() < p_resample:
            i = rng.integers(0, K)
            j = rng.integers(0, K)
            if rng.random() * b_hi < bfun(traits[i], traits[j]):
                running_sum += traits[j] - traits[i]
                traits[i] = traits[j]
        else:
            i = rng.integers(0, K)
            if rng.random() * theta_hi < thfun(traits[i]):
                h = _draw_unit_step(rng, mut_family) * half_width * sfun(traits[i])
                new_x = traits[i] + sigma * h
                if torus:
                    new_x = wrap_lo + ((new_x - wrap_lo) % wrap_span)
                running_sum += new_x - traits[i]
                traits[i] = new_x
        if since_refresh >= refresh_every:
            running_sum = 0.0
            for k in range(K):
                running_sum += traits[k]
            since_refresh = 0
    return t_nu, running_sum, events, since_refresh, budget_hit


@njit(cache=True)
def moran_advance(atoms, t_fv, t_end_fv, rng, lam, mut_rate_per_particle,
                  step_scale, mut_family):
    """Frozen-z Moran dynamics run directly in Fleming-Viot time.

    Resampling at rate ``lam`` per ordered pair, mutation at
    ``mut_rate_per_particle`` per particle with steps
    ``step_scale * unit_step`` (step_scale = support halfwidth / sqrt(N)).
    Atoms are stored unshifted; the caller recentres when observing.
    Returns the new time.
    """
    N = atoms.size
    rate_res = lam * N * N
    rate_mut = mut_rate_per_particle * N
    total = rate_res + rate_mut
    p_res = rate_res / total
    while True:
        dt = rng.exponential(1.0 / total)
        if t_fv + dt >= t_end_fv:
            return t_end_fv
        t_fv += dt
        if rng.random() < p_res:
            i = rng.integers(0, N)
            j = rng.integers(0, N)
            atoms[i] = atoms[j]
        else:
            i = rng.integers(0, N)
            atoms[i] += step_scale * _draw_unit_step(rng, mut_family)


@njit(cache=True)
def moran_power_sums(atoms, max_order):
    """Power sums of the centred atoms, orders 1..max_order."""
    N = atoms.size
    mean = 0.0
    for k in range(N):
        mean += atoms[k]
    mean /= N
    out = np.zeros(max_order)
    for k in range(N):
        u = atoms[k] - mean
        p = 1.0
        for q in range(max_order):
            p *= u
            out[q] += p
    return out / N


@njit(cache=True)
def moran_batch_snapshots(template, horizons, rng, lam,
                          mut_rate_per_particle, step_scale, mut_family,
                          max_order):
    """Independent frozen-z Moran replicates, each run to its own horizon.

    Returns an array (replicates, max_order) of centred power sums at the
    per-replicate horizon. Used as the measure-side oracle of the duality
    check, where each replicate's horizon is the (stopped) dual clock.
    """
    reps = horizons.size
    out = np.empty((reps, max_order))
    atoms = np.empty_like(template)
    for r in range(reps):
        atoms[:] = template
        moran_advance(atoms, 0.0, horizons[r], rng, lam,
                      mut_rate_per_particle, step_scale, mut_family)
        out[r, :] = moran_power_sums(atoms, max_order)
    return out


@njit(cache=True)
def _moran_apply_uniform_events(atoms, n_events, rng, p_res, step_scale):
    """Apply ``n_events`` Moran events (uniform mutation shape only).

    Uniformization in count space: with a constant total event rate the
    state after time s is obtained by applying Poisson(rate*s) events, each
    independently a resampling with probability ``p_res``. RNG draws are
    consumed in blocks to amortize per-call overhead.
    """
    N = atoms.size
    block = 8192
    done = 0
    while done < n_events:
        m = min(block, n_events - done)
        kinds = rng.random(m)
        ii = rng.integers(0, N, m)
        jj = rng.integers(0, N, m)
        steps = rng.uniform(-step_scale, step_scale, m)
        for k in range(m):
            i = ii[k]
            if kinds[k] < p_res:
                atoms[i] = atoms[jj[k]]
            else:
                atoms[i] += steps[k]
        done += m
    return atoms


@njit(cache=True)
def moran_batch_counts(template, counts, rng, p_res, step_scale, max_order):
    """Independent Moran replicates driven by per-replicate event counts.

    Each replicate restarts from ``template``, applies ``counts[r]`` events
    (uniform mutation shape) and reports the centred power sums of orders
    1..max_order. The caller draws the Poisson counts for the stopped
    horizons; see :func:`_moran_apply_uniform_events` for the event law.
    """
    reps = counts.size
    out = np.empty((reps, max_order))
    atoms = np.empty_like(template)
    for r in range(reps):
        atoms[:] = template
        _moran_apply_uniform_events(atoms, counts[r], rng, p_res, step_scale)
        out[r, :] = moran_power_sums(atoms, max_order)
    return out


@njit(cache=True)
def ibm_batch_m2_increment(
    traits0,
    delta_nu,
    reps,
    rng,
    bfun,
    thfun,
    sfun,
    b_hi,
    theta_hi,
    sigma,
    half_width,
    mut_family,
):
    """Replicated short IBM bursts from a frozen initial state.

    Returns an array of the centred-second-moment values (in fast-component
    units) after ``delta_nu`` of nu-time, one entry per replicate. Used by
    the drift / quadratic-variation checks.
    """
    K = traits0.size
    out = np.empty(reps)
    traits = np.empty_like(traits0)
    scale = 1.0 / (sigma * sigma * K)
    for r in range(reps):
        traits[:] = traits0
        ibm_advance(
            traits, 0.0, 0.0, delta_nu, rng, bfun, thfun, sfun,
            b_hi, theta_hi, sigma, half_width, mut_family,
            False, 0.0, 1.0, 0, 0, 1 << 62, 1 << 62,
        )
        mean = 0.0
        for k in range(K):
            mean += traits[k]
        mean /= K
        var = 0.0
        for k in range(K):
            d = traits[k] - mean
            var += d * d
        out[r] = var / K * scale
    return out
