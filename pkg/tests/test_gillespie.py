import math
from collections import Counter

import numpy as np
import pytest

from adlab import gillespie, kernels
from adlab.gillespie import SimConfig, run, run_direct, step, total_proposal_rate
from adlab.model import Population, ScalingParams


@pytest.fixture()
def params_small():
    return ScalingParams(K=12, sigma=0.01, T_slow=0.002)


def test_sim_config_default_grid():
    cfg = SimConfig(params=ScalingParams(K=4, sigma=0.1, T_slow=1.0))
    assert cfg.obs_times[0] == 0.0
    assert cfg.obs_times[-1] == 1.0
    assert cfg.obs_times.size == 513


def test_sim_config_rejects_bad_grids():
    p = ScalingParams(K=4, sigma=0.1, T_slow=1.0)
    with pytest.raises(ValueError):
        SimConfig(params=p, obs_times=np.array([0.1, 0.5]))
    with pytest.raises(ValueError):
        SimConfig(params=p, obs_times=np.array([0.0, 0.5, 0.4]))
    with pytest.raises(ValueError):
        SimConfig(params=p, obs_times=np.array([0.0, 2.0]))


def test_total_proposal_rate(model_a):
    assert total_proposal_rate(model_a, 10) == pytest.approx(
        10 * (model_a.b_hi + model_a.theta_hi))


def test_run_is_deterministic(model_a, params_small):
    cfg = SimConfig(params=params_small,
                    obs_times=np.linspace(0.0, params_small.T_slow, 17))
    t1 = run(Population.monomorphic(0.0, 12), cfg, model_a, kernels.make_rng(5, 0))
    t2 = run(Population.monomorphic(0.0, 12), cfg, model_a, kernels.make_rng(5, 0))
    assert np.array_equal(t1.z, t2.z)
    assert np.array_equal(t1.moments, t2.moments)
    assert np.array_equal(t1.events_so_far, t2.events_so_far)


def test_run_outputs_are_consistent(model_a, params_small):
    cfg = SimConfig(params=params_small,
                    obs_times=np.linspace(0.0, params_small.T_slow, 17))
    traj = run(Population.monomorphic(0.0, 12), cfg, model_a, kernels.make_rng(6, 0))
    assert traj.t_slow.size == 17
    assert not traj.budget_exceeded
    assert np.all(np.diff(traj.events_so_far) >= 0)
    assert np.all(np.diff(traj.tau_hat) >= 0)      # latched flags are monotone
    assert np.all(np.diff(traj.tau_check) >= 0)
    assert np.all(traj.moments >= 0.0)
    assert traj.moments[0, 1] == 0.0               # monomorphic start: M2 = 0
    assert traj.ladder_level[0] == 1


def test_run_budget_truncates(model_a, params_small):
    cfg = SimConfig(params=params_small,
                    obs_times=np.linspace(0.0, params_small.T_slow, 17),
                    budget=25)
    traj = run(Population.monomorphic(0.0, 12), cfg, model_a, kernels.make_rng(7, 0))
    assert traj.budget_exceeded
    assert traj.t_slow.size < 17
    assert traj.events_so_far[-1] == 25


def test_observer_callback_sees_every_grid_time(model_a, params_small):
    cfg = SimConfig(params=params_small,
                    obs_times=np.linspace(0.0, params_small.T_slow, 9))
    seen = []
    run(Population.monomorphic(0.0, 12), cfg, model_a, kernels.make_rng(8, 0),
        observers=[lambda t, pop, fs: seen.append(t)])
    assert seen == list(cfg.obs_times)


# ---------------------------------------------------------------------------
# The two oracle samplers agree with the true event rates.
# ---------------------------------------------------------------------------

_TRAITS = np.array([0.0, 0.3, -0.2, 0.5])


def _true_first_event_probs(model, traits, K):
    rates = {}
    for i in range(K):
        for j in range(K):
            rates[("resampling", i, j)] = model.b(traits[i], traits[j]) / K
        rates[("mutation", i)] = model.theta(traits[i])
    total = sum(rates.values())
    return {k: v / total for k, v in rates.items()}, total


def _event_key(ev):
    if ev.kind == "resampling":
        return ("resampling", ev.i, ev.j)
    return ("mutation", ev.i)


def test_step_first_event_matches_true_rates(model_a, rng):
    params = ScalingParams(K=4, sigma=0.01)
    probs, _ = _true_first_event_probs(model_a, _TRAITS, 4)
    n = 4000
    counts = Counter()
    for _ in range(n):
        pop = Population(_TRAITS)
        ev = step(pop, model_a, params, rng)
        while ev.kind == "rejected":
            ev = step(pop, model_a, params, rng)
        counts[_event_key(ev)] += 1
    for key, p in probs.items():
        se = math.sqrt(p * (1.0 - p) / n)
        assert abs(counts[key] / n - p) <= 4.0 * se + 1e-9, key


def test_run_direct_first_event_matches_true_rates(model_a, rng):
    params = ScalingParams(K=4, sigma=0.01)
    probs, total = _true_first_event_probs(model_a, _TRAITS, 4)
    n = 4000
    counts = Counter()
    times = []
    for _ in range(n):
        pop = Population(_TRAITS)
        (ev,) = run_direct(pop, model_a, params, rng, 1)
        counts[_event_key(ev)] += 1
        times.append(ev.time)
    for key, p in probs.items():
        se = math.sqrt(p * (1.0 - p) / n)
        assert abs(counts[key] / n - p) <= 4.0 * se + 1e-9, key
    # waiting time of the first event is Exp(total)
    mean_t = float(np.mean(times))
    assert abs(mean_t - 1.0 / total) <= 4.0 / (total * math.sqrt(n))


def test_step_applies_the_event(model_a, rng):
    params = ScalingParams(K=4, sigma=0.01)
    pop = Population(_TRAITS)
    before = pop.traits.copy()
    ev = step(pop, model_a, params, rng)
    if ev.kind == "resampling":
        assert pop.traits[ev.i] == before[ev.j]
    elif ev.kind == "mutation":
        assert pop.traits[ev.i] == pytest.approx(
            before[ev.i] + params.sigma * ev.step)
    else:
        assert np.array_equal(pop.traits, before)
    assert pop.nu_time > 0.0
