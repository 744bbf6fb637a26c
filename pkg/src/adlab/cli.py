"""Command-line entry point.

Subcommands: simulate, cead-compare, fast-equilibrium, generator-check,
dual-check, sweep. Each takes ``--config`` (flat key=value file, see
:mod:`adlab.config`), optional ``--seed`` and ``--out``; the default output
directory comes from the ``ADLAB_OUT`` environment variable (falling back to
the working directory). Exit codes: 0 success, 2 configuration/validation
failure, 3 event budget exceeded (outputs are still written, truncated).
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from . import cead, fvfast, gencheck, gillespie, kernels, polydual, reports
from .config import ConfigError, build_model, build_params, load_config
from .exprs import ExprError, ValidationFailed
from .model import Population

ENV_OUT = "ADLAB_OUT"


def _out_dir(args):
    out = args.out or os.environ.get(ENV_OUT) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _run_replicates(cfg, model, params, seed, out, tag):
    """Run all replicates, write CSVs, return (paths, truncated flag)."""
    sim = gillespie.SimConfig(
        params=params,
        obs_times=np.linspace(0.0, params.T_slow, cfg.n_obs),
        budget=cfg.budget,
    )
    paths = []
    truncated = False
    for rep in range(cfg.replicates):
        rng = kernels.make_rng(seed, rep)
        pop = Population.monomorphic(cfg.x0, params.K)
        traj = gillespie.run(pop, sim, model, rng)
        truncated = truncated or traj.budget_exceeded
        path = os.path.join(out, f"{tag}_K{params.K}_rep{rep:03d}.csv")
        reports.emit_trajectory(traj, path)
        paths.append(path)
    return paths, truncated


def cmd_simulate(args):
    cfg = load_config(args.config)
    model = build_model(cfg)
    params = build_params(cfg)
    out = _out_dir(args)
    seed = cfg.seed if args.seed is None else args.seed
    t0 = time.time()
    paths, truncated = _run_replicates(cfg, model, params, seed, out, "sim")
    summary = reports.aggregate(paths)
    summary.update(config=os.path.basename(args.config), seed=seed,
                   K=params.K, sigma=params.sigma, regime=params.regime,
                   wall_clock_s=time.time() - t0,
                   budget_exceeded=truncated)
    reports.write_json(summary, os.path.join(out, "sim_summary.json"))
    reports.plot_slow_tracking(paths, os.path.join(out, "sim_slow.png"))
    return 3 if truncated else 0


def cmd_cead_compare(args):
    cfg = load_config(args.config)
    model = build_model(cfg)
    params = build_params(cfg)
    out = _out_dir(args)
    seed = cfg.seed if args.seed is None else args.seed
    t0 = time.time()
    path_ode = cead.integrate(model, cfg.x0, params.T_slow)
    paths, truncated = _run_replicates(cfg, model, params, seed, out, "cead")
    summary = reports.aggregate(paths, cead_t=path_ode.t, cead_z=path_ode.z,
                                domain=model.domain)
    summary.update(config=os.path.basename(args.config), seed=seed,
                   K=params.K, sigma=params.sigma, regime=params.regime,
                   wall_clock_s=time.time() - t0,
                   budget_exceeded=truncated)
    reports.write_json(summary, os.path.join(out, "cead_summary.json"))
    reports.plot_slow_tracking(paths, os.path.join(out, "cead_slow.png"),
                               cead_t=path_ode.t, cead_z=path_ode.z)
    return 3 if truncated else 0


def cmd_fast_equilibrium(args):
    cfg = load_config(args.config)
    model = build_model(cfg)
    out = _out_dir(args)
    seed = cfg.seed if args.seed is None else args.seed
    t0 = time.time()
    fc = fvfast.FrozenConfig(
        z=cfg.x0, n_particles=cfg.n_particles, horizon=cfg.fv_horizon,
        burn_in_frac=cfg.burn_in_frac,
    )
    traj = fvfast.run_frozen(model, fc, kernels.make_rng(seed, 0))
    csv_path = os.path.join(out, "fast_moments.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("t_fv,M1,M2,M3,M4,M5,M6\n")
        for k in range(traj.times.size):
            vals = ",".join(repr(float(v)) for v in traj.power_sums[k])
            fh.write(f"{repr(float(traj.times[k]))},{vals}\n")
    summary = traj.summary()
    summary.update(config=os.path.basename(args.config), seed=seed,
                   wall_clock_s=time.time() - t0)
    reports.write_json(summary, os.path.join(out, "fast_summary.json"))
    reports.plot_m2_series(
        traj.times, traj.m2_series, os.path.join(out, "fast_m2.png"),
        reference=traj.equilibrium_m2_prediction(),
        title="frozen-z fast component: M2",
    )
    return 0


def cmd_generator_check(args):
    cfg = load_config(args.config)
    model = build_model(cfg)
    out = _out_dir(args)
    t0 = time.time()
    slow = gencheck.slow_residual_scaling(model)
    fast = gencheck.fast_residual_scaling(model)
    reps = [slow, fast]
    reports.residual_table_csv(reps, os.path.join(out, "residuals.csv"))
    reports.plot_residual_scaling(reps, os.path.join(out, "residuals.png"))
    summary = {
        "slow": slow.as_dict(),
        "fast": fast.as_dict(),
        "config": os.path.basename(args.config),
        "wall_clock_s": time.time() - t0,
    }
    reports.write_json(summary, os.path.join(out, "generator_summary.json"))
    return 0


def cmd_dual_check(args):
    cfg = load_config(args.config)
    model = build_model(cfg)
    out = _out_dir(args)
    seed = cfg.seed if args.seed is None else args.seed
    t0 = time.time()
    lam = (cfg.dual_lambda if cfg.dual_lambda is not None
           else model.lambda_rate(cfg.x0))
    xi0 = polydual.Poly.monomial(1, (2,))
    template = np.tile([-1.0, 1.0], 250)
    report = polydual.duality_check(
        xi0, template, lam, cfg.dual_t, cfg.dual_reps,
        kernels.make_rng(seed, 1), kernels.make_rng(seed, 2),
    )
    report.update(config=os.path.basename(args.config), seed=seed,
                  wall_clock_s=time.time() - t0)
    reports.write_json(report, os.path.join(out, "dual_summary.json"))
    return 0


def cmd_sweep(args):
    cfg = load_config(args.config)
    model = build_model(cfg)
    out = _out_dir(args)
    seed = cfg.seed if args.seed is None else args.seed
    t0 = time.time()
    per_K = {}
    truncated = False
    for K in cfg.K_values():
        params = build_params(cfg, K=K)
        paths, trunc = _run_replicates(cfg, model, params, seed + K, out,
                                       "sweep")
        truncated = truncated or trunc
        summary = reports.aggregate(paths)
        summary.update(K=K, sigma=params.sigma, regime=params.regime,
                       budget_exceeded=trunc)
        per_K[str(K)] = summary
    top = {
        "config": os.path.basename(args.config),
        "seed": seed,
        "runs": per_K,
        "wall_clock_s": time.time() - t0,
        "budget_exceeded": truncated,
    }
    reports.write_json(top, os.path.join(out, "sweep_summary.json"))
    return 3 if truncated else 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "cead-compare": cmd_cead_compare,
    "fast-equilibrium": cmd_fast_equilibrium,
    "generator-check": cmd_generator_check,
    "dual-check": cmd_dual_check,
    "sweep": cmd_sweep,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="adlab",
        description="trait-substitution simulator and generator laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="key=value config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None,
                       help=f"output directory (default ${ENV_OUT} or .)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, ExprError, ValidationFailed) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
