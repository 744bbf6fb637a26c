"""Data emission: trajectory CSVs, aggregate JSON summaries, figures.

CSV columns are fixed (see :data:`CSV_HEADER`); floats are written with
``repr`` so rerunning with the same seed reproduces files bitwise. Figures
are rendered with the Agg backend next to the delimited output.
"""

from __future__ import annotations

import csv
import json
import math
import os

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

CSV_HEADER = ("t_slow,z,M1,M2,M3,M4,M5,M6,M3_signed,diam,"
              "tau_hat,tau_check,ladder_level,events_so_far")

_COLUMNS = CSV_HEADER.split(",")


def emit_trajectory(traj, path):
    """Write one replicate's time series to ``path`` (schema above)."""
    n = traj.t_slow.size
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        for k in range(n):
            row = [
                repr(float(traj.t_slow[k])),
                repr(float(traj.z[k])),
                *(repr(float(traj.moments[k, q])) for q in range(6)),
                repr(float(traj.m3_signed[k])),
                repr(float(traj.diam[k])),
                str(int(traj.tau_hat[k])),
                str(int(traj.tau_check[k])),
                str(int(traj.ladder_level[k])),
                str(int(traj.events_so_far[k])),
            ]
            fh.write(",".join(row) + "\n")
    return path


def read_trajectory(path):
    """Parse a trajectory CSV back into a dict of numpy columns."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != _COLUMNS:
            raise ValueError(f"{path}: unexpected CSV schema {header!r}")
        rows = [[float(v) for v in row] for row in reader if row]
    data = np.asarray(rows, dtype=float)
    if data.size == 0:
        raise ValueError(f"{path}: empty trajectory")
    out = {name: data[:, idx] for idx, name in enumerate(_COLUMNS)}
    for name in ("tau_hat", "tau_check", "ladder_level", "events_so_far"):
        out[name] = out[name].astype(np.int64)
    return out


def aggregate(paths, cead_t=None, cead_z=None, domain=None):
    """Combine replicate CSVs into a summary dict (the run summary).

    When a reference path (``cead_t``, ``cead_z``) is given, per-replicate
    sup errors of z against it are included; ``domain`` (if any) supplies
    the minimal-arc difference on a torus.
    """
    if not paths:
        raise ValueError("need at least one replicate file")
    reps = [read_trajectory(p) for p in paths]
    n = len(reps)
    final_z = np.array([r["z"][-1] for r in reps])
    sup_m2 = np.array([float(np.max(r["M2"])) for r in reps])
    sup_diam = np.array([float(np.max(r["diam"])) for r in reps])
    events = np.array([int(r["events_so_far"][-1]) for r in reps])
    tau_hat_rate = float(np.mean([r["tau_hat"][-1] > 0 for r in reps]))
    tau_check_rate = float(np.mean([r["tau_check"][-1] > 0 for r in reps]))

    def _mean_se(v):
        mean = float(np.mean(v))
        se = float(np.std(v, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return mean, se

    mean_z, se_z = _mean_se(final_z)
    summary = {
        "replicates": n,
        "files": [os.path.basename(str(p)) for p in paths],
        "final_z_mean": mean_z,
        "final_z_se": se_z,
        "final_z": final_z.tolist(),
        "sup_M2": sup_m2.tolist(),
        "sup_diam": sup_diam.tolist(),
        "tau_hat_rate": tau_hat_rate,
        "tau_check_rate": tau_check_rate,
        "total_events": int(events.sum()),
    }
    if cead_t is not None:
        sup_err = []
        for r in reps:
            ref = np.interp(r["t_slow"], cead_t, cead_z)
            diff = (domain.difference(r["z"], ref) if domain is not None
                    else r["z"] - ref)
            sup_err.append(float(np.max(np.abs(diff))))
        sup_err = np.array(sup_err)
        mean_e, se_e = _mean_se(sup_err)
        summary["cead_sup_error"] = sup_err.tolist()
        summary["cead_sup_error_mean"] = mean_e
        summary["cead_sup_error_se"] = se_e
    return summary


def write_json(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# Figures (rendered alongside the delimited output).
# ---------------------------------------------------------------------------


def plot_slow_tracking(paths, out_png, cead_t=None, cead_z=None):
    """Mean-trait trajectories of all replicates, optional reference curve."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for p in paths:
        r = read_trajectory(p)
        ax.plot(r["t_slow"], r["z"], lw=0.8, alpha=0.6, color="C0")
    if cead_t is not None:
        ax.plot(cead_t, cead_z, lw=2.0, color="C3", label="limit ODE")
        ax.legend(loc="best")
    ax.set_xlabel("slow time")
    ax.set_ylabel("mean trait z")
    ax.set_title("slow component vs limit ODE")
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return out_png


def plot_m2_series(times, m2, out_png, reference=None, title="M2 series"):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(times, m2, lw=0.8, color="C0", label="M2")
    if reference is not None:
        ax.axhline(reference, color="C3", lw=1.5, ls="--",
                   label=f"reference {reference:.4g}")
        ax.legend(loc="best")
    ax.set_xlabel("time")
    ax.set_ylabel("M2")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return out_png


def plot_residual_scaling(reports, out_png):
    """Log-log residual-vs-K figure for one or more regression reports."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for rep in reports:
        ax.loglog(rep.K_values, rep.residuals, "o-",
                  label=f"{rep.kind} (slope {rep.slope:.2f})")
    ax.set_xlabel("K")
    ax.set_ylabel("residual")
    ax.set_title("generator decomposition residuals")
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(out_png, dpi=150)
    plt.close(fig)
    return out_png


def residual_table_csv(reports, path):
    """CSV of residual-vs-K tables for the regression reports."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("kind,K,residual\n")
        for rep in reports:
            for K, r in zip(rep.K_values, rep.residuals):
                fh.write(f"{rep.kind},{int(K)},{repr(float(r))}\n")
    return path
