"""The limit ODE for the mean trait and comparison against simulated runs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CeadPath:
    t: np.ndarray
    z: np.ndarray
    dt: float
    method: str = "rk4"


def cead_rhs(model, z):
    """dz/dt = d1Fit(z, z) * beta(z) * m2(z)."""
    return model.fitness_gradient_diag(z) * model.beta(z) * model.m2(z)


def integrate(model, x0, T_slow, dt=None):
    """Classical fixed-step RK4 for the mean-trait ODE."""
    if T_slow == 0:
        return CeadPath(np.array([0.0]), np.array([float(x0)]), 0.0)
    if dt is None:
        dt = T_slow / 4096.0
    if not (dt > 0):
        raise ValueError("dt must be positive")
    n = max(1, int(math.ceil(T_slow / dt - 1e-12)))
    dt = T_slow / n
    t = np.linspace(0.0, T_slow, n + 1)
    z = np.empty(n + 1)
    z[0] = float(x0)
    f = lambda zz: cead_rhs(model, zz)
    for k in range(n):
        zk = z[k]
        k1 = f(zk)
        k2 = f(zk + 0.5 * dt * k1)
        k3 = f(zk + 0.5 * dt * k2)
        k4 = f(zk + dt * k3)
        z[k + 1] = zk + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(z[k + 1]):
            raise FloatingPointError(
                f"ODE state became non-finite at t={t[k + 1]:g} (z={z[k + 1]!r})"
            )
        if model.domain.kind == "torus":
            z[k + 1] = model.domain.wrap(z[k + 1])
    return CeadPath(t, z, dt)


def compare(path, traj_t, traj_z, domain=None):
    """Sup distance and per-time error curve between ODE path and a run.

    The ODE path is linearly interpolated onto the run's grid; on a torus
    the pointwise difference is the minimal arc.
    """
    traj_t = np.asarray(traj_t, dtype=np.float64)
    traj_z = np.asarray(traj_z, dtype=np.float64)
    if traj_t[-1] > path.t[-1] + 1e-12:
        raise ValueError("trajectory horizon exceeds the ODE path horizon")
    z_ref = np.interp(traj_t, path.t, path.z)
    if domain is not None and domain.kind == "torus":
        err = np.abs(domain.difference(traj_z, z_ref))
    else:
        err = np.abs(traj_z - z_ref)
    return float(err.max()), err
