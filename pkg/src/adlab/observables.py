"""Slow/fast observables: mean trait, centred dilated state, stopping
diagnostics and the threshold-ladder bookkeeping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


def slow_component(pop):
    """Mean trait, from the population's exact running sum."""
    return pop.mean


@dataclass(frozen=True)
class FastState:
    """Centred, dilated trait distribution: atoms u_i = (x_i - z)/(sigma sqrt(K)).

    ``moments[ell]`` holds the absolute moment <|u|^ell> for ell in 1..6;
    ``m3_signed`` is the signed third moment; ``diam`` the support diameter.
    """

    atoms: np.ndarray
    moments: tuple  # (M1, ..., M6), absolute
    m3_signed: float
    diam: float

    @property
    def M2(self):
        return self.moments[1]

    def moment(self, ell):
        return self.moments[ell - 1]


def fast_state(traits, z, sigma, K):
    traits = np.asarray(traits, dtype=np.float64)
    atoms = (traits - z) / (sigma * math.sqrt(K))
    a = np.abs(atoms)
    moments = tuple(float(np.mean(a**ell)) for ell in range(1, 7))
    m3_signed = float(np.mean(atoms**3))
    diam = float(atoms.max() - atoms.min())
    return FastState(atoms=atoms, moments=moments, m3_signed=m3_signed, diam=diam)


def fast_state_of_pop(pop, sigma):
    return fast_state(pop.traits, pop.mean, sigma, pop.K)


@dataclass
class StopFlags:
    """First-hit flags for the moment and diameter stopping times."""

    tau_hat_hit: bool = False
    tau_check_hit: bool = False
    tau_hat_time: float = math.nan
    tau_check_time: float = math.nan

    def update(self, fs: FastState, params, t_slow):
        if not self.tau_hat_hit and fs.M2 >= params.m2_threshold:
            self.tau_hat_hit = True
            self.tau_hat_time = t_slow
        if not self.tau_check_hit and fs.diam > params.diam_threshold:
            self.tau_check_hit = True
            self.tau_check_time = t_slow
        return self


def stop_flags(fs: FastState, params, t_slow=0.0):
    return StopFlags().update(fs, params, t_slow)


def ladder_rung(ell, K, eps):
    """u_ell = 3^ell K^(eps/2), with u_0 = 0."""
    if ell == 0:
        return 0.0
    return 3.0**ell * K ** (eps / 2.0)


def initial_ladder_level(m2, K, eps):
    """Starting level: 1 on [0, 2u_1+1], else the ell_0 with
    M2 in (2u_{ell_0 - 1}+1, 2u_{ell_0}+1]."""
    if m2 <= 2.0 * ladder_rung(1, K, eps) + 1.0:
        return 1
    ell = 2
    while m2 > 2.0 * ladder_rung(ell, K, eps) + 1.0:
        ell += 1
    return ell


def _reanchor_level(m2, K, eps):
    """Smallest ell with M2 <= 2 u_ell + 1."""
    ell = 0
    while m2 > 2.0 * ladder_rung(ell, K, eps) + 1.0:
        ell += 1
    return ell


@dataclass
class LadderDiag:
    """Threshold-ladder diagnostic: current level and transition log.

    The level-ell residence interval is [u_{ell-1}, u_{ell+1}); on exit,
    the new level is the smallest ell with M2 <= 2 u_ell + 1 and the
    transition (level, slow time, direction) is logged.
    """

    K: int
    eps: float
    level: int = 1
    transitions: list = field(default_factory=list)

    @classmethod
    def start(cls, m2_initial, K, eps):
        return cls(K=K, eps=eps, level=initial_ladder_level(m2_initial, K, eps))

    def interval(self):
        lo = ladder_rung(self.level - 1, self.K, self.eps)
        hi = ladder_rung(self.level + 1, self.K, self.eps)
        return lo, hi

    def update(self, fs: FastState, t_slow):
        lo, hi = self.interval()
        m2 = fs.M2
        if lo <= m2 < hi:
            return self
        new_level = _reanchor_level(m2, self.K, self.eps)
        direction = "up" if new_level > self.level else "down"
        if direction == "up":
            new_level = self.level + 1  # upward exits move one rung
        self.transitions.append((new_level, t_slow, direction))
        self.level = new_level
        return self


def ladder_update(diag: LadderDiag, fs: FastState, t_slow):
    return diag.update(fs, t_slow)
