"""Polynomial dual of the centred Fleming-Viot process.

The fast-limit process admits a function-valued dual: a polynomial test
function in ``n`` variables that evolves by a deterministic semigroup between
jumps of a birth-death chain on ``n`` (up-jumps insert a second-derivative
factor, down-jumps identify two variables), with an exponential weight
``exp(lam * integral of n(u)^2 du)``. Everything here is exact: polynomials
are sparse coefficient dicts, the inter-jump semigroup is a Gaussian
substitution evaluated in closed form via the Wick/Isserlis recursion, and
pairings against an empirical measure are finite moment contractions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

#: Hard budgets for the dual simulation; exceeding any of them raises
#: :class:`DualBudgetError` rather than silently truncating.
MAX_DEGREE = 8
MAX_TERMS = 10_000
MAX_VARS = 6


class DualBudgetError(RuntimeError):
    """The dual simulation exceeded a degree/term/variable budget."""


# ---------------------------------------------------------------------------
# Sparse multivariate polynomials.
# ---------------------------------------------------------------------------


class Poly:
    """Polynomial in ``n_vars`` variables as {exponent tuple: coefficient}.

    Immutable by convention: all operations return new instances. Exponent
    tuples always have length ``n_vars``; exact-zero coefficients are pruned.
    """

    __slots__ = ("n_vars", "terms")

    def __init__(self, n_vars, terms=None):
        self.n_vars = int(n_vars)
        clean = {}
        for expo, coeff in (terms or {}).items():
            if len(expo) != self.n_vars:
                raise ValueError("exponent tuple of wrong length")
            if coeff != 0.0:
                clean[tuple(int(e) for e in expo)] = float(coeff)
        self.terms = clean

    # -- constructors ------------------------------------------------------

    @staticmethod
    def constant(n_vars, value):
        if value == 0.0:
            return Poly(n_vars)
        return Poly(n_vars, {(0,) * n_vars: value})

    @staticmethod
    def monomial(n_vars, expo, coeff=1.0):
        return Poly(n_vars, {tuple(expo): coeff})

    @staticmethod
    def variable(n_vars, i):
        expo = [0] * n_vars
        expo[i] = 1
        return Poly.monomial(n_vars, expo)

    # -- structure ---------------------------------------------------------

    def degree(self):
        if not self.terms:
            return 0
        return max(sum(e) for e in self.terms)

    def n_terms(self):
        return len(self.terms)

    def is_zero(self):
        return not self.terms

    def __eq__(self, other):
        return (isinstance(other, Poly) and self.n_vars == other.n_vars
                and self.terms == other.terms)

    def __hash__(self):
        return hash((self.n_vars, frozenset(self.terms.items())))

    def __repr__(self):
        if not self.terms:
            return f"Poly({self.n_vars}, 0)"
        bits = []
        for expo in sorted(self.terms):
            mono = "*".join(f"x{i + 1}^{e}" for i, e in enumerate(expo) if e)
            bits.append(f"{self.terms[expo]:+g}{'*' + mono if mono else ''}")
        return f"Poly({self.n_vars}, {' '.join(bits)})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        if self.n_vars != other.n_vars:
            raise ValueError("variable-count mismatch")
        terms = dict(self.terms)
        for expo, coeff in other.terms.items():
            terms[expo] = terms.get(expo, 0.0) + coeff
        return Poly(self.n_vars, terms)

    def __sub__(self, other):
        return self + other.scale(-1.0)

    def scale(self, a):
        return Poly(self.n_vars,
                    {e: a * c for e, c in self.terms.items()})

    def __mul__(self, other):
        if self.n_vars != other.n_vars:
            raise ValueError("variable-count mismatch")
        terms = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                terms[e] = terms.get(e, 0.0) + c1 * c2
        return Poly(self.n_vars, terms)

    def power(self, k):
        result = Poly.constant(self.n_vars, 1.0)
        for _ in range(int(k)):
            result = result * self
        return result

    def diff(self, i):
        terms = {}
        for expo, coeff in self.terms.items():
            if expo[i] == 0:
                continue
            e = list(expo)
            new_coeff = coeff * e[i]
            e[i] -= 1
            e = tuple(e)
            terms[e] = terms.get(e, 0.0) + new_coeff
        return Poly(self.n_vars, terms)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        total = 0.0
        for expo, coeff in self.terms.items():
            v = coeff
            for i, e in enumerate(expo):
                if e:
                    v *= x[i] ** e
            total += v
        return total

    def pad(self, n_vars):
        """View in a larger variable set; the new variables are ignored."""
        if n_vars < self.n_vars:
            raise ValueError("cannot shrink the variable set by padding")
        extra = (0,) * (n_vars - self.n_vars)
        return Poly(n_vars, {e + extra: c for e, c in self.terms.items()})


# ---------------------------------------------------------------------------
# The three dual operators.
# ---------------------------------------------------------------------------


def apply_phi(f: Poly, i, j):
    """Identify variable j with variable i and drop slot j (n-1 variables).

    Image of the down-jump of the dual chain: the exponent of slot j is
    transferred onto slot i, then slot j is removed and the remaining
    variables keep their relative order.
    """
    if i == j:
        raise ValueError("identification requires distinct variables")
    n = f.n_vars
    terms = {}
    for expo, coeff in f.terms.items():
        e = list(expo)
        e[i] += e[j]
        del e[j]
        e = tuple(e)
        terms[e] = terms.get(e, 0.0) + coeff
    return Poly(n - 1, terms)


def apply_k(f: Poly, i, j):
    """Second-derivative insertion: (d_i d_j f) * x_{n+1}^2 (n+1 variables).

    Image of the up-jump of the dual chain (i = j is allowed).
    """
    g = f.diff(i).diff(j)
    return Poly(f.n_vars + 1,
                {e + (2,): c for e, c in g.terms.items()})


def b_operator(f: Poly, lam):
    """Inter-jump drift/diffusion operator: (1/2) Lap f - 2 lam (grad f . 1)(x . 1)."""
    n = f.n_vars
    lap = Poly(n)
    grad_dot_one = Poly(n)
    for i in range(n):
        di = f.diff(i)
        lap = lap + di.diff(i)
        grad_dot_one = grad_dot_one + di
    x_dot_one = Poly(n)
    for i in range(n):
        x_dot_one = x_dot_one + Poly.variable(n, i)
    return lap.scale(0.5) + (grad_dot_one * x_dot_one).scale(-2.0 * lam)


# ---------------------------------------------------------------------------
# Moment contraction against an empirical measure.
# ---------------------------------------------------------------------------


def signed_moments(atoms, max_degree):
    """Signed moments <x^q, mu> of the empirical measure, q = 0..max_degree."""
    u = np.asarray(atoms, dtype=float)
    out = np.empty(max_degree + 1)
    out[0] = 1.0
    p = np.ones_like(u)
    for q in range(1, max_degree + 1):
        p = p * u
        out[q] = float(np.mean(p))
    return out


def contract(f: Poly, moments):
    """<f, mu^n> for a product measure power: product of signed moments."""
    total = 0.0
    for expo, coeff in f.terms.items():
        v = coeff
        for e in expo:
            v *= moments[e]
        total += v
    return float(total)


# ---------------------------------------------------------------------------
# Inter-jump semigroup, in closed form.
#
# Between jumps the n dual particles follow dx = -2 lam (x . 1) 1 dt + dW.
# This is linear-Gaussian: x_t = m_{t,x} + G with
#   m_{t,x} = x - c (x . 1) 1,   c = (1 - exp(-2 lam n t)) / n,
#   Cov(G)_ab = t delta_ab + (c1 - t)/n,  c1 = (1 - exp(-4 lam n t))/(4 lam n),
# so the semigroup on polynomials is substitution by m_{t,x} followed by a
# Gaussian expectation evaluated by the Wick/Isserlis recursion.
# ---------------------------------------------------------------------------


def _gaussian_moment(k, diag, off, memo):
    """E[prod G_i^{k_i}] for Cov = off * ones + (diag - off) * identity."""
    key = tuple(k)
    if key in memo:
        return memo[key]
    total_order = sum(k)
    if total_order == 0:
        memo[key] = 1.0
        return 1.0
    if total_order % 2 == 1:
        memo[key] = 0.0
        return 0.0
    i = next(idx for idx, v in enumerate(k) if v > 0)
    k1 = list(k)
    k1[i] -= 1
    total = 0.0
    for j, kj in enumerate(k1):
        if kj == 0:
            continue
        cov = diag if j == i else off
        if cov == 0.0:
            continue
        k2 = list(k1)
        k2[j] -= 1
        total += cov * kj * _gaussian_moment(k2, diag, off, memo)
    memo[key] = total
    return total


def semigroup_coefficients(t, lam, n):
    """(c, diag, off) of the time-t Gaussian substitution for n particles."""
    if t < 0.0:
        raise ValueError("negative time")
    if lam == 0.0:
        c = 0.0
        c1 = t
    else:
        c = -math.expm1(-2.0 * lam * n * t) / n
        c1 = -math.expm1(-4.0 * lam * n * t) / (4.0 * lam * n)
    off = (c1 - t) / n
    return c, t + off, off


def semigroup_apply(f: Poly, t, lam):
    """Exact inter-jump semigroup T_t applied to a polynomial."""
    n = f.n_vars
    if t == 0.0 or f.is_zero():
        return f
    c, diag, off = semigroup_coefficients(t, lam, n)
    # mean-map polynomials y_i = x_i - c * (x . 1), and their small powers
    s = Poly(n)
    for i in range(n):
        s = s + Poly.variable(n, i)
    y = [Poly.variable(n, i) + s.scale(-c) for i in range(n)]
    max_pow = max((max(e) for e in f.terms), default=0)
    y_pows = []
    for i in range(n):
        pows = [Poly.constant(n, 1.0)]
        for _ in range(max_pow):
            pows.append(pows[-1] * y[i])
        y_pows.append(pows)

    memo = {}
    result = Poly(n)
    for expo, coeff in f.terms.items():
        # E[prod (y_i + G_i)^{a_i}] expanded by the binomial theorem
        contrib = Poly(n)
        for k in _sub_multi_indices(expo):
            gm = _gaussian_moment(k, diag, off, memo)
            if gm == 0.0:
                continue
            w = gm
            piece = Poly.constant(n, 1.0)
            for i, (a, ki) in enumerate(zip(expo, k)):
                w *= math.comb(a, ki)
                piece = piece * y_pows[i][a - ki]
            contrib = contrib + piece.scale(w)
        result = result + contrib.scale(coeff)
    return result


def _sub_multi_indices(expo):
    """All k with 0 <= k_i <= expo_i and sum(k) even."""
    out = [()]
    for a in expo:
        out = [k + (v,) for k in out for v in range(a + 1)]
    return [k for k in out if sum(k) % 2 == 0]


# ---------------------------------------------------------------------------
# The dual chain itself.
# ---------------------------------------------------------------------------


@dataclass
class DualPath:
    """Outcome of one dual simulation up to ``horizon`` (or its budget stop)."""

    xi: Poly
    horizon: float
    weight_exponent: float       # lam * integral of n(u)^2 du
    jumps: list = field(default_factory=list)   # (time, kind, i, j)

    @property
    def n_final(self):
        return self.xi.n_vars


def _check_budget(f: Poly):
    if f.degree() > MAX_DEGREE:
        raise DualBudgetError(f"degree {f.degree()} exceeds {MAX_DEGREE}")
    if f.n_terms() > MAX_TERMS:
        raise DualBudgetError(f"{f.n_terms()} terms exceed {MAX_TERMS}")
    if f.n_vars > MAX_VARS:
        raise DualBudgetError(f"{f.n_vars} variables exceed {MAX_VARS}")


def simulate_dual(xi0: Poly, lam, horizon, rng, max_jumps=None):
    """Simulate the function-valued dual over [0, horizon].

    Up-jumps (rate lam * n^2) apply a second-derivative insertion at a
    uniform ordered pair (i, j), moving n -> n + 1; down-jumps (rate
    lam * n * (n - 1)) identify a uniform ordered pair of distinct
    variables, moving n -> n - 1. Between jumps the polynomial flows by the
    exact Gaussian semigroup. Budgets on degree, term count and variable
    count are enforced; ``max_jumps`` (if given) stops the chain early and
    is reported through the jump log length.
    """
    _check_budget(xi0)
    xi = xi0
    t = 0.0
    weight_exponent = 0.0
    jumps = []
    while True:
        n = xi.n_vars
        rate_up = lam * n * n
        rate_down = lam * n * (n - 1)
        total = rate_up + rate_down
        if total == 0.0:
            dt = math.inf
        else:
            dt = rng.exponential(1.0 / total)
        if t + dt >= horizon:
            step = horizon - t
            xi = semigroup_apply(xi, step, lam)
            weight_exponent += lam * n * n * step
            return DualPath(xi=xi, horizon=horizon,
                            weight_exponent=weight_exponent, jumps=jumps)
        xi = semigroup_apply(xi, dt, lam)
        weight_exponent += lam * n * n * dt
        t += dt
        if rng.random() * total < rate_up:
            i = int(rng.integers(0, n))
            j = int(rng.integers(0, n))
            xi = apply_k(xi, i, j)
            jumps.append((t, "up", i, j))
        else:
            i = int(rng.integers(0, n))
            j = int(rng.integers(0, n - 1))
            if j >= i:
                j += 1
            xi = apply_phi(xi, i, j)
            jumps.append((t, "down", i, j))
        _check_budget(xi)
        if max_jumps is not None and len(jumps) >= max_jumps:
            return DualPath(xi=xi, horizon=t,
                            weight_exponent=weight_exponent, jumps=jumps)


def duality_check(xi0: Poly, template_atoms, lam, t, reps, rng_measure,
                  rng_dual, form="stopped"):
    """Monte-Carlo test of the first-jump-stopped duality pairing.

    Two pairings are available, both sharing the first-jump clock tau1 of
    the dual chain and both using an N-particle Moran approximation of the
    fast limit started at the empirical measure mu of ``template_atoms``:

    ``form="stopped"`` compares

      measure side:  <xi0, X_{t ^ tau1}^{M0}>,
      dual side:     exp(lam M0^2 (t ^ tau1)) <xi_{t ^ tau1}, mu^{M0 + 1}>

    with xi the dual stopped at (and including) its first jump. This is the
    comparison exposed by the CLI. Numerically the two sides agree to first
    order in t but differ at second order: with xi0 = x^2, M0 = 1 and atoms
    of second moment M2 the exact sides are

      measure side:  e^{-lam t} m(t) + A(1 - e^{-lam t})
                     + (B/3)(1 - e^{-3 lam t}),
                     m(s) = A + B e^{-2 lam s}, A = 1/(2 lam), B = M2 - A,
      dual side:     e^{-4 lam t} M2 + (1 - e^{-4 lam t})/(4 lam)
                     + M2 (1 - e^{-4 lam t})/2,

    whose second derivatives at t = 0 (for M2 = 1) are 3 lam (2 lam - 1)
    and 4 lam (2 lam - 1) respectively -- 198 vs 264 at lam = 6 -- so the
    gap grows like t^2 and is a property of the pairing, not a sampling
    artefact.

    ``form="remaining"`` compares the pairing that does hold exactly:

      measure side:  <xi0, X_t^{M0}>,
      dual side:     exp(lam M0^2 (t ^ tau1)) <xi_{t ^ tau1},
                     X_{t - (t ^ tau1)}^{M0 + 1}>,

    i.e. the stopped dual is contracted against the measure process run
    for the remaining time, and the measure side is taken at the full
    horizon. Both sides are estimated with independent Moran copies.

    ``template_atoms`` must be centred (zero mean) and its size sets the
    Moran particle number. Returns a dict with both means, the difference
    and its standard error. At t = 0 both sides of either form reduce to
    the same deterministic contraction and the difference is exactly zero.
    """
    from . import kernels

    if form not in ("stopped", "remaining"):
        raise ValueError(f"unknown duality form {form!r}")
    template = np.asarray(template_atoms, dtype=float)
    if abs(float(np.mean(template))) > 1e-12 * (1.0 + float(np.max(np.abs(template)))):
        raise ValueError("template_atoms must be centred")
    m0 = xi0.n_vars
    deg = xi0.degree()
    alpha0 = lam * m0 * m0 + lam * m0 * (m0 - 1)
    if alpha0 <= 0.0:
        raise ValueError("the dual chain must have a positive jump rate")
    tau1 = rng_dual.exponential(1.0 / alpha0, size=reps)
    stopped = np.minimum(t, tau1)

    # Measure side: unit-variance-rate mutation shape (uniform with
    # halfwidth sqrt(3) per particle at rate N gives Brownian increments).
    # Constant total rate (lam + 1) N^2 allows exact Poissonization: draw
    # the event count for each horizon, then apply counted events.
    n = template.size
    total_rate = (lam + 1.0) * n * n
    p_res = lam / (lam + 1.0)
    lhs_horizons = stopped if form == "stopped" else np.full(reps, t)
    counts = rng_measure.poisson(total_rate * lhs_horizons)
    snapshots = kernels.moran_batch_counts(
        template, counts, rng_measure, p_res, math.sqrt(3.0 / n),
        max(deg, 1),
    )
    lhs = np.empty(reps)
    for r in range(reps):
        moments = np.concatenate(([1.0], snapshots[r]))
        lhs[r] = contract(xi0, moments)

    if form == "stopped":
        # Dual side: exact moment contraction against the initial measure.
        mu0_moments = signed_moments(template, deg)
        rhs = np.empty(reps)
        for r in range(reps):
            xi, wexp = dual_rhs_first_jump(xi0, lam, t, tau1[r], rng_dual)
            rhs[r] = math.exp(wexp) * contract(xi, mu0_moments)
    else:
        # Dual side: contraction against an independent Moran copy run for
        # the remaining time t - (t ^ tau1).
        counts_rhs = rng_measure.poisson(total_rate * (t - stopped))
        snapshots_rhs = kernels.moran_batch_counts(
            template, counts_rhs, rng_measure, p_res, math.sqrt(3.0 / n),
            max(deg, 1),
        )
        rhs = np.empty(reps)
        for r in range(reps):
            xi, wexp = dual_rhs_first_jump(xi0, lam, t, tau1[r], rng_dual)
            moments = np.concatenate(([1.0], snapshots_rhs[r]))
            rhs[r] = math.exp(wexp) * contract(xi, moments)

    diff = lhs - rhs
    se = float(np.std(diff, ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
    return {
        "reps": reps,
        "t": t,
        "lambda": lam,
        "form": form,
        "lhs_mean": float(np.mean(lhs)),
        "rhs_mean": float(np.mean(rhs)),
        "diff_mean": float(np.mean(diff)),
        "diff_se": se,
    }


def dual_rhs_first_jump(xi0: Poly, lam, t, tau1, rng):
    """One-replicate dual side of the first-jump-stopped pairing.

    Runs the dual to ``min(t, tau1)`` with ``tau1`` supplied externally (it
    is the first jump time of the chain, drawn by the caller so that the
    measure side can be stopped at the same clock). Returns the pair
    (xi at the stopped time, weight exponent); the jump at ``tau1`` itself
    is included when ``tau1 <= t``.
    """
    n = xi0.n_vars
    s = min(t, tau1)
    xi = semigroup_apply(xi0, s, lam)
    weight_exponent = lam * n * n * s
    if tau1 <= t:
        rate_up = lam * n * n
        rate_down = lam * n * (n - 1)
        if rng.random() * (rate_up + rate_down) < rate_up:
            i = int(rng.integers(0, n))
            j = int(rng.integers(0, n))
            xi = apply_k(xi, i, j)
        else:
            i = int(rng.integers(0, n))
            j = int(rng.integers(0, n - 1))
            if j >= i:
                j += 1
            xi = apply_phi(xi, i, j)
    _check_budget(xi)
    return xi, weight_exponent
