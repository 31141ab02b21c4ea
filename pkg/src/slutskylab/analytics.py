"""Closed-form and semi-analytic machinery for the mean-field economy.

For large populations the mean basket xbar concentrates on minima of a
free-energy density that decouples across goods given a chemical
potential mu enforcing the average budget:

    beta f(xbar; mu) = sum_i [ beta mu p_i xbar_i
                               - z_i (1 + log xbar_i - log z_i)
                               - log Gamma(z_i) ],
    z_i = 1 + beta a_i (1 + c xbar_i^k).

This module provides that free energy with exact derivatives, the nested
(x, mu) saddle solver with condensed-branch bookkeeping, the critical
herding strengths (both at beta = inf and at finite beta), the Gaussian
correlation blocks (phi, psi) of quantity fluctuations around the
deterministic optimum, the resulting closed-form Slutsky matrix in the
fully rational limit, the ensemble-equivalence budget variance, and the
fixed point of the pairwise-coupling variant.

Conventions: "non-condensed" is the uniform-like solution smoothly
connected to the interaction-free one; "condensed" means a single good
carries an O(1) fraction of expenditure (rescaled Herfindahl > 0.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import special as sp_special

from .errors import (
    ConfigError,
    DomainError,
    NoConvergence,
    NonPositiveQuantity,
    SingularHessian,
    VariantError,
)
from .model import (
    MeanFieldPreference,
    ModelSpec,
    NonInteracting,
    PairwiseHamiltonian,
    herfindahl,
    hessian_blocks,
)

__all__ = [
    "log_gamma",
    "digamma",
    "trigamma",
    "noninteracting_solution",
    "free_energy_density",
    "SaddleSolution",
    "solve_saddle",
    "CriticalLines",
    "critical_c",
    "budget_variance_sigma2",
    "GaussianCorrelations",
    "gaussian_correlations",
    "closed_form_slutsky",
    "closed_form_aggregate_slutsky",
    "HamiltonianFixedPoint",
    "hamiltonian_meanfield",
]


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------

def _domain_checked(z, fn):
    arr = np.asarray(z, dtype=float)
    if np.any(arr <= 0.0) or np.any(~np.isfinite(arr)):
        raise DomainError(f"argument must be finite and > 0, got {z!r}")
    out = fn(arr)
    return float(out) if np.isscalar(z) or arr.ndim == 0 else out


def log_gamma(z):
    """log Gamma(z) for z > 0 (scalar or array)."""
    return _domain_checked(z, sp_special.gammaln)


def digamma(z):
    """psi(z) = d/dz log Gamma(z) for z > 0."""
    return _domain_checked(z, sp_special.psi)


def trigamma(z):
    """psi'(z), the first derivative of the digamma function, z > 0."""
    return _domain_checked(z, lambda a: sp_special.polygamma(1, a))


# ---------------------------------------------------------------------------
# interaction-free closed forms
# ---------------------------------------------------------------------------

def _interaction_strength(spec: ModelSpec):
    """(c, k) of the mean-field variant; (0, 1) for an inert interaction."""
    inter = spec.interaction
    if isinstance(inter, MeanFieldPreference):
        return inter.c, inter.k
    if isinstance(inter, NonInteracting):
        return 0.0, 1.0
    if isinstance(inter, PairwiseHamiltonian) and inter.J == 0.0:
        return 0.0, 1.0
    raise VariantError(
        f"operation does not support interaction {type(inter).__name__} "
        "with nonzero coupling"
    )


def noninteracting_solution(spec: ModelSpec):
    """Mean baskets and per-agent Slutsky matrices without interactions.

    Demand: <x_i^a> = (w^a / p_i) r_i with shares
    r_i = (1 + beta a_i) / sum_k (1 + beta a_k), reducing to
    a_i / sum a_k at beta = inf.  The matching Slutsky matrix is
    S_ij^a = (w^a / (p_i p_j)) r_i (r_j - delta_ij), symmetric and with
    S p = 0 exactly.

    Returns (means (N, M), slutsky (N, M, M)).
    """
    c, _ = _interaction_strength(spec)
    if c != 0.0:
        raise VariantError("noninteracting_solution requires c = 0")
    a = spec.per_agent_preferences  # (N, M)
    if math.isinf(spec.beta):
        weights = a.copy()
    else:
        weights = 1.0 + spec.beta * a
    r = weights / weights.sum(axis=1, keepdims=True)  # (N, M)
    means = spec.budgets[:, None] * r / spec.prices[None, :]
    p = spec.prices
    eye = np.eye(spec.num_goods)
    slutsky = (
        spec.budgets[:, None, None]
        / (p[None, :, None] * p[None, None, :])
        * r[:, :, None]
        * (r[:, None, :] - eye[None, :, :])
    )
    return means, slutsky


# ---------------------------------------------------------------------------
# free energy
# ---------------------------------------------------------------------------

def free_energy_density(spec: ModelSpec, xbar, mu: float):
    """(beta f, gradient, diagonal Hessian) at the mean basket xbar.

    All three outputs are derivatives of beta*f with respect to xbar; the
    Hessian is diagonal (goods decouple) and independent of mu.
    """
    if math.isinf(spec.beta):
        raise ConfigError("free_energy_density requires finite beta")
    xbar = np.asarray(xbar, dtype=float)
    if np.any(xbar <= 0):
        raise NonPositiveQuantity("xbar must be strictly positive")
    c, k = _interaction_strength(spec)
    a = spec.shared_preferences
    beta, p = spec.beta, spec.prices

    xk = xbar**k
    atil = a * (1.0 + c * xk)
    z = 1.0 + beta * atil
    logx = np.log(xbar)
    psi_z = sp_special.psi(z)
    log_z = np.log(z)

    f = np.sum(
        beta * mu * p * xbar - z * (1.0 + logx - log_z) - sp_special.gammaln(z)
    )

    # a-tilde' = d(atil)/dxbar and a-tilde''
    if c == 0.0 or k == 0.0:
        d1 = np.zeros_like(xbar)
        d2 = np.zeros_like(xbar)
    else:
        d1 = a * c * k * xbar ** (k - 1.0)
        d2 = a * c * k * (k - 1.0) * xbar ** (k - 2.0)
    bracket = psi_z - log_z + logx
    grad = beta * mu * p - z / xbar - beta * d1 * bracket

    psi1_z = sp_special.polygamma(1, z)
    hess = (
        z / xbar**2
        - 2.0 * beta * d1 / xbar
        + (beta * d1) ** 2 / z
        - (beta * d1) ** 2 * psi1_z
        - beta * d2 * bracket
    )
    return float(f), grad, hess


# ---------------------------------------------------------------------------
# saddle solver
# ---------------------------------------------------------------------------

@dataclass
class SaddleSolution:
    xbar: np.ndarray
    mu: float
    free_energy: float
    branch: str                      # "non_condensed" | "condensed"
    dominant_good: Optional[int]     # set when condensed
    converged: bool
    residual_stationarity: float
    residual_budget: float
    iterations: int
    herfindahl: float
    degenerate: bool = False         # symmetric tie between condensed goods
    diagnostics: dict = field(default_factory=dict)


def _make_good_fn(spec: ModelSpec, i: int):
    """Return h(x, mu) and dh/dx for good i, vectorized in x.

    Finite beta: h = x * d(beta f)/dxbar_i.
    beta = inf:  h = mu p_i x - a_i [1 + c x^k (1 + k log x)].
    Both are negative at x -> 0+ and their roots are the stationary
    points of the per-good free energy at the given mu.
    """
    c, k = _interaction_strength(spec)
    a = float(np.asarray(spec.shared_preferences)[i])
    p = float(spec.prices[i])
    beta = spec.beta

    if math.isinf(beta):

        def h(x, mu):
            x = np.asarray(x, dtype=float)
            logx = np.log(x)
            xk = x**k
            return mu * p * x - a * (1.0 + c * xk * (1.0 + k * logx))

        def dh(x, mu):
            x = np.asarray(x, dtype=float)
            logx = np.log(x)
            if c == 0.0 or k == 0.0:
                return mu * p * np.ones_like(x)
            return mu * p - a * c * k * x ** (k - 1.0) * (
                (1.0 + k * logx) + 1.0
            )

        return h, dh

    def h(x, mu):
        x = np.asarray(x, dtype=float)
        logx = np.log(x)
        xk = x**k
        atil = a * (1.0 + c * xk)
        z = 1.0 + beta * atil
        if c == 0.0 or k == 0.0:
            return beta * mu * p * x - z
        d1 = a * c * k * x ** (k - 1.0)
        bracket = sp_special.psi(z) - np.log(z) + logx
        return beta * mu * p * x - z - beta * d1 * x * bracket

    def dh(x, mu):
        # h = x * g(x); dh = g + x g' with g, g' from free_energy_density
        x = np.asarray(x, dtype=float)
        logx = np.log(x)
        xk = x**k
        atil = a * (1.0 + c * xk)
        z = 1.0 + beta * atil
        if c == 0.0 or k == 0.0:
            g = beta * mu * p - z / x
            gp = z / x**2
        else:
            d1 = a * c * k * x ** (k - 1.0)
            d2 = a * c * k * (k - 1.0) * x ** (k - 2.0)
            bracket = sp_special.psi(z) - np.log(z) + logx
            g = beta * mu * p - z / x - beta * d1 * bracket
            gp = (
                z / x**2
                - 2.0 * beta * d1 / x
                + (beta * d1) ** 2 / z
                - (beta * d1) ** 2 * sp_special.zeta(2, z)  # trigamma
                - beta * d2 * bracket
            )
        return g + x * gp

    return h, dh


def _refine_root(h, dh, lo, hi, mu, tol=1e-14):
    """Bisection to a tight bracket, then Newton polish."""
    flo = float(h(lo, mu))
    fhi = float(h(hi, mu))
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    for _ in range(80):
        if hi - lo <= 1e-14 * hi:
            break
        mid = 0.5 * (lo + hi)
        fm = float(h(mid, mu))
        if fm == 0.0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm
    x = 0.5 * (lo + hi)
    for _ in range(6):
        d = float(dh(x, mu))
        if d == 0.0:
            break
        step = float(h(x, mu)) / d
        x_new = x - step
        if not (lo <= x_new <= hi):
            break
        x = x_new
        if abs(step) <= tol * max(abs(x), 1.0):
            break
    return x


def _roots_for_good(h, dh, lo, hi, mu, n_scan=240):
    """All roots of h(., mu) on [lo, hi], sorted ascending.

    Sign changes between grid points are refined directly.  Near a fold
    two roots can sit closer together than the grid spacing, leaving no
    visible sign change; those are rescued by polishing each interior
    extremum of h (bisection on the exact derivative) and splitting the
    interval when the extremum pokes through zero.
    """
    grid = np.geomspace(lo, hi, n_scan)
    vals = np.asarray(h(grid, mu), dtype=float)
    dvals = np.asarray(dh(grid, mu), dtype=float)
    roots = []
    sign = np.sign(vals)
    for idx in np.nonzero(sign[:-1] * sign[1:] < 0)[0]:
        roots.append(_refine_root(h, dh, grid[idx], grid[idx + 1], mu))
    for idx in np.nonzero(vals == 0.0)[0]:
        roots.append(float(grid[idx]))

    dsign = np.sign(dvals)
    for idx in np.nonzero(dsign[:-1] * dsign[1:] < 0)[0]:
        va, vb = vals[idx], vals[idx + 1]
        if va == 0.0 or vb == 0.0 or (va > 0) != (vb > 0):
            continue  # already handled by the sign-change pass
        a_, b_ = grid[idx], grid[idx + 1]
        da = dvals[idx]
        for _ in range(80):
            if b_ - a_ <= 1e-14 * b_:
                break
            mid = 0.5 * (a_ + b_)
            dm = float(dh(mid, mu))
            if dm == 0.0:
                break
            if (dm > 0) == (da > 0):
                a_, da = mid, dm
            else:
                b_ = mid
        x_ext = 0.5 * (a_ + b_)
        v_ext = float(h(x_ext, mu))
        if v_ext == 0.0:
            roots.append(x_ext)
        elif (v_ext > 0) != (va > 0):
            roots.append(_refine_root(h, dh, grid[idx], x_ext, mu))
            roots.append(_refine_root(h, dh, x_ext, grid[idx + 1], mu))
    return sorted(roots)


def _branch_rate(spec: ModelSpec, xbar: np.ndarray) -> float:
    """mu-free comparator deciding which stationary basket dominates.

    On the budget shell the mu term is a constant, so candidates are
    ranked by G = -sum_i [z_i (1 + log x_i - log z_i) + log Gamma(z_i)]
    at finite beta, and by its beta -> inf rate
    G_inf = -sum_i a_i (1 + c x_i^k) log x_i.
    Lower G means exponentially more probable.
    """
    c, k = _interaction_strength(spec)
    a = spec.shared_preferences
    if math.isinf(spec.beta):
        return float(-np.sum(a * (1.0 + c * xbar**k) * np.log(xbar)))
    z = 1.0 + spec.beta * a * (1.0 + c * xbar**k)
    return float(
        -np.sum(z * (1.0 + np.log(xbar) - np.log(z)) + sp_special.gammaln(z))
    )


def solve_saddle(spec: ModelSpec, w: Optional[float] = None, hint=None,
                 branch: str = "min") -> SaddleSolution:
    """Stationary mean basket of the free energy at budget w.

    Nested solve: for a trial mu each good's 1-D stationarity condition
    is solved on [1e-8 w/p_i, w/p_i] (all roots kept); the outer loop
    bisects mu until the budget sum_i p_i xbar_i = w holds.  Candidate
    branches are "every good on its low root" plus, for each good with
    multiple roots, "that good on its high root"; the returned solution
    minimizes the mu-free rate G among converged candidates.  The branch
    is labeled condensed when the rescaled Herfindahl of xbar exceeds
    0.5.  `hint` (an xbar vector) only seeds diagnostics ordering; the
    solver always enumerates branches for reproducibility.

    branch="non_condensed" restricts the enumeration to the all-low-root
    candidate (the unconcentrated solution), which past the transition is
    a local, not global, minimum; that is the state a soft-budget chain
    can actually hold, the concentrated one being unstable at fixed mu.
    """
    if branch not in ("min", "non_condensed"):
        raise ConfigError(f"branch must be 'min' or 'non_condensed', got {branch!r}")
    if w is None:
        w = spec.common_budget
    if w <= 0:
        raise NonPositiveQuantity("budget must be positive")
    c, k = _interaction_strength(spec)
    M = spec.num_goods
    a = spec.shared_preferences
    p = spec.prices
    beta = spec.beta

    fns = [_make_good_fn(spec, i) for i in range(M)]
    los = [1e-8 * w / p[i] for i in range(M)]
    his = [w / p[i] for i in range(M)]

    if math.isinf(beta):
        mu0 = float(np.sum(a) / w)
    else:
        mu0 = float(np.sum(1.0 + beta * a) / (beta * w))

    def branch_budget(mu, dominant):
        """(budget, xbar) for one branch at trial mu; None if absent.

        A branch is absent at mu whenever any good lacks the root it is
        supposed to occupy (the search window is (0, w/p_i]; any root
        beyond w/p_i can never be part of a budget-consistent basket).
        Goods sharing (a_i, p_i) have identical root sets, solved once.
        """
        xs = np.empty(M)
        cache = {}
        for i in range(M):
            key = (a[i], p[i])
            roots = cache.get(key)
            if roots is None:
                h, dh = fns[i]
                roots = _roots_for_good(h, dh, los[i], his[i], mu)
                cache[key] = roots
            if not roots:
                return None
            if dominant == i:
                if len(roots) < 2 or roots[-1] <= roots[0] * (1 + 1e-9):
                    return None
                xs[i] = roots[-1]
            else:
                xs[i] = roots[0]
        return float(np.dot(p, xs)), xs

    def solve_branch(dominant):
        """Find mu with branch budget == w; None if the branch has none.

        The budget is continuous in mu within the branch's existence
        window but the window edges are folds where roots merge, and the
        budget can cross w arbitrarily close to an edge.  The coarse
        geometric scan therefore refines three cases: a sign change
        between adjacent defined points, and a defined -> absent or
        absent -> defined transition (bisect the edge while watching for
        a sign change on the defined side).
        """

        def bisect_root(mu_a, d_a, mu_b, d_b):
            for _ in range(200):
                mid = 0.5 * (mu_a + mu_b)
                got = branch_budget(mid, dominant)
                if got is None:
                    # fold strictly inside the bracket (two close folds);
                    # retreat the b side and keep halving
                    mu_b = mid
                    continue
                d = got[0] - w
                if abs(d) <= 1e-11 * w or abs(mu_a - mu_b) <= 1e-15 * mid:
                    return mid, got[1], abs(d)
                if (d > 0) == (d_a > 0):
                    mu_a, d_a = mid, d
                else:
                    mu_b, d_b = mid, d
            got = branch_budget(0.5 * (mu_a + mu_b), dominant)
            if got is None:
                return None
            return 0.5 * (mu_a + mu_b), got[1], abs(got[0] - w)

        def edge_probe(mu_def, d_def, mu_none):
            # halve toward the existence edge from the defined side,
            # promoting to a root bisection if the budget residual flips
            for _ in range(70):
                mid = 0.5 * (mu_def + mu_none)
                got = branch_budget(mid, dominant)
                if got is None:
                    mu_none = mid
                else:
                    d = got[0] - w
                    if (d > 0) != (d_def > 0):
                        return bisect_root(mu_def, d_def, mid, d)
                    mu_def, d_def = mid, d
            return None

        factors = np.geomspace(1e-4, 1e4, 129)
        prev = None       # (mu, diff) at the latest defined scan point
        prev_none = None  # latest absent scan point
        for fac in factors:
            mu = mu0 * fac
            out = branch_budget(mu, dominant)
            if out is None:
                if prev is not None:
                    hit = edge_probe(prev[0], prev[1], mu)
                    if hit is not None:
                        return hit
                prev, prev_none = None, mu
                continue
            diff = out[0] - w
            if prev is not None and (prev[1] > 0) != (diff > 0):
                hit = bisect_root(prev[0], prev[1], mu, diff)
                if hit is not None:
                    return hit
            elif prev is None and prev_none is not None:
                hit = edge_probe(mu, diff, prev_none)
                if hit is not None:
                    return hit
            prev = (mu, diff)
        return None

    candidates = []
    sol = solve_branch(None)
    if sol is not None:
        candidates.append((None,) + sol)
    if branch != "non_condensed":
        for j in range(M):
            sol = solve_branch(j)
            if sol is not None:
                candidates.append((j,) + sol)

    if not candidates:
        raise NoConvergence(
            "saddle solver found no budget-consistent stationary basket",
            residuals={"budget": float("nan")},
        )

    rated = []
    for dominant, mu, xs, bres in candidates:
        rated.append((_branch_rate(spec, xs), dominant, mu, xs, bres))
    rated.sort(key=lambda t: (t[0], -1 if t[1] is None else t[1]))
    tol = 1e-10 * max(1.0, abs(rated[0][0]))
    tied = [t for t in rated if abs(t[0] - rated[0][0]) <= tol]
    tied.sort(key=lambda t: -1 if t[1] is None else t[1])
    best = tied[0]
    degenerate = len(tied) > 1 and all(t[1] is not None for t in tied[:2])

    rate, dominant, mu, xs, bres = best
    if math.isinf(beta):
        h_res = max(
            abs(float(fns[i][0](xs[i], mu))) / max(1.0, a[i]) for i in range(M)
        )
        free_e = rate
    else:
        _, grad, _ = free_energy_density(spec, xs, mu)
        h_res = float(np.max(np.abs(grad)))
        free_e, _, _ = free_energy_density(spec, xs, mu)

    H = herfindahl(xs, p)
    condensed = H > 0.5
    return SaddleSolution(
        xbar=xs,
        mu=float(mu),
        free_energy=free_e,
        branch="condensed" if condensed else "non_condensed",
        dominant_good=int(np.argmax(xs * p)) if condensed else None,
        converged=(bres <= 1e-8 * w and h_res <= 1e-8),
        residual_stationarity=h_res,
        residual_budget=bres / w,
        iterations=len(rated),
        herfindahl=H,
        degenerate=degenerate,
        diagnostics={
            "branch_rates": [
                (("low" if d is None else f"high:{d}"), r) for r, d, *_ in rated
            ]
        },
    )


# ---------------------------------------------------------------------------
# critical herding strength
# ---------------------------------------------------------------------------

@dataclass
class CriticalLines:
    c_inf: float          # math.inf when the transition is unreachable
    c_crit: float         # finite-beta spinodal; equals c_inf at beta=inf
    divergent: bool


def critical_c(spec: ModelSpec, w: Optional[float] = None) -> CriticalLines:
    """Critical herding strengths for the mean-field preference model.

    c_inf solves, at the fully rational interaction-free basket
    xbar_i = (w/p_i) a_i / sum a,

        1 / c_inf = max_i xbar_i^k [2k - 1 + k(k-1) log xbar_i],

    returning inf (divergent) when the bracket is nonpositive for every
    good.  The finite-beta value c_crit is the smallest c at which the
    diagonal free-energy Hessian, evaluated at the c = 0 non-condensed
    solution, first loses positivity (found by bisection); it satisfies
    c_crit >= c_inf and tends to c_inf as beta grows.
    """
    inter = spec.interaction
    if isinstance(inter, MeanFieldPreference):
        k = inter.k
    else:
        raise VariantError("critical_c requires MeanFieldPreference")
    if k <= 0:
        raise DomainError("critical_c requires k > 0")
    if w is None:
        w = spec.common_budget
    a = spec.shared_preferences
    p = spec.prices
    beta = spec.beta

    xbar_inf = (w / p) * a / np.sum(a)
    brackets = xbar_inf**k * (2 * k - 1 + k * (k - 1) * np.log(xbar_inf))
    top = float(np.max(brackets))
    c_inf = (1.0 / top) if top > 0 else math.inf

    if math.isinf(beta):
        return CriticalLines(c_inf=c_inf, c_crit=c_inf, divergent=not (top > 0))

    weights = 1.0 + beta * a
    xbar_b = (w / p) * weights / weights.sum()

    def min_hess(c):
        probe = spec.with_interaction(MeanFieldPreference(c=c, k=k))
        _, _, hess = free_energy_density(probe, xbar_b, mu=0.0)
        return float(np.min(hess))

    if min_hess(0.0) <= 0:
        raise NoConvergence("c = 0 solution is not a free-energy minimum")
    hi = max(c_inf, 1e-6) if math.isfinite(c_inf) else 1e-6
    found = False
    for _ in range(80):
        if min_hess(hi) < 0:
            found = True
            break
        hi *= 2.0
        if hi > 1e8:
            break
    if not found:
        return CriticalLines(c_inf=c_inf, c_crit=math.inf, divergent=not (top > 0))
    lo = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if min_hess(mid) < 0:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-13 * max(hi, 1.0):
            break
    return CriticalLines(
        c_inf=c_inf, c_crit=0.5 * (lo + hi), divergent=not (top > 0)
    )


# ---------------------------------------------------------------------------
# ensemble equivalence
# ---------------------------------------------------------------------------

def budget_variance_sigma2(spec: ModelSpec, xbar_star) -> float:
    """Soft-constraint variance of the realized budget per agent.

    sigma^2 = sum_i (xbar_i p_i)^2 / (1 + beta a_i [1 + c xbar_i^k]).
    At the non-condensed solution this reduces to w^2 / sum_i (1+beta a_i).
    """
    if math.isinf(spec.beta):
        raise ConfigError("budget_variance_sigma2 requires finite beta")
    xbar = np.asarray(xbar_star, dtype=float)
    if np.any(xbar <= 0):
        raise NonPositiveQuantity("xbar must be strictly positive")
    c, k = _interaction_strength(spec)
    a = spec.shared_preferences
    denom = 1.0 + spec.beta * a * (1.0 + c * xbar**k)
    return float(np.sum((xbar * spec.prices) ** 2 / denom))


# ---------------------------------------------------------------------------
# Gaussian fluctuations and the rational-limit Slutsky matrix
# ---------------------------------------------------------------------------

@dataclass
class GaussianCorrelations:
    """Quadratic-fluctuation correlation blocks around the optimum.

    Same-agent covariance of quantities is phi / beta, the cross-agent
    one psi / (beta N):  C_ij^{ag} = (phi_ij d_ag + psi_ij / N) / beta.
    F and D are the diagonal blocks of the inverse utility Hessian
    (H = diag-blocks(A) + all-blocks(B); F = A^-1,
    D = -(A+NB)^-1 B A^-1); a, b, d are the budget-projection scalars.
    """

    phi: np.ndarray
    psi: np.ndarray
    F: np.ndarray
    D: np.ndarray
    a_scalar: float
    b_scalar: float
    d_scalar: float


def gaussian_correlations(spec: ModelSpec, xbar_star) -> GaussianCorrelations:
    """Build (phi, psi) at the stationary basket xbar_star."""
    if not isinstance(spec.interaction, MeanFieldPreference):
        raise VariantError("gaussian_correlations requires MeanFieldPreference")
    xbar = np.asarray(xbar_star, dtype=float)
    if np.any(xbar <= 0):
        raise NonPositiveQuantity("xbar must be strictly positive")
    A_m, B_m = hessian_blocks(spec, xbar)
    A = np.diag(A_m).copy()
    B = np.diag(B_m).copy()
    N = spec.num_agents
    p = spec.prices
    S = A + N * B
    if np.any(A == 0.0) or np.any(S == 0.0):
        raise SingularHessian("utility Hessian block is singular at xbar*")
    F = 1.0 / A
    D = -B * F / S
    a_sc = float(np.sum(p * p * F))
    b_sc = float(np.sum(p * p * D))
    if a_sc == 0.0 or (a_sc + N * b_sc) == 0.0:
        raise SingularHessian("budget projection of the Hessian is singular")
    d_sc = -b_sc / (a_sc * (a_sc + N * b_sc))

    pp = np.outer(p, p)
    FF = np.outer(F, F)
    phi = -np.diag(F) + pp * FF / a_sc
    FD = np.outer(F, D)
    DF = np.outer(D, F)
    DD = np.outer(D, D)
    psi = N * (
        -np.diag(D)
        + pp * (d_sc * FF + (1.0 / a_sc + N * d_sc) * (FD + DF + N * DD))
    )
    return GaussianCorrelations(
        phi=phi, psi=psi, F=F, D=D, a_scalar=a_sc, b_scalar=b_sc, d_scalar=d_sc
    )


def closed_form_slutsky(spec: ModelSpec, xbar_star) -> np.ndarray:
    """Common per-agent Slutsky matrix in the fully rational limit.

    S_ij = -(a_j / (p_j xbar_j)) [ k c (phi+psi)_ij xbar_j^k log xbar_j
                                   + (1 + c xbar_j^k) phi_ij ].
    At c = 0 this reduces to the interaction-free closed form
    (w/(p_i p_j)) r_i (r_j - delta_ij) with r_i = a_i / sum a.
    """
    corr = gaussian_correlations(spec, xbar_star)
    xbar = np.asarray(xbar_star, dtype=float)
    a = spec.shared_preferences
    p = spec.prices
    c, k = _interaction_strength(spec)
    col = a / (p * xbar)  # indexed by j
    xk = xbar**k
    herd = k * c * xk * np.log(xbar)  # j-vector
    S = -((corr.phi + corr.psi) * herd[None, :] + corr.phi * (1.0 + c * xk)[None, :])
    return S * col[None, :]


def closed_form_aggregate_slutsky(spec: ModelSpec, xbar_star, mu: float) -> np.ndarray:
    """Aggregate Slutsky matrix -mu (phi + psi) in the rational limit.

    mu is the saddle multiplier at xbar_star; the result is symmetric by
    construction for identical agents.
    """
    corr = gaussian_correlations(spec, xbar_star)
    return -mu * (corr.phi + corr.psi)


# ---------------------------------------------------------------------------
# pairwise-coupling fixed point
# ---------------------------------------------------------------------------

@dataclass
class HamiltonianFixedPoint:
    x_star: np.ndarray
    stable: np.ndarray            # per-good bool
    J_crit: Optional[float]       # None when rho <= 1/2 or never unstable


def hamiltonian_meanfield(spec: ModelSpec, w: Optional[float] = None) -> HamiltonianFixedPoint:
    """Deterministic fixed point of the pairwise-coupling variant.

    Iterates x_i = (w/p_i) a_i [1 + J rho x_i^{2 rho}]
                   / sum_j a_j [1 + J rho x_j^{2 rho}]
    with damping from the J = 0 allocation.  The per-good stability flag
    is the sign of 1 - J rho (2 rho - 1) x_i^{2 rho}; couplings with
    rho <= 1/2 are stable for every J (J_crit = None).
    """
    inter = spec.interaction
    if not isinstance(inter, PairwiseHamiltonian):
        raise VariantError("hamiltonian_meanfield requires PairwiseHamiltonian")
    if w is None:
        w = spec.common_budget
    a = spec.shared_preferences
    p = spec.prices
    rho = inter.rho

    def fixed_point(J):
        x = (w / p) * a / np.sum(a)
        for it in range(200_000):
            weight = a * (1.0 + J * rho * x ** (2 * rho))
            x_new = (w / p) * weight / np.sum(weight)
            x_next = 0.5 * (x + x_new)
            if np.max(np.abs(x_next - x) / np.maximum(x, 1e-300)) < 1e-14:
                return x_next
            x = x_next
        raise NoConvergence("pairwise fixed-point iteration stalled")

    def min_flag(J):
        x = fixed_point(J)
        return float(np.min(1.0 - J * rho * (2 * rho - 1.0) * x ** (2 * rho)))

    x_star = fixed_point(inter.J)
    stable = 1.0 - inter.J * rho * (2 * rho - 1.0) * x_star ** (2 * rho) > 0.0

    J_crit = None
    if rho > 0.5:
        hi = 1.0
        found = False
        for _ in range(60):
            if min_flag(hi) < 0:
                found = True
                break
            hi *= 2.0
            if hi > 1e6:
                break
        if found:
            lo = 0.0
            while hi - lo > 1e-10 * max(1.0, hi):
                mid = 0.5 * (lo + hi)
                if min_flag(mid) < 0:
                    hi = mid
                else:
                    lo = mid
            J_crit = 0.5 * (lo + hi)
    return HamiltonianFixedPoint(x_star=x_star, stable=stable, J_crit=J_crit)
