"""Slutsky matrix assembly from moments, plus the metric bundle.

Three estimation routes produce the same container: fluctuation-response
(connected correlations and mixed gradient moments from a chain or the
quadrature oracle), pathwise finite differences of perturbed chains, and
the deterministic closed form in the fully rational limit.  The metric
bundle (spectrum, trace, asymmetry chi, homogeneity residual) is how the
matrices get compared and plotted downstream.

Fluctuation-response formulas used here, all for an arbitrary reference
good k (g = dU/dx):

    Gamma         = (beta/p_k) <g_k>
    d_w <A>       = (1/p_k) [ <dA/dx_k> + beta <A g_k>_c ]
    S^a_ij        = -sum_g [ Gamma_g <x_i^a x_j^g>_c + d_{w^g} <x_i^a x_j^g>_c ]

with the d_w of a connected pair reconstructed from the five-moment
combination (the delta terms cancel).  The sum over g compensates every
agent's budget; the single-agent formula is the N = 1 case verbatim.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import analytics
from .errors import (
    ConfigError,
    DimensionMismatch,
    EigSolverFailure,
    MissingMoments,
    UnsupportedSize,
    VariantError,
)
from .model import ModelSpec, NonInteracting
from .moments import FRMoments

__all__ = [
    "SlutskyMetrics",
    "SlutskyEstimate",
    "WealthMap",
    "fr_slutsky",
    "aggregate_slutsky",
    "slutsky_metrics",
    "closed_form_estimate",
]


# ---------------------------------------------------------------------------
# metric bundle
# ---------------------------------------------------------------------------

@dataclass
class SlutskyMetrics:
    eigenvalues: np.ndarray          # complex, descending by real part
    trace: float
    chi: float                       # +inf sentinel on denominator underflow
    chi_denominator_underflow: bool
    homogeneity_residual: float      # ||S p||_inf


def slutsky_metrics(S: np.ndarray, prices, stack: Optional[np.ndarray] = None) -> SlutskyMetrics:
    """Spectrum, trace, asymmetry chi and homogeneity residual of S.

    chi = |sum_a sum_{j<i} (S_ij^a - S_ji^a) / sum_a sum_{j<i} (S_ij^a + S_ji^a)|
    summed over the agent stack when one is given (S itself otherwise).
    A denominator smaller than 1e-12 ||S||_inf flags underflow and chi is
    reported as +inf rather than an unstable ratio.
    """
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise DimensionMismatch(f"expected square matrix, got {S.shape}")
    M = S.shape[0]
    if M > 64:
        raise UnsupportedSize("metrics limited to M <= 64")
    try:
        eig = np.linalg.eigvals(S)
    except np.linalg.LinAlgError as exc:
        raise EigSolverFailure(f"QR iteration did not converge: {exc}") from exc
    eig = eig[np.argsort(-eig.real)]

    mats = stack if stack is not None else S[None]
    il, jl = np.tril_indices(M, -1)
    num = float(sum((m[il, jl] - m.T[il, jl]).sum() for m in mats))
    den = float(sum((m[il, jl] + m.T[il, jl]).sum() for m in mats))
    scale = np.max(np.abs(S)) if np.any(S) else 1.0
    underflow = abs(den) < 1e-12 * scale
    chi = math.inf if underflow else abs(num / den)
    return SlutskyMetrics(
        eigenvalues=eig,
        trace=float(np.trace(S)),
        chi=chi,
        chi_denominator_underflow=underflow,
        homogeneity_residual=float(np.max(np.abs(S @ np.asarray(prices)))),
    )


# ---------------------------------------------------------------------------
# estimate container
# ---------------------------------------------------------------------------

@dataclass
class SlutskyEstimate:
    per_agent: np.ndarray                 # (N, M, M) or (1, M, M) if identical
    mean_individual: np.ndarray           # (M, M)
    method: str                           # Pathwise | FluctuationResponse | ClosedFormBetaInf
    metrics: SlutskyMetrics
    aggregate: Optional[np.ndarray] = None
    errors: Optional[np.ndarray] = None   # per-entry standard errors of S-bar
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.allclose(
            self.mean_individual, self.per_agent.mean(axis=0), atol=1e-12, rtol=1e-12
        ):
            raise DimensionMismatch("mean_individual is not the stack average")


_METHODS = ("Pathwise", "FluctuationResponse", "ClosedFormBetaInf")


# ---------------------------------------------------------------------------
# wealth maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WealthMap:
    """How individual budgets move when aggregate wealth moves.

    Budgets follow w^a = w0 F(kappa^a wbar / w0) with per-agent
    multipliers kappa^a.  kind="proportional" is F(x) = x, so
    kappa^a = w^a/wbar and d w^a/d wbar = kappa^a.  kind="power" is
    F(x) = x^q, whose chain factor works out to q w^a/wbar.  When
    kappa is omitted the multipliers are inferred from the current
    budgets, i.e. the economy sits on the map.
    """

    kind: str = "proportional"
    q: float = 1.0
    w0: float = 1.0
    kappa: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("proportional", "power"):
            raise ConfigError(f"unknown wealth map {self.kind!r}")
        if self.kind == "power" and self.q <= 0:
            raise ConfigError("power map needs q > 0")
        if self.w0 <= 0:
            raise ConfigError("reference scale w0 must be positive")
        if self.kappa is not None:
            object.__setattr__(self, "kappa", np.asarray(self.kappa, dtype=float))
            if np.any(self.kappa <= 0):
                raise ConfigError("multipliers must be positive")

    def multipliers(self, budgets: np.ndarray) -> np.ndarray:
        wbar = float(np.mean(budgets))
        if self.kappa is not None:
            if len(self.kappa) != len(budgets):
                raise DimensionMismatch("one multiplier per agent")
            return self.kappa
        if self.kind == "proportional":
            return budgets / wbar
        return (self.w0 / wbar) * (budgets / self.w0) ** (1.0 / self.q)

    def chain_factors(self, budgets: np.ndarray) -> np.ndarray:
        """d w^a / d wbar evaluated on the map at the current wbar."""
        kap = self.multipliers(budgets)
        wbar = float(np.mean(budgets))
        if self.kind == "proportional":
            return kap
        w_map = self.w0 * (kap * wbar / self.w0) ** self.q
        return self.q * w_map / wbar


# ---------------------------------------------------------------------------
# fluctuation-response assembly
# ---------------------------------------------------------------------------

def _five_moment_dw(m_i, m_j, raw_ij, xxg_ij, xg_i, xg_j, g, beta, p_k):
    """d_w <x_i x_j>_c: connected triple <x_i x_j g_k> times beta/p_k."""
    return (beta / p_k) * (
        xxg_ij + 2.0 * m_i * m_j * g - raw_ij * g - m_i * xg_j - m_j * xg_i
    )


def _fr_single(mom: FRMoments, alpha: int) -> np.ndarray:
    """Single-agent (or independent-agent) matrix from same-agent moments."""
    beta, p = mom.beta, mom.prices
    M = len(p)
    m = mom.mean_x[alpha]
    C = mom.cov_same[alpha]
    raw = C + np.outer(m, m)
    out = np.zeros((M, M))
    for t, k in enumerate(mom.ref_goods):
        g = mom.g_mean[t, alpha]
        xg = mom.xg_same[t, alpha]
        xxg = mom.xxg_same[t, alpha]
        gamma = beta / p[k] * g
        dwC = _five_moment_dw(
            m[:, None], m[None, :], raw, xxg, xg[:, None], xg[None, :], g, beta, p[k]
        )
        out += -(gamma * C + dwC)
    return out / len(mom.ref_goods)


def _fr_pooled(mom: FRMoments) -> np.ndarray:
    """Identical interacting agents: same+cross blocks, pooled over the
    population, combined per the thermodynamic multi-agent formula."""
    beta, p, N = mom.beta, mom.prices, mom.num_agents
    m = mom.mean_x
    C_same = mom.cov_same
    C_cross = mom.cov_cross
    raw_same = C_same + np.outer(m, m)
    raw_cross = C_cross + np.outer(m, m)
    out = np.zeros((len(p),) * 2)
    for t, k in enumerate(mom.ref_goods):
        g = mom.g_mean[t]
        gamma = beta / p[k] * g
        # same-agent block: both x factors and g share the agent
        T_same = _five_moment_dw(
            m[:, None], m[None, :], raw_same, mom.xxg_same[t],
            mom.xg_same[t][:, None], mom.xg_same[t][None, :], g, beta, p[k],
        )
        # cross block: x_i on agent alpha, x_j and g on agent gamma
        T_cross = _five_moment_dw(
            m[:, None], m[None, :], raw_cross, mom.xxg_cross[t],
            mom.xg_cross[t][:, None], mom.xg_same[t][None, :], g, beta, p[k],
        )
        out += -(
            gamma * (C_same + (N - 1) * C_cross) + T_same + (N - 1) * T_cross
        )
    return out / len(mom.ref_goods)


def _fr_matrices(mom: FRMoments) -> np.ndarray:
    if mom.kind == "per_agent":
        return np.stack([_fr_single(mom, a) for a in range(mom.num_agents)])
    return _fr_pooled(mom)[None]


def fr_slutsky(spec: ModelSpec, moments: Optional[FRMoments],
               batch_moments: Optional[Sequence[FRMoments]] = None) -> SlutskyEstimate:
    """Fluctuation-response Slutsky estimate from a moment bundle.

    batch_moments, when given (one bundle per batch of a chain), supply
    per-entry standard errors via batch means.  MissingMoments is raised
    when the chain ran without gradient-moment accumulation.
    """
    if moments is None:
        raise MissingMoments(
            "chain was run without utility-gradient moment accumulation"
        )
    per_agent = _fr_matrices(moments)
    sbar = per_agent.mean(axis=0)
    err = None
    if batch_moments:
        if len(batch_moments) < 2:
            raise ConfigError("need at least two batches for error bars")
        stack = np.stack([np.mean(_fr_matrices(b), axis=0) for b in batch_moments])
        err = stack.std(axis=0, ddof=1) / math.sqrt(len(batch_moments))
    return SlutskyEstimate(
        per_agent=per_agent,
        mean_individual=sbar,
        method="FluctuationResponse",
        metrics=slutsky_metrics(sbar, spec.prices, stack=per_agent),
        errors=err,
        diagnostics={"ref_goods": list(moments.ref_goods), "layout": moments.kind},
    )


# ---------------------------------------------------------------------------
# aggregate matrix
# ---------------------------------------------------------------------------

def _dw_same(mom: FRMoments, t: int, alpha: Optional[int]) -> np.ndarray:
    """d_{w^a} <x_i^a> for one reference good index t."""
    beta, p = mom.beta, mom.prices
    k = mom.ref_goods[t]
    if mom.kind == "per_agent":
        m = mom.mean_x[alpha]
        xg_c = mom.xg_same[t, alpha] - m * mom.g_mean[t, alpha]
    else:
        m = mom.mean_x
        xg_c = mom.xg_same[t] - m * mom.g_mean[t]
    out = beta / p[k] * xg_c
    out[k] += 1.0 / p[k]
    return out


def aggregate_slutsky(spec: ModelSpec, estimate: SlutskyEstimate,
                      moments: FRMoments, wealth_map: WealthMap) -> np.ndarray:
    """Aggregate matrix: S-bar plus the wealth-map correction.

    agg_ij = S-bar_ij + (1/N) sum_{a,g} (kappa^g xbar_j - <x_j^g>) d_{w^g} <x_i^a>

    with kappa^g the wealth-map chain factors.  For identical agents
    under the proportional map the correction vanishes identically.
    """
    if moments is None:
        raise MissingMoments("aggregate assembly needs the moment bundle")
    M = spec.num_goods
    sbar = estimate.mean_individual
    if sbar.shape != (M, M):
        raise DimensionMismatch("estimate does not match the economy size")
    kappa = wealth_map.chain_factors(spec.budgets)
    K = len(moments.ref_goods)

    if moments.kind == "per_agent":
        N = moments.num_agents
        xbar = moments.mean_x.mean(axis=0)
        corr = np.zeros((M, M))
        for alpha in range(N):
            dw = np.mean(
                [_dw_same(moments, t, alpha) for t in range(K)], axis=0
            )
            gap = kappa[alpha] * xbar - moments.mean_x[alpha]
            corr += np.outer(dw, gap)
        return sbar + corr / N

    # pooled identical agents: all kappa equal and all gaps equal
    N = moments.num_agents
    xbar = moments.mean_x
    dw_same = np.mean([_dw_same(moments, t, None) for t in range(K)], axis=0)
    D = np.mean(
        [
            moments.beta / spec.prices[moments.ref_goods[t]]
            * (moments.xg_cross[t] - xbar * moments.g_mean[t])
            for t in range(K)
        ],
        axis=0,
    )
    gap = kappa[0] * xbar - xbar
    return sbar + np.outer(dw_same + (N - 1) * D, gap)


# ---------------------------------------------------------------------------
# closed form
# ---------------------------------------------------------------------------

def closed_form_estimate(spec: ModelSpec, xbar_star=None, mu: Optional[float] = None) -> SlutskyEstimate:
    """Rational-limit estimate; solves the saddle point when not given."""
    if not math.isinf(spec.beta):
        raise VariantError("closed form requires beta = inf")
    if xbar_star is None or mu is None:
        sol = analytics.solve_saddle(spec)
        xbar_star, mu = sol.xbar, sol.mu
    S = analytics.closed_form_slutsky(spec, xbar_star)
    agg = analytics.closed_form_aggregate_slutsky(spec, xbar_star, mu)
    return SlutskyEstimate(
        per_agent=S[None],
        mean_individual=S,
        method="ClosedFormBetaInf",
        metrics=slutsky_metrics(S, spec.prices),
        aggregate=agg,
        diagnostics={"mu": float(mu), "xbar": np.asarray(xbar_star).tolist()},
    )
