"""Deterministic quadrature oracle for very small economies.

Eliminates the budget constraint analytically (the last good carries the
remainder) and integrates the Boltzmann weight over the remaining free
coordinates with Gauss-Legendre nodes.  Supported sizes are the ones
where a tensor grid is exact-cheap: one agent with two or three goods,
or two agents with two goods.  Everything downstream of the sampler can
be validated against these numbers: partition function, moments, the
fluctuation-response moment bundle, and a finite-difference Slutsky
matrix straight from the definition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import logsumexp

from .errors import ConfigError, NoConvergence, UnsupportedSize, VariantError
from .model import (
    MeanFieldPreference,
    ModelSpec,
    NonInteracting,
    PairwiseHamiltonian,
)
from .moments import FRMoments

__all__ = [
    "QuadratureConfig",
    "QuadratureResult",
    "quadrature_moments",
    "oracle_slutsky_fd",
]


@dataclass(frozen=True)
class QuadratureConfig:
    nodes: int = 256
    eps_clip: float = 1e-12
    ref_goods: tuple = (0,)
    check_convergence: bool = False

    def __post_init__(self):
        if self.nodes < 64:
            raise ConfigError("quadrature needs at least 64 nodes per axis")
        if not 0 < self.eps_clip < 1e-6:
            raise ConfigError("eps_clip outside sane range")


@dataclass
class QuadratureResult:
    Z: float
    log_Z: float
    mean: np.ndarray                 # (N, M)
    raw_second_same: np.ndarray      # (N, M, M)
    cov_same: np.ndarray             # (N, M, M) connected
    gamma_logz: np.ndarray           # (N,) d log Z / d w^alpha
    fr: Optional[FRMoments]
    raw_second_cross: Optional[np.ndarray] = None   # (M, M), N=2 only
    cov_cross: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)


def _check_size(spec: ModelSpec):
    N, M = spec.num_agents, spec.num_goods
    if not ((N == 1 and M in (2, 3)) or (N == 2 and M == 2)):
        raise UnsupportedSize(
            f"quadrature oracle supports N=1, M in {{2,3}} or N=2, M=2; "
            f"got N={N}, M={M}"
        )
    if spec.decision_mode != "global":
        raise VariantError("quadrature oracle requires global decision mode")
    if math.isinf(spec.beta):
        raise ConfigError("quadrature oracle requires finite beta")


def _utility_batch(spec: ModelSpec, X: np.ndarray) -> np.ndarray:
    """Global utility for a batch of allocations X with shape (B, N, M)."""
    a = spec.per_agent_preferences  # (N, M)
    logx = np.log(X)
    inter = spec.interaction
    if isinstance(inter, NonInteracting):
        return np.sum(a[None] * logx, axis=(1, 2))
    if isinstance(inter, MeanFieldPreference):
        N = X.shape[1]
        xbar = X.mean(axis=1)          # (B, M)
        lbar = logx.mean(axis=1)
        amp = 1.0 + inter.c * xbar**inter.k
        return N * np.sum(a[0][None] * amp * lbar, axis=1)
    if isinstance(inter, PairwiseHamiltonian):
        N = X.shape[1]
        xr = X**inter.rho
        m = xr.sum(axis=1)             # (B, M)
        q = (xr**2).sum(axis=1)
        base = np.sum(a[None] * logx, axis=(1, 2))
        return base + inter.J / (2.0 * N) * np.sum(a[0][None] * (m**2 - q), axis=1)
    raise VariantError(f"unsupported interaction {type(inter).__name__}")


def _gradient_batch(spec: ModelSpec, X: np.ndarray) -> np.ndarray:
    """dU/dx per agent/good for a batch, shape (B, N, M)."""
    a = spec.per_agent_preferences
    inter = spec.interaction
    if isinstance(inter, NonInteracting):
        return a[None] / X
    if isinstance(inter, MeanFieldPreference):
        xbar = X.mean(axis=1)
        lbar = np.log(X).mean(axis=1)
        amp = 1.0 + inter.c * xbar**inter.k
        direct = a[0][None, None] * amp[:, None, :] / X
        if inter.c == 0.0 or inter.k == 0.0:
            return direct
        feedback = (
            a[0][None] * inter.c * inter.k * xbar ** (inter.k - 1.0) * lbar
        )
        return direct + feedback[:, None, :]
    if isinstance(inter, PairwiseHamiltonian):
        N = X.shape[1]
        xr = X**inter.rho
        m = xr.sum(axis=1)
        return a[None] / X + (
            inter.J / N * a[None] * inter.rho * X ** (inter.rho - 1.0)
            * (m[:, None, :] - xr)
        )
    raise VariantError(f"unsupported interaction {type(inter).__name__}")


def _build_grid(spec: ModelSpec, budgets, cfg: QuadratureConfig):
    """(X, log_weight) tensor grid over the free coordinates.

    X has shape (B, N, M); log_weight includes the Gauss-Legendre weights,
    interval Jacobians, and the 1/p_M elimination factor per agent.
    """
    N, M = spec.num_agents, spec.num_goods
    p = spec.prices
    t, wt = leggauss(cfg.nodes)
    # affine map helper: [-1, 1] -> (lo, hi)
    def mapped(lo, hi):
        mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
        return mid + half * t, np.log(wt) + np.log(half)

    if N == 1 and M == 2:
        w = budgets[0]
        x1, lw = mapped(0.0, w / p[0])
        x2 = (w - p[0] * x1) / p[1]
        X = np.stack([x1, x2], axis=-1)[:, None, :]
        log_w = lw - np.log(p[1])
    elif N == 1 and M == 3:
        w = budgets[0]
        x1, lw1 = mapped(0.0, w / p[0])
        rows_x, rows_lw = [], []
        for xi, lwi in zip(x1, lw1):
            hi = (w - p[0] * xi) / p[1]
            x2, lw2 = mapped(0.0, hi)
            x3 = (w - p[0] * xi - p[1] * x2) / p[2]
            rows_x.append(np.stack([np.full_like(x2, xi), x2, x3], axis=-1))
            rows_lw.append(lwi + lw2)
        X = np.concatenate(rows_x, axis=0)[:, None, :]
        log_w = np.concatenate(rows_lw, axis=0) - np.log(p[2])
    else:  # N == 2, M == 2
        x1a, lwa = mapped(0.0, budgets[0] / p[0])
        x1b, lwb = mapped(0.0, budgets[1] / p[0])
        A, Bm = np.meshgrid(x1a, x1b, indexing="ij")
        LA, LB = np.meshgrid(lwa, lwb, indexing="ij")
        x2a = (budgets[0] - p[0] * A) / p[1]
        x2b = (budgets[1] - p[0] * Bm) / p[1]
        X = np.stack(
            [
                np.stack([A.ravel(), x2a.ravel()], axis=-1),
                np.stack([Bm.ravel(), x2b.ravel()], axis=-1),
            ],
            axis=1,
        )
        log_w = (LA + LB).ravel() - 2.0 * np.log(p[1])
    return np.clip(X, cfg.eps_clip, None), log_w


def _log_partition(spec: ModelSpec, budgets, cfg: QuadratureConfig) -> float:
    X, log_w = _build_grid(spec, budgets, cfg)
    return float(logsumexp(spec.beta * _utility_batch(spec, X) + log_w))


def _moments_once(spec: ModelSpec, cfg: QuadratureConfig):
    N, M = spec.num_agents, spec.num_goods
    X, log_w = _build_grid(spec, spec.budgets, cfg)
    logits = spec.beta * _utility_batch(spec, X) + log_w
    log_Z = float(logsumexp(logits))
    prob = np.exp(logits - log_Z)          # normalized quadrature measure

    mean = np.einsum("b,bnm->nm", prob, X)
    raw_same = np.einsum("b,bni,bnj->nij", prob, X, X)
    cov_same = raw_same - np.einsum("ni,nj->nij", mean, mean)

    G = _gradient_batch(spec, X)

    raw_cross = cov_cross = None
    if N == 2:
        rc = np.einsum("b,bi,bj->ij", prob, X[:, 0, :], X[:, 1, :])
        raw_cross = 0.5 * (rc + rc.T) if _identical_agents(spec) else rc
        cov_cross = raw_cross - 0.5 * (
            np.outer(mean[0], mean[1]) + np.outer(mean[1], mean[0])
        )

    fr = _fr_container(spec, cfg, prob, X, G, mean, cov_same, cov_cross)
    return log_Z, mean, raw_same, cov_same, raw_cross, cov_cross, fr


def _identical_agents(spec: ModelSpec) -> bool:
    return (
        spec.num_agents > 1
        and np.ptp(spec.budgets) == 0.0
        and np.ptp(spec.per_agent_preferences, axis=0).max() == 0.0
    )


def _fr_container(spec, cfg, prob, X, G, mean, cov_same, cov_cross):
    N, M = spec.num_agents, spec.num_goods
    ks = tuple(cfg.ref_goods)
    K = len(ks)
    if N == 1:
        g_mean = np.empty((K, 1))
        xg = np.empty((K, 1, M))
        xxg = np.empty((K, 1, M, M))
        for t, k in enumerate(ks):
            gk = G[:, 0, k]
            g_mean[t, 0] = prob @ gk
            xg[t, 0] = np.einsum("b,bi->i", prob * gk, X[:, 0, :])
            xxg[t, 0] = np.einsum("b,bi,bj->ij", prob * gk, X[:, 0, :], X[:, 0, :])
        return FRMoments(
            kind="per_agent", ref_goods=ks, beta=spec.beta, prices=spec.prices,
            num_agents=1, mean_x=mean, cov_same=cov_same,
            g_mean=g_mean, xg_same=xg, xxg_same=xxg,
        )
    if not _identical_agents(spec):
        return None
    # pooled layout over the two agents, cross blocks over ordered pairs
    g_mean = np.empty(K)
    xg_same = np.empty((K, M))
    xg_cross = np.empty((K, M))
    xxg_same = np.empty((K, M, M))
    xxg_cross = np.empty((K, M, M))
    for t, k in enumerate(ks):
        acc_g = 0.0
        acc_xgs = np.zeros(M)
        acc_xgc = np.zeros(M)
        acc_xxgs = np.zeros((M, M))
        acc_xxgc = np.zeros((M, M))
        for gamma in range(N):
            gk = G[:, gamma, k]
            acc_g += prob @ gk
            acc_xgs += np.einsum("b,bi->i", prob * gk, X[:, gamma, :])
            acc_xxgs += np.einsum(
                "b,bi,bj->ij", prob * gk, X[:, gamma, :], X[:, gamma, :]
            )
            for alpha in range(N):
                if alpha == gamma:
                    continue
                acc_xgc += np.einsum("b,bi->i", prob * gk, X[:, alpha, :])
                acc_xxgc += np.einsum(
                    "b,bi,bj->ij", prob * gk, X[:, alpha, :], X[:, gamma, :]
                )
        g_mean[t] = acc_g / N
        xg_same[t] = acc_xgs / N
        xxg_same[t] = acc_xxgs / N
        xg_cross[t] = acc_xgc / (N * (N - 1))
        xxg_cross[t] = acc_xxgc / (N * (N - 1))
    pooled_mean = mean.mean(axis=0)
    pooled_cov_same = cov_same.mean(axis=0) + (
        np.einsum("ni,nj->ij", mean, mean) / N - np.outer(pooled_mean, pooled_mean)
    )
    # raw cross second moment minus pooled mean outer product
    raw_cross = cov_cross + 0.5 * (
        np.outer(mean[0], mean[1]) + np.outer(mean[1], mean[0])
    )
    pooled_cov_cross = raw_cross - np.outer(pooled_mean, pooled_mean)
    return FRMoments(
        kind="pooled", ref_goods=ks, beta=spec.beta, prices=spec.prices,
        num_agents=N, mean_x=pooled_mean, cov_same=pooled_cov_same,
        cov_cross=pooled_cov_cross, g_mean=g_mean,
        xg_same=xg_same, xg_cross=xg_cross,
        xxg_same=xxg_same, xxg_cross=xxg_cross,
    )


def quadrature_moments(spec: ModelSpec, cfg: QuadratureConfig = QuadratureConfig()) -> QuadratureResult:
    """Exact (to quadrature accuracy) moments of the Boltzmann measure.

    gamma_logz is the budget sensitivity d log Z / d w^alpha by central
    difference, an independent route to the Gamma factor that multiplies
    connected correlations in the fluctuation-response formula.  With
    check_convergence=True the node count is doubled once and a relative
    mean drift above 1e-8 raises NoConvergence.
    """
    _check_size(spec)
    log_Z, mean, raw_same, cov_same, raw_cross, cov_cross, fr = _moments_once(
        spec, cfg
    )
    diagnostics = {"nodes": cfg.nodes}
    if cfg.check_convergence:
        cfg2 = QuadratureConfig(
            nodes=2 * cfg.nodes, eps_clip=cfg.eps_clip, ref_goods=cfg.ref_goods
        )
        _, mean2, *_ = _moments_once(spec, cfg2)
        drift = np.max(np.abs(mean2 - mean) / np.maximum(np.abs(mean2), 1e-300))
        if drift > 1e-8:
            raise NoConvergence(
                "quadrature means not converged under node doubling",
                residuals={"mean_drift": float(drift)},
            )
        diagnostics["node_doubling_drift"] = float(drift)

    gamma = np.empty(spec.num_agents)
    for alpha in range(spec.num_agents):
        h = 1e-5 * spec.budgets[alpha]
        wp = spec.budgets.copy()
        wm = spec.budgets.copy()
        wp[alpha] += h
        wm[alpha] -= h
        gamma[alpha] = (
            _log_partition(spec, wp, cfg) - _log_partition(spec, wm, cfg)
        ) / (2 * h)

    return QuadratureResult(
        Z=math.exp(log_Z),
        log_Z=log_Z,
        mean=mean,
        raw_second_same=raw_same,
        cov_same=cov_same,
        gamma_logz=gamma,
        fr=fr,
        raw_second_cross=raw_cross,
        cov_cross=cov_cross,
        diagnostics=diagnostics,
    )


def oracle_slutsky_fd(spec: ModelSpec, cfg: QuadratureConfig = QuadratureConfig(),
                      step: float = 1e-4) -> np.ndarray:
    """Per-agent Slutsky matrices straight from the definition.

    S^a_ij = d<x_i^a>/dp_j + sum_g <x_j^g> d<x_i^a>/dw^g, derivatives by
    central differences of quadrature means; every budget is compensated,
    which reduces to the textbook single-agent form at N = 1.  This route
    never touches the fluctuation-response machinery and anchors its
    correctness.
    """
    _check_size(spec)
    N, M = spec.num_agents, spec.num_goods

    def means_at(prices=None, budgets=None):
        s = spec if prices is None else spec.with_prices(prices)
        X, log_w = _build_grid(s, s.budgets if budgets is None else budgets, cfg)
        logits = s.beta * _utility_batch(s, X) + log_w
        prob = np.exp(logits - logsumexp(logits))
        return np.einsum("b,bnm->nm", prob, X)

    base = means_at()
    S = np.empty((N, M, M))
    dmean_dp = np.empty((M, N, M))     # j, alpha, i
    for j in range(M):
        h = step * spec.prices[j]
        pp = spec.prices.copy()
        pm = spec.prices.copy()
        pp[j] += h
        pm[j] -= h
        dmean_dp[j] = (means_at(prices=pp) - means_at(prices=pm)) / (2 * h)
    dmean_dw = np.empty((N, N, M))     # alpha(perturbed), agent, i
    for alpha in range(N):
        h = step * spec.budgets[alpha]
        wp = spec.budgets.copy()
        wm = spec.budgets.copy()
        wp[alpha] += h
        wm[alpha] -= h
        dmean_dw[alpha] = (means_at(budgets=wp) - means_at(budgets=wm)) / (2 * h)
    for alpha in range(N):
        for i in range(M):
            for j in range(M):
                S[alpha, i, j] = dmean_dp[j, alpha, i] + sum(
                    base[gamma, j] * dmean_dw[gamma, alpha, i]
                    for gamma in range(N)
                )
    return S
