"""Metropolis-Hastings chains for the hard- and soft-budget ensembles.

A sweep is N single-agent steps on uniformly random agents.  Proposals
are multiplicative log-normal moves; the hard-budget (canonical) kernel
rescales each proposal back onto the agent's budget plane, the
soft-budget (grand-canonical) kernel does not and instead weighs the
spend change with a chemical potential mu.

All randomness is pre-drawn in blocks from one PCG64 stream per chain,
so a chain is a pure function of (spec, config) and the compiled and
pure-Python kernels produce bit-identical trajectories.  Running the
same config against a perturbed spec reuses the identical draw sequence,
which is what makes the pathwise derivative estimates low-variance.

Observable accumulation is chunked: snapshots are buffered and reduced
with vectorized einsums every few hundred measurements, including the
mixed utility-gradient moments that feed the fluctuation-response
Slutsky assembly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .analytics import solve_saddle
from .backend import BACKEND, kernels
from .errors import CalibrationFailure, ConfigError, SlutskyLabError
from .model import (
    RESYNC_INTERVAL,
    MeanFieldPreference,
    ModelSpec,
    NonInteracting,
    PairwiseHamiltonian,
    herfindahl,
)
from .moments import FRMoments
from .quadrature import _gradient_batch
from .slutsky import SlutskyEstimate, slutsky_metrics

__all__ = [
    "ChainConfig",
    "ObservableSet",
    "propose_move",
    "acceptance_log_ratio",
    "run_chain",
    "run_grand_canonical_chain",
    "pathwise_slutsky",
]

_GEWEKE_BINS = 40
_CHUNK = 512           # snapshots buffered between reductions
_BLOCK_STEPS = 65536   # target pre-drawn random-block size in steps


@dataclass(frozen=True)
class ChainConfig:
    seed: int
    measure_sweeps: int
    burn_in_sweeps: Optional[int] = None   # default: 20% of the total run
    thinning: int = 1
    proposal_sigma: float = 1.0
    batch_count: int = 16
    fr_reference_goods: tuple = (0,)
    accumulate_fr: bool = True
    record_trace: bool = False

    def __post_init__(self):
        if self.measure_sweeps <= 0:
            raise ConfigError("measure_sweeps must be positive")
        if self.thinning < 1:
            raise ConfigError("thinning stride must be >= 1")
        if self.proposal_sigma <= 0:
            raise ConfigError("proposal_sigma must be positive")
        if self.batch_count < 8:
            raise ConfigError("batch_count must be >= 8")
        if self.measure_sweeps < self.thinning * self.batch_count:
            raise ConfigError(
                "measure_sweeps must be >= thinning * batch_count"
            )
        if self.burn_in_sweeps is not None and self.burn_in_sweeps < 0:
            raise ConfigError("burn_in_sweeps must be nonnegative")
        if len(self.fr_reference_goods) == 0:
            raise ConfigError("need at least one reference good")

    @property
    def burn_in(self) -> int:
        if self.burn_in_sweeps is not None:
            return self.burn_in_sweeps
        return self.measure_sweeps // 4     # 20% of (burn + measure)


@dataclass
class ObservableSet:
    mean_x: np.ndarray                 # (N, M)
    se_mean_x: np.ndarray
    cov_same: np.ndarray               # (M, M) agent-averaged connected block
    se_cov_same: np.ndarray
    cov_cross: Optional[np.ndarray]    # (M, M) cross-agent-averaged, None at N=1
    se_cov_cross: Optional[np.ndarray]
    herfindahl: float
    se_herfindahl: float
    acceptance_rate: float
    n_samples: int
    equilibrated: bool
    geweke_z: float
    batch_mean_x: np.ndarray           # (B, N, M)
    fr: Optional[FRMoments]
    fr_batches: Optional[tuple]
    budget_mean: Optional[float] = None
    se_budget_mean: Optional[float] = None
    budget_var: Optional[float] = None
    se_budget_var: Optional[float] = None
    mu: Optional[float] = None
    trace: Optional[dict] = None
    diagnostics: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# single-move reference operations (the kernels inline the same math)
# ---------------------------------------------------------------------------

def propose_move(basket, noise, prices, budget):
    """Log-normal kick rescaled back onto the budget plane."""
    y = np.asarray(basket, dtype=float) * np.exp(np.asarray(noise, dtype=float))
    return y * (budget / np.dot(prices, y))


def acceptance_log_ratio(spec: ModelSpec, alloc, agent: int, proposed) -> float:
    """log of the Metropolis ratio: beta dU + sum_i log(y_i / x_i)."""
    from .model import delta_utility

    y = np.asarray(proposed, dtype=float)
    du = delta_utility(spec, alloc, agent, y)
    return float(spec.beta * du + np.sum(np.log(y) - alloc.logx[agent]))


# ---------------------------------------------------------------------------
# chain state and accumulation
# ---------------------------------------------------------------------------

class _State:
    """Raw arrays the kernels mutate, with periodic cache resync."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator,
                 init_basket: Optional[np.ndarray] = None):
        N, M = spec.num_agents, spec.num_goods
        if init_basket is None:
            shares = rng.dirichlet(np.ones(M), size=N)
            self.x = np.ascontiguousarray(
                shares * spec.budgets[:, None] / spec.prices
            )
        else:
            self.x = np.ascontiguousarray(np.tile(init_basket, (N, 1)))
        # kernels take writable memoryviews; spec arrays are frozen
        self.prices = spec.prices.copy()
        self.budgets = spec.budgets.copy()
        self.prefs = np.array(spec.per_agent_preferences, dtype=float, order="C")
        inter = spec.interaction
        if isinstance(inter, NonInteracting):
            self.variant, self.c, self.k, self.J, self.rho = 0, 0.0, 0.0, 0.0, 1.0
        elif isinstance(inter, MeanFieldPreference):
            self.variant, self.c, self.k, self.J, self.rho = 1, inter.c, inter.k, 0.0, 1.0
        else:
            self.variant, self.c, self.k, self.J, self.rho = 2, 0.0, 0.0, inter.J, inter.rho
        self.selfish = 1 if spec.decision_mode == "selfish" else 0
        self.scratch = np.empty((2, M))
        self.accepted_since_resync = 0
        self.resync()

    def resync(self):
        self.logx = np.log(self.x)
        self.xbar = self.x.mean(axis=0)
        self.lbar = self.logx.mean(axis=0)
        if self.variant == 2:
            xp = self.x ** self.rho
            self.mpow = xp.sum(axis=0)
            self.qpow = (xp * xp).sum(axis=0)
        else:
            M = self.x.shape[1]
            self.mpow = np.zeros(M)
            self.qpow = np.zeros(M)
        self.accepted_since_resync = 0

    def maybe_resync(self):
        if self.accepted_since_resync >= RESYNC_INTERVAL:
            self.resync()


def _draw_block(rng, steps, N, M, sigma):
    agents = rng.integers(0, N, size=steps)
    xi = rng.standard_normal((steps, M)) * sigma
    logu = np.log(rng.random(steps))
    return agents, xi, logu


class _Accumulator:
    """Batched online moments over measurement snapshots."""

    def __init__(self, spec: ModelSpec, cfg: ChainConfig, total_snaps: int,
                 grand: bool):
        N, M = spec.num_agents, spec.num_goods
        B = cfg.batch_count
        K = len(cfg.fr_reference_goods)
        self.spec, self.cfg = spec, cfg
        self.total = total_snaps
        self.grand = grand
        self.bins = min(_GEWEKE_BINS, total_snaps)
        self.cnt = np.zeros(B)
        self.sx = np.zeros((B, N, M))
        self.sxx_agent = np.zeros((B, N, M, M))
        self.sxx_cross = np.zeros((B, M, M)) if N > 1 else None
        self.spend1 = np.zeros(B)
        self.spend2 = np.zeros(B)
        self.gcnt = np.zeros(self.bins)
        self.gsum = np.zeros((self.bins, M))
        # fluctuation-response layout: per-agent blocks for independent
        # agents, pooled same/cross blocks for identical interacting ones
        self.fr_layout = None
        if cfg.accumulate_fr and spec.decision_mode == "global" and not grand:
            if isinstance(spec.interaction, NonInteracting):
                self.fr_layout = "per_agent"
            elif N > 1 and self._identical_agents():
                # pooled FR needs cross-agent pairs; a lone interacting
                # agent has none, so only plain moments are reported
                self.fr_layout = "pooled"
        if self.fr_layout == "per_agent":
            self.g = np.zeros((B, K, N))
            self.xg = np.zeros((B, K, N, M))
            self.xxg = np.zeros((B, K, N, M, M))
        elif self.fr_layout == "pooled":
            self.g = np.zeros((B, K))
            self.xg_s = np.zeros((B, K, M))
            self.xxg_s = np.zeros((B, K, M, M))
            self.xg_c = np.zeros((B, K, M))
            self.xxg_c = np.zeros((B, K, M, M))
        self.buf = np.empty((min(_CHUNK, total_snaps), N, M))
        self.buf_idx = np.empty(min(_CHUNK, total_snaps), dtype=np.int64)
        self.pos = 0
        self.seen = 0
        if cfg.record_trace:
            self.trace_xbar = np.empty((total_snaps, M))
            self.trace_h = np.empty(total_snaps)
        else:
            self.trace_xbar = None

    def _identical_agents(self) -> bool:
        w = self.spec.budgets
        return bool(np.all(w == w[0])) and self.spec.preferences.ndim == 1

    def add(self, x: np.ndarray):
        self.buf[self.pos] = x
        self.buf_idx[self.pos] = self.seen
        self.pos += 1
        self.seen += 1
        if self.pos == self.buf.shape[0]:
            self.flush()

    def flush(self):
        if self.pos == 0:
            return
        X = self.buf[: self.pos]                       # (S, N, M)
        snap = self.buf_idx[: self.pos]
        N = X.shape[1]
        batch = snap * self.cfg.batch_count // self.total
        gbin = snap * self.bins // self.total
        pooled = X.mean(axis=1)                        # (S, M)
        np.add.at(self.gsum, gbin, pooled)
        np.add.at(self.gcnt, gbin, 1.0)
        if self.trace_xbar is not None:
            self.trace_xbar[snap[0]: snap[-1] + 1] = pooled
            for s in range(self.pos):
                self.trace_h[snap[s]] = herfindahl(pooled[s], self.spec.prices)
        grads = None
        if self.fr_layout is not None:
            grads = _gradient_batch(self.spec, X)      # (S, N, M)
        for b in np.unique(batch):
            sel = batch == b
            Xb = X[sel]
            self.cnt[b] += Xb.shape[0]
            self.sx[b] += Xb.sum(axis=0)
            per_agent_xx = np.einsum("sni,snj->nij", Xb, Xb)
            self.sxx_agent[b] += per_agent_xx
            if self.sxx_cross is not None:
                Sx = Xb.sum(axis=1)                    # (S, M)
                self.sxx_cross[b] += (
                    np.einsum("si,sj->ij", Sx, Sx) - per_agent_xx.sum(axis=0)
                ) / (N * (N - 1))
            if self.grand:
                spend = Xb @ self.spec.prices          # (S, N)
                self.spend1[b] += spend.sum()
                self.spend2[b] += np.sum(spend * spend)
            if self.fr_layout is None:
                continue
            Gb = grads[sel]
            for t, kref in enumerate(self.cfg.fr_reference_goods):
                gk = Gb[:, :, kref]                    # (S, N)
                if self.fr_layout == "per_agent":
                    self.g[b, t] += gk.sum(axis=0)
                    self.xg[b, t] += np.einsum("sn,snm->nm", gk, Xb)
                    self.xxg[b, t] += np.einsum("sni,snj,sn->nij", Xb, Xb, gk)
                else:
                    u = np.einsum("sn,snj->sj", gk, Xb)          # sum_g x_j g
                    xxg_same = np.einsum("sni,snj,sn->ij", Xb, Xb, gk)
                    Sx = Xb.sum(axis=1)
                    Gsum = gk.sum(axis=1)                        # (S,)
                    self.g[b, t] += Gsum.sum() / N
                    self.xg_s[b, t] += u.sum(axis=0) / N
                    self.xxg_s[b, t] += xxg_same / N
                    self.xg_c[b, t] += (
                        (Sx * Gsum[:, None] - u).sum(axis=0) / (N * (N - 1))
                    )
                    self.xxg_c[b, t] += (
                        np.einsum("si,sj->ij", Sx, u) - xxg_same
                    ) / (N * (N - 1))
        self.pos = 0

    # -- assembly ----------------------------------------------------------

    def _fr_container(self, sel) -> Optional[FRMoments]:
        """Moment bundle from a boolean batch selection."""
        if self.fr_layout is None:
            return None
        cfg, spec = self.cfg, self.spec
        n = self.cnt[sel].sum()
        mean = self.sx[sel].sum(axis=0) / n
        if self.fr_layout == "per_agent":
            raw = self.sxx_agent[sel].sum(axis=0) / n
            cov = raw - np.einsum("ni,nj->nij", mean, mean)
            return FRMoments(
                kind="per_agent", ref_goods=cfg.fr_reference_goods,
                beta=spec.beta, prices=spec.prices, num_agents=spec.num_agents,
                mean_x=mean, cov_same=cov,
                g_mean=self.g[sel].sum(axis=0) / n,
                xg_same=self.xg[sel].sum(axis=0) / n,
                xxg_same=self.xxg[sel].sum(axis=0) / n,
            )
        pooled = mean.mean(axis=0)
        raw_same = self.sxx_agent[sel].sum(axis=0).mean(axis=0) / n
        raw_cross = self.sxx_cross[sel].sum(axis=0) / n
        mm = np.outer(pooled, pooled)
        return FRMoments(
            kind="pooled", ref_goods=cfg.fr_reference_goods,
            beta=spec.beta, prices=spec.prices, num_agents=spec.num_agents,
            mean_x=pooled, cov_same=raw_same - mm, cov_cross=raw_cross - mm,
            g_mean=self.g[sel].sum(axis=0) / n,
            xg_same=self.xg_s[sel].sum(axis=0) / n,
            xxg_same=self.xxg_s[sel].sum(axis=0) / n,
            xg_cross=self.xg_c[sel].sum(axis=0) / n,
            xxg_cross=self.xxg_c[sel].sum(axis=0) / n,
        )

    def finalize(self, acceptance_rate: float, diagnostics: dict) -> ObservableSet:
        self.flush()
        spec, cfg = self.spec, self.cfg
        N, M = spec.num_agents, spec.num_goods
        B = cfg.batch_count
        n_tot = self.cnt.sum()
        batch_mean = self.sx / self.cnt[:, None, None]          # (B, N, M)
        mean = self.sx.sum(axis=0) / n_tot
        se_mean = batch_mean.std(axis=0, ddof=1) / math.sqrt(B)

        def connected_same(sel):
            n = self.cnt[sel].sum()
            m = self.sx[sel].sum(axis=0) / n
            raw = self.sxx_agent[sel].sum(axis=0) / n
            return (raw - np.einsum("ni,nj->nij", m, m)).mean(axis=0)

        def connected_cross(sel):
            n = self.cnt[sel].sum()
            m = self.sx[sel].sum(axis=0) / n
            raw = self.sxx_cross[sel].sum(axis=0) / n
            Sm = m.sum(axis=0)
            pair_mm = (np.outer(Sm, Sm) - np.einsum("ni,nj->ij", m, m)) / (
                N * (N - 1)
            )
            return raw - pair_mm

        one = np.ones(B, dtype=bool)
        eyes = np.eye(B, dtype=bool)
        cov_same = connected_same(one)
        cs_b = np.stack([connected_same(eyes[b]) for b in range(B)])
        se_cov_same = cs_b.std(axis=0, ddof=1) / math.sqrt(B)
        cov_cross = se_cov_cross = None
        if self.sxx_cross is not None:
            cov_cross = connected_cross(one)
            cc_b = np.stack([connected_cross(eyes[b]) for b in range(B)])
            se_cov_cross = cc_b.std(axis=0, ddof=1) / math.sqrt(B)

        h = herfindahl(mean.mean(axis=0), spec.prices)
        h_b = np.array(
            [herfindahl(batch_mean[b].mean(axis=0), spec.prices) for b in range(B)]
        )
        se_h = float(h_b.std(ddof=1) / math.sqrt(B))

        # Geweke-style drift flag: first 10% vs last 50% of the window
        nb = self.bins
        lo = max(1, nb // 10)
        hi = nb // 2
        m_lo = self.gsum[:lo].sum(axis=0) / self.gcnt[:lo].sum()
        m_hi = self.gsum[nb - hi:].sum(axis=0) / self.gcnt[nb - hi:].sum()
        bm_lo = self.gsum[:lo] / self.gcnt[:lo, None]
        bm_hi = self.gsum[nb - hi:] / self.gcnt[nb - hi:, None]
        v = (
            bm_lo.var(axis=0, ddof=1) / lo + bm_hi.var(axis=0, ddof=1) / hi
            if lo > 1
            else bm_hi.var(axis=0, ddof=1) * (1.0 / hi + 1.0)
        )
        z = np.max(np.abs(m_lo - m_hi) / np.sqrt(np.maximum(v, 1e-300)))

        budget_mean = se_bmean = budget_var = se_bvar = None
        if self.grand:
            # numpy scalars: a diverged tuning chain overflows to inf
            # instead of raising, so the calibrator can still inspect it
            ns = n_tot * N
            s1 = self.spend1.sum() / ns
            budget_mean = float(s1)
            budget_var = float(self.spend2.sum() / ns - np.float64(s1) ** 2)
            m_b = self.spend1 / (self.cnt * N)
            v_b = self.spend2 / (self.cnt * N) - m_b ** 2
            se_bmean = float(m_b.std(ddof=1) / math.sqrt(B))
            se_bvar = float(v_b.std(ddof=1) / math.sqrt(B))

        fr = self._fr_container(one)
        fr_batches = None
        if fr is not None:
            fr_batches = tuple(self._fr_container(eyes[b]) for b in range(B))

        trace = None
        if self.trace_xbar is not None:
            trace = {
                "sweep": np.arange(self.total) * cfg.thinning,
                "mean_basket": self.trace_xbar,
                "herfindahl": self.trace_h,
            }

        return ObservableSet(
            mean_x=mean, se_mean_x=se_mean,
            cov_same=cov_same, se_cov_same=se_cov_same,
            cov_cross=cov_cross, se_cov_cross=se_cov_cross,
            herfindahl=float(h), se_herfindahl=se_h,
            acceptance_rate=acceptance_rate,
            n_samples=int(n_tot),
            equilibrated=bool(z < 3.0), geweke_z=float(z),
            batch_mean_x=batch_mean,
            fr=fr, fr_batches=fr_batches,
            budget_mean=budget_mean, se_budget_mean=se_bmean,
            budget_var=budget_var, se_budget_var=se_bvar,
            trace=trace, diagnostics=diagnostics,
        )


# ---------------------------------------------------------------------------
# chain drivers
# ---------------------------------------------------------------------------

def _run(spec: ModelSpec, cfg: ChainConfig, grand: bool, mu: float,
         init_basket: Optional[np.ndarray] = None) -> ObservableSet:
    if math.isinf(spec.beta):
        raise ConfigError("sampling requires finite beta")
    N, M = spec.num_agents, spec.num_goods
    rng = np.random.default_rng(cfg.seed)
    st = _State(spec, rng, init_basket)

    def kernel(agents, xi, logu):
        if grand:
            acc = kernels.run_block_grand(
                st.x, st.logx, st.xbar, st.lbar, st.mpow, st.qpow,
                st.prices, mu, st.prefs, spec.beta, st.variant,
                st.c, st.k, st.J, st.rho, st.selfish,
                agents, xi, logu, st.scratch,
            )
        else:
            acc = kernels.run_block_canonical(
                st.x, st.logx, st.xbar, st.lbar, st.mpow, st.qpow,
                st.prices, st.budgets, st.prefs, spec.beta, st.variant,
                st.c, st.k, st.J, st.rho, st.selfish,
                agents, xi, logu, st.scratch,
            )
        st.accepted_since_resync += acc
        st.maybe_resync()
        return acc

    # burn-in: fixed sweep-block partition, no measurements
    burn_sweeps = cfg.burn_in
    block_sweeps = max(1, _BLOCK_STEPS // N)
    done = 0
    while done < burn_sweeps:
        sw = min(block_sweeps, burn_sweeps - done)
        kernel(*_draw_block(rng, sw * N, N, M, cfg.proposal_sigma))
        done += sw

    # measurement: snapshot every `thinning` sweeps
    total_snaps = cfg.measure_sweeps // cfg.thinning
    acc_obs = _Accumulator(spec, cfg, total_snaps, grand)
    steps_per_snap = cfg.thinning * N
    group = max(1, _BLOCK_STEPS // steps_per_snap)
    accepted = 0
    snaps = 0
    acc_trace = np.empty(total_snaps) if cfg.record_trace else None
    while snaps < total_snaps:
        g = min(group, total_snaps - snaps)
        agents, xi, logu = _draw_block(
            rng, g * steps_per_snap, N, M, cfg.proposal_sigma
        )
        for s in range(g):
            lo, hi = s * steps_per_snap, (s + 1) * steps_per_snap
            accepted += kernel(agents[lo:hi], xi[lo:hi], logu[lo:hi])
            acc_obs.add(st.x)
            if acc_trace is not None:
                acc_trace[snaps + s] = accepted / float((snaps + s + 1) * steps_per_snap)
        snaps += g

    diagnostics = {
        "backend": BACKEND,
        "burn_in_sweeps": burn_sweeps,
        "cache_residual": _cache_residual(st),
    }
    if not grand:
        spent = st.x @ spec.prices
        diagnostics["budget_residual"] = float(
            np.max(np.abs(spent - spec.budgets) / spec.budgets)
        )
    rate = accepted / float(total_snaps * steps_per_snap)
    obs = acc_obs.finalize(rate, diagnostics)
    if obs.trace is not None:
        obs.trace["sweep"] = burn_sweeps + (np.arange(total_snaps) + 1) * cfg.thinning
        obs.trace["acceptance"] = acc_trace
    if grand:
        obs.mu = mu
    return obs


def _cache_residual(st: _State) -> float:
    xbar = st.x.mean(axis=0)
    return float(np.max(np.abs(st.xbar - xbar) / np.maximum(np.abs(xbar), 1e-300)))


def run_chain(spec: ModelSpec, cfg: ChainConfig) -> ObservableSet:
    """Hard-budget chain; every visited state satisfies the budgets exactly."""
    return _run(spec, cfg, grand=False, mu=0.0)


def _mu_warm_start(spec: ModelSpec) -> float:
    a = spec.per_agent_preferences.mean(axis=0)
    w = float(spec.budgets.mean())
    return float(np.sum(1.0 + spec.beta * a) / (spec.beta * w))


def run_grand_canonical_chain(spec: ModelSpec, cfg: ChainConfig,
                              tol: float = 1e-2) -> ObservableSet:
    """Soft-budget chain with the chemical potential calibrated by secant.

    mu is tuned on shortened same-seed chains until the realized mean
    budget is within `tol` of the target; the tuning chains are doubled
    in length (up to the full measurement budget) whenever their error
    bar cannot resolve the tolerance.  CalibrationFailure after 50 chain
    evaluations.

    With interactions on, the soft-budget measure is only metastable:
    states with a mean basket past the spinodal run away because the
    preference amplification outgrows the linear budget penalty.  The
    chain is therefore seeded at the saddle-point basket with the
    saddle-point mu (exact at N -> infinity), secant updates are kept
    inside a trust region, and a tuning chain that leaves the basin is
    discarded in favour of a stiffer mu instead of poisoning the secant.
    """
    w_target = spec.common_budget
    min_sweeps = cfg.thinning * cfg.batch_count
    sweeps = min(cfg.measure_sweeps, max(cfg.measure_sweeps // 8, min_sweeps))
    evals = 0

    def realized(mu, config, quiet=False):
        nonlocal evals
        evals += 1
        if evals > 50:
            raise CalibrationFailure(
                f"chemical potential not calibrated after {evals - 1} chains"
            )
        if quiet:
            # tuning chains at an uncalibrated mu may overflow; silence
            # numpy so only the guarded spend check sees the runaway
            with np.errstate(all="ignore"):
                return _run(spec, config, grand=True, mu=mu,
                            init_basket=init_basket)
        return _run(spec, config, grand=True, mu=mu, init_basket=init_basket)

    def short(n_sweeps):
        return replace(
            cfg, measure_sweeps=n_sweeps, accumulate_fr=False, record_trace=False
        )

    mu = _mu_warm_start(spec)
    init_basket = None
    inter = spec.interaction
    if isinstance(inter, MeanFieldPreference) and inter.c > 0:
        # seed at the unconcentrated stationary state: past the
        # transition the concentrated basket is not holdable at fixed mu
        # (the amplification outgrows the linear spend penalty), so the
        # soft-budget chain lives on the non-condensed branch
        try:
            sol = solve_saddle(spec, branch="non_condensed")
            mu, init_basket = sol.mu, sol.xbar
        except SlutskyLabError:
            pass
    mu_prev = f_prev = None

    def secant_step(mu_now, f_now, spend):
        nonlocal mu_prev, f_prev
        if f_prev is None or f_now == f_prev:
            # spend scales like 1/mu at weak coupling; nudge if flat
            nxt = mu_now * spend / w_target
            if nxt == mu_now:
                nxt = 1.05 * mu_now
        else:
            nxt = mu_now - f_now * (mu_now - mu_prev) / (f_now - f_prev)
        mu_prev, f_prev = mu_now, f_now
        # trust region: the spend response steepens near the spinodal
        return min(max(nxt, 0.5 * mu_now), 2.0 * mu_now)

    def out_of_basin(spend):
        """Rescue factor for mu when a chain left the metastable basin.

        A runaway (non-finite or huge spend) calls for a stiffer mu; a
        collapsed spend means mu was pushed too high and must relax.
        """
        if not np.isfinite(spend) or spend >= 50.0 * w_target:
            return 1.5
        if spend <= 0.02 * w_target:
            return 1.0 / 1.5
        return None

    while True:
        obs = realized(mu, short(sweeps), quiet=True)
        f = obs.budget_mean - w_target
        rescue = out_of_basin(obs.budget_mean)
        if rescue is not None:
            mu_prev = f_prev = None
            mu *= rescue
            continue
        if 3.0 * obs.se_budget_mean > tol * w_target and sweeps < cfg.measure_sweeps:
            sweeps = min(2 * sweeps, cfg.measure_sweeps)   # noise floor too high
            continue
        if abs(f) <= tol * w_target:
            break
        mu = secant_step(mu, f, obs.budget_mean)

    # full-length chain (with whatever trace/fr options cfg carries)
    while True:
        final = realized(mu, cfg)
        f = final.budget_mean - w_target
        rescue = out_of_basin(final.budget_mean)
        if rescue is not None:
            mu_prev = f_prev = None
            mu *= rescue
            continue
        if abs(f) <= tol * w_target:
            break
        mu = secant_step(mu, f, final.budget_mean)
    final.diagnostics["mu_evaluations"] = evals
    return final


def pathwise_slutsky(spec: ModelSpec, cfg: ChainConfig,
                     rel_step: float = 1e-2) -> SlutskyEstimate:
    """Common-random-number forward differences of perturbed chains.

    Runs one base chain, M chains with p_j -> p_j (1 + eps) and one with
    every budget scaled by (1 + eps), all on the identical draw sequence;
    assembles S^a_ij = d<x_i^a>/dp_j + <x_j^a> d<x_i^a>/dw^a with batch
    errors from the paired per-batch means.
    """
    if not (0.0 < rel_step < 0.1):
        raise ConfigError(f"rel_step must lie in (0, 0.1), got {rel_step}")
    if math.isinf(spec.beta):
        raise ConfigError("pathwise derivatives require finite beta")
    N, M = spec.num_agents, spec.num_goods
    base = run_chain(spec, cfg)
    price_obs = []
    for j in range(M):
        pj = spec.prices.copy()
        pj[j] *= 1.0 + rel_step
        price_obs.append(run_chain(spec.with_prices(pj), cfg))
    budget_obs = run_chain(spec.with_budgets(spec.budgets * (1.0 + rel_step)), cfg)

    def assemble(mean0, means_p, mean_w):
        # (N, M) means -> per-agent (N, M, M)
        S = np.empty((N, M, M))
        dw = (mean_w - mean0) / (rel_step * spec.budgets[:, None])   # (N, M)
        for j in range(M):
            dp = (means_p[j] - mean0) / (rel_step * spec.prices[j])
            S[:, :, j] = dp + mean0[:, j][:, None] * dw
        return S

    per_agent = assemble(base.mean_x, [o.mean_x for o in price_obs], budget_obs.mean_x)
    B = cfg.batch_count
    sb = np.stack([
        assemble(
            base.batch_mean_x[b],
            [o.batch_mean_x[b] for o in price_obs],
            budget_obs.batch_mean_x[b],
        ).mean(axis=0)
        for b in range(B)
    ])
    err = sb.std(axis=0, ddof=1) / math.sqrt(B)
    sbar = per_agent.mean(axis=0)
    return SlutskyEstimate(
        per_agent=per_agent,
        mean_individual=sbar,
        method="Pathwise",
        metrics=slutsky_metrics(sbar, spec.prices, stack=per_agent),
        errors=err,
        diagnostics={
            "rel_step": rel_step,
            "acceptance_rate": base.acceptance_rate,
            "backend": BACKEND,
        },
    )
