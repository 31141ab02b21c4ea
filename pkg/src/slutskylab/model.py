"""Market model: goods, agents, budgets and the utility landscape.

Agents hold baskets x^alpha of M goods with prices p and budget w^alpha.
Preferences are logarithmic; the package supports three utility variants:

* NonInteracting:        U = sum_{alpha,i} a_i log x_i^alpha
* MeanFieldPreference:   U = sum_{alpha,i} a_i [1 + c (xbar_i)^k] log x_i^alpha,
                         xbar_i the population-mean quantity of good i, so a
                         popular good becomes more attractive (herding).
* PairwiseHamiltonian:   U = sum a_i log x + (J/2N) sum_i a_i
                         sum_{alpha != gamma} (x_i^alpha x_i^gamma)^rho,
                         a symmetric mean-field coupling in quantities.

decision_mode selects the quantity agents optimize when moving: 'global'
scores moves by the change of the full U (including the feedback of the
agent's move on xbar), 'selfish' freezes xbar and scores only the agent's
own terms with constant coefficient a_i [1 + c (xbar_i)^k].

Everything here is a pure function of (ModelSpec, Allocation); the Monte
Carlo kernels inline the same arithmetic for speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import ConfigError, DimensionMismatch, NonPositiveQuantity

__all__ = [
    "NonInteracting",
    "MeanFieldPreference",
    "PairwiseHamiltonian",
    "Interaction",
    "ModelSpec",
    "Allocation",
    "global_utility",
    "delta_utility",
    "utility_gradient",
    "hessian_blocks",
    "herfindahl",
]

# Cached xbar / mean-log are refreshed from scratch after this many
# accepted moves to bound incremental-update drift.
RESYNC_INTERVAL = 10_000


@dataclass(frozen=True)
class NonInteracting:
    """Separable log-utility, no cross-agent terms."""


@dataclass(frozen=True)
class MeanFieldPreference:
    """Preference amplification a_i -> a_i [1 + c (xbar_i)^k]."""

    c: float
    k: float

    def __post_init__(self):
        if self.c < 0:
            raise ConfigError(f"herding strength c must be >= 0, got {self.c}")
        if self.k < 0:
            raise ConfigError(f"herding exponent k must be >= 0, got {self.k}")


@dataclass(frozen=True)
class PairwiseHamiltonian:
    """Mean-field pairwise coupling J_i^{alpha gamma} = a_i J / N.

    rho in (0, 1] is the power applied to each quantity in the pair term.
    Only the mean-field coupling is supported; general coupling matrices
    are out of scope.
    """

    J: float
    rho: float

    def __post_init__(self):
        if not (0.0 < self.rho <= 1.0):
            raise ConfigError(f"rho must lie in (0, 1], got {self.rho}")


Interaction = Union[NonInteracting, MeanFieldPreference, PairwiseHamiltonian]


def _as_vector(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise DimensionMismatch(f"{name}: expected shape ({n},), got {arr.shape}")
    return arr


@dataclass(frozen=True)
class ModelSpec:
    """Immutable description of one economy.

    prices: (M,) strictly positive.
    preferences: (M,) shared, or (N, M) per-agent (NonInteracting only).
    budgets: (N,) strictly positive.
    beta: intensity of choice; positive float or math.inf (analytics only,
        samplers require finite beta).
    """

    prices: np.ndarray
    preferences: np.ndarray
    budgets: np.ndarray
    beta: float
    interaction: Interaction = field(default_factory=NonInteracting)
    decision_mode: str = "global"

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.prices, dtype=float))
        w = np.atleast_1d(np.asarray(self.budgets, dtype=float))
        a = np.asarray(self.preferences, dtype=float)
        M, N = p.shape[0], w.shape[0]
        if a.ndim == 0:
            a = np.full(M, float(a))
        if a.ndim == 1 and a.shape[0] != M:
            raise DimensionMismatch(
                f"preferences: expected ({M},) or ({N},{M}), got {a.shape}"
            )
        if a.ndim == 2:
            if a.shape != (N, M):
                raise DimensionMismatch(
                    f"per-agent preferences: expected ({N},{M}), got {a.shape}"
                )
            if not isinstance(self.interaction, NonInteracting):
                raise ConfigError(
                    "per-agent preferences are supported for NonInteracting only "
                    "(interacting variants share a_i through the mean field)"
                )
        if np.any(p <= 0):
            raise NonPositiveQuantity("all prices must be strictly positive")
        if np.any(a <= 0):
            raise NonPositiveQuantity("all preferences must be strictly positive")
        if np.any(w <= 0):
            raise NonPositiveQuantity("all budgets must be strictly positive")
        if not (self.beta > 0):
            raise ConfigError(f"beta must be positive (or inf), got {self.beta}")
        if self.decision_mode not in ("global", "selfish"):
            raise ConfigError(f"unknown decision_mode {self.decision_mode!r}")
        if self.decision_mode == "selfish" and not isinstance(
            self.interaction, MeanFieldPreference
        ):
            raise ConfigError(
                "decision_mode='selfish' is only valid with MeanFieldPreference"
            )
        for arr in (p, a, w):
            arr.setflags(write=False)
        object.__setattr__(self, "prices", p)
        object.__setattr__(self, "preferences", a)
        object.__setattr__(self, "budgets", w)
        object.__setattr__(self, "beta", float(self.beta))

    # -- shapes ------------------------------------------------------------
    @property
    def num_goods(self) -> int:
        return self.prices.shape[0]

    @property
    def num_agents(self) -> int:
        return self.budgets.shape[0]

    @property
    def per_agent_preferences(self) -> np.ndarray:
        """Preferences broadcast to shape (N, M)."""
        if self.preferences.ndim == 2:
            return self.preferences
        return np.broadcast_to(self.preferences, (self.num_agents, self.num_goods))

    @property
    def shared_preferences(self) -> np.ndarray:
        """The common (M,) preference vector; error if agents differ."""
        if self.preferences.ndim == 1:
            return self.preferences
        if np.all(self.preferences == self.preferences[0]):
            return self.preferences[0]
        raise ConfigError("operation requires agent-shared preferences")

    @property
    def common_budget(self) -> float:
        """The shared budget w; error if budgets are heterogeneous."""
        w = self.budgets
        if np.all(w == w[0]):
            return float(w[0])
        raise ConfigError("operation requires identical budgets")

    # -- convenience -------------------------------------------------------
    @classmethod
    def uniform(
        cls,
        num_goods: int,
        num_agents: int,
        budget: float,
        beta: float,
        interaction: Interaction = None,
        decision_mode: str = "global",
    ) -> "ModelSpec":
        """Economy with unit prices and preferences, identical budgets."""
        if interaction is None:
            interaction = NonInteracting()
        return cls(
            prices=np.ones(num_goods),
            preferences=np.ones(num_goods),
            budgets=np.full(num_agents, float(budget)),
            beta=beta,
            interaction=interaction,
            decision_mode=decision_mode,
        )

    def with_prices(self, prices) -> "ModelSpec":
        return ModelSpec(
            prices=prices,
            preferences=self.preferences,
            budgets=self.budgets,
            beta=self.beta,
            interaction=self.interaction,
            decision_mode=self.decision_mode,
        )

    def with_budgets(self, budgets) -> "ModelSpec":
        return ModelSpec(
            prices=self.prices,
            preferences=self.preferences,
            budgets=budgets,
            beta=self.beta,
            interaction=self.interaction,
            decision_mode=self.decision_mode,
        )

    def with_beta(self, beta: float) -> "ModelSpec":
        return ModelSpec(
            prices=self.prices,
            preferences=self.preferences,
            budgets=self.budgets,
            beta=beta,
            interaction=self.interaction,
            decision_mode=self.decision_mode,
        )

    def with_interaction(self, interaction: Interaction) -> "ModelSpec":
        return ModelSpec(
            prices=self.prices,
            preferences=self.preferences,
            budgets=self.budgets,
            beta=self.beta,
            interaction=interaction,
            decision_mode=self.decision_mode,
        )


class Allocation:
    """N x M quantity matrix with cached population means.

    Caches (xbar, mean log, and the rho-power sums for the Hamiltonian
    variant) are updated incrementally on accepted moves and recomputed
    from scratch every RESYNC_INTERVAL accepted updates so that float
    drift stays below 1e-12 relative.
    """

    def __init__(self, spec: ModelSpec, x: np.ndarray):
        x = np.array(x, dtype=float)
        if x.shape != (spec.num_agents, spec.num_goods):
            raise DimensionMismatch(
                f"allocation: expected {(spec.num_agents, spec.num_goods)}, "
                f"got {x.shape}"
            )
        if np.any(x < 0):
            raise NonPositiveQuantity("allocations must be nonnegative")
        self.spec = spec
        self.x = x
        self._updates_since_resync = 0
        self.resync()

    # -- construction ------------------------------------------------------
    @classmethod
    def even_split(cls, spec: ModelSpec) -> "Allocation":
        """Budget spread evenly over goods: x_i^a = w^a / (M p_i)."""
        M = spec.num_goods
        x = spec.budgets[:, None] / (M * spec.prices[None, :])
        return cls(spec, x)

    @classmethod
    def dirichlet(cls, spec: ModelSpec, rng: np.random.Generator) -> "Allocation":
        """Uniformly random budget shares on each agent's simplex."""
        shares = rng.dirichlet(np.ones(spec.num_goods), size=spec.num_agents)
        x = shares * spec.budgets[:, None] / spec.prices[None, :]
        return cls(spec, x)

    # -- caches ------------------------------------------------------------
    def resync(self) -> None:
        """Recompute every cache directly from x."""
        with np.errstate(divide="ignore"):
            self.logx = np.log(self.x)
        self.xbar = self.x.mean(axis=0)
        self.lbar = self.logx.mean(axis=0)
        inter = self.spec.interaction
        if isinstance(inter, PairwiseHamiltonian):
            xp = self.x ** inter.rho
            self.mpow = xp.sum(axis=0)
            self.qpow = (xp * xp).sum(axis=0)
        else:
            self.mpow = None
            self.qpow = None
        self._updates_since_resync = 0

    def apply_move(self, agent: int, new_basket: np.ndarray) -> None:
        """Replace one agent's basket, updating caches incrementally."""
        y = np.asarray(new_basket, dtype=float)
        if y.shape != (self.spec.num_goods,):
            raise DimensionMismatch("new basket has wrong length")
        if np.any(y <= 0):
            raise NonPositiveQuantity("new basket must be strictly positive")
        N = self.spec.num_agents
        old = self.x[agent].copy()
        dlog = np.log(y) - self.logx[agent]
        self.x[agent] = y
        self.logx[agent] += dlog
        self.xbar += (y - old) / N
        self.lbar += dlog / N
        inter = self.spec.interaction
        if isinstance(inter, PairwiseHamiltonian):
            po = old ** inter.rho
            pn = y ** inter.rho
            self.mpow += pn - po
            self.qpow += pn * pn - po * po
        self._updates_since_resync += 1
        if self._updates_since_resync >= RESYNC_INTERVAL:
            self.resync()

    # -- invariants --------------------------------------------------------
    def budget_residual(self) -> float:
        """max_alpha |p . x^alpha - w^alpha| / w^alpha."""
        spent = self.x @ self.spec.prices
        return float(np.max(np.abs(spent - self.spec.budgets) / self.spec.budgets))

    def cache_residual(self) -> float:
        """Worst relative drift of any cache against a fresh recompute."""
        xbar = self.x.mean(axis=0)
        lbar = np.log(self.x).mean(axis=0)
        r = np.max(np.abs(self.xbar - xbar) / np.maximum(np.abs(xbar), 1e-300))
        r = max(r, np.max(np.abs(self.lbar - lbar) / np.maximum(np.abs(lbar), 1.0)))
        return float(r)


def _require_positive(x: np.ndarray) -> None:
    if np.any(x <= 0):
        raise NonPositiveQuantity("utility requires strictly positive quantities")


def global_utility(spec: ModelSpec, alloc: Allocation) -> float:
    """Total utility U of the whole population (variant-dependent)."""
    x = alloc.x
    _require_positive(x)
    logx = np.log(x)
    inter = spec.interaction
    if isinstance(inter, NonInteracting):
        return float(np.sum(spec.per_agent_preferences * logx))
    a = spec.shared_preferences
    if isinstance(inter, MeanFieldPreference):
        xbar = x.mean(axis=0)
        weights = a * (1.0 + inter.c * xbar ** inter.k)
        return float(np.sum(weights * logx.sum(axis=0)))
    # PairwiseHamiltonian: sum_{alpha != gamma} (x^a x^g)^rho = m^2 - q
    N = spec.num_agents
    xp = x ** inter.rho
    m = xp.sum(axis=0)
    q = (xp * xp).sum(axis=0)
    pair = inter.J / (2.0 * N) * np.sum(a * (m * m - q))
    return float(np.sum(a * logx.sum(axis=0)) + pair)


def delta_utility(spec: ModelSpec, alloc: Allocation, agent: int, new_basket) -> float:
    """Utility change if `agent` moved to `new_basket`, in O(M).

    GlobalUtility mode returns exactly U(after) - U(before) using the
    cached xbar / mean-log; selfish mode scores only the agent's own terms
    with xbar frozen at its pre-move value.
    """
    y = np.asarray(new_basket, dtype=float)
    if y.shape != (spec.num_goods,):
        raise DimensionMismatch("new basket has wrong length")
    if np.any(y <= 0):
        raise NonPositiveQuantity("proposed basket must be strictly positive")
    x_old = alloc.x[agent]
    _require_positive(x_old)
    dlog = np.log(y) - alloc.logx[agent]
    inter = spec.interaction
    if isinstance(inter, NonInteracting):
        return float(np.dot(spec.per_agent_preferences[agent], dlog))
    a = spec.shared_preferences
    N = spec.num_agents
    if isinstance(inter, MeanFieldPreference):
        c, k = inter.c, inter.k
        if spec.decision_mode == "selfish":
            return float(np.sum(a * (1.0 + c * alloc.xbar**k) * dlog))
        nxbar = alloc.xbar + (y - x_old) / N
        nlbar = alloc.lbar + dlog / N
        terms = (1.0 + c * nxbar**k) * nlbar - (1.0 + c * alloc.xbar**k) * alloc.lbar
        return float(N * np.sum(a * terms))
    # PairwiseHamiltonian
    po = x_old ** inter.rho
    pn = y ** inter.rho
    nm = alloc.mpow + (pn - po)
    nq = alloc.qpow + (pn * pn - po * po)
    pair_delta = (nm * nm - nq) - (alloc.mpow * alloc.mpow - alloc.qpow)
    return float(np.sum(a * dlog) + inter.J / (2.0 * N) * np.sum(a * pair_delta))


def utility_gradient(spec: ModelSpec, alloc: Allocation) -> np.ndarray:
    """Exact gradient dU/dx_i^alpha, shape (N, M)."""
    x = alloc.x
    _require_positive(x)
    inter = spec.interaction
    if isinstance(inter, NonInteracting):
        return spec.per_agent_preferences / x
    a = spec.shared_preferences
    N = spec.num_agents
    if isinstance(inter, MeanFieldPreference):
        c, k = inter.c, inter.k
        xbar = x.mean(axis=0)
        lbar = np.log(x).mean(axis=0)
        direct = a * (1.0 + c * xbar**k) / x
        if k == 0.0 or c == 0.0:
            return direct
        feedback = a * c * k * xbar ** (k - 1.0) * lbar
        return direct + feedback[None, :]
    # PairwiseHamiltonian
    xp = x ** inter.rho
    m = xp.sum(axis=0)
    return a / x + (inter.J * inter.rho / N) * a * x ** (inter.rho - 1.0) * (
        m[None, :] - xp
    )


def hessian_blocks(spec: ModelSpec, xbar_star: np.ndarray):
    """Diagonal blocks (A, B) of the utility Hessian at a symmetric point.

    With every agent at the mean basket xbar*, the (MN) x (MN) Hessian of
    the MeanFieldPreference utility has same-agent blocks A + B and
    cross-agent blocks B, both diagonal in goods:

        A_ii = -a_i (1 + c xbar_i^k) / xbar_i^2
        B_ii = (k c / N) a_i xbar_i^{k-2} [2 + (k-1) log xbar_i]

    Returns (A, B) as M x M diagonal matrices, normalized so that the
    same-agent block is exactly A + B; the row sum over agent blocks is
    then A + N B, which matches finite differences of global_utility at
    any N (not only to leading order in 1/N).
    """
    from .errors import VariantError

    if not isinstance(spec.interaction, MeanFieldPreference):
        raise VariantError("hessian_blocks requires MeanFieldPreference")
    xbar = np.asarray(xbar_star, dtype=float)
    _require_positive(xbar)
    a = spec.shared_preferences
    c, k = spec.interaction.c, spec.interaction.k
    N = spec.num_agents
    A = -a * (1.0 + c * xbar**k) / xbar**2
    if c == 0.0 or k == 0.0:
        B = np.zeros_like(A)
    else:
        B = (k * c / N) * a * xbar ** (k - 2.0) * (2.0 + (k - 1.0) * np.log(xbar))
    return np.diag(A), np.diag(B)


def herfindahl(mean_basket: np.ndarray, prices: np.ndarray) -> float:
    """Rescaled Herfindahl index of budget shares.

    H~ = (sum_i s_i^2 - 1/M) / (1 - 1/M) with s_i the expenditure share
    of good i in the mean basket; 0 for a uniform basket, 1 when a single
    good carries all expenditure.
    """
    spend = np.asarray(mean_basket, dtype=float) * np.asarray(prices, dtype=float)
    total = spend.sum()
    if total <= 0:
        raise NonPositiveQuantity("mean basket has no positive expenditure")
    s = spend / total
    M = s.shape[0]
    if M == 1:
        return 1.0
    return float((np.sum(s * s) - 1.0 / M) / (1.0 - 1.0 / M))
