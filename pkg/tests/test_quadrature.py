"""Deterministic quadrature oracle: frozen small-economy values.

Ground truths here are hand-derived Dirichlet moments: with U = sum a_i
log x_i on the budget simplex, the budget shares y_i = p_i x_i / w are
Dirichlet(1 + beta a_i), so every moment the oracle produces has a
closed form to compare against.
"""

import numpy as np
import pytest

from slutskylab.errors import ConfigError, NoConvergence, UnsupportedSize, VariantError
from slutskylab.model import MeanFieldPreference, ModelSpec, NonInteracting
from slutskylab.quadrature import (
    QuadratureConfig,
    oracle_slutsky_fd,
    quadrature_moments,
)


def unit_spec(beta=1.0, M=2):
    return ModelSpec(
        prices=np.ones(M),
        preferences=np.ones(M),
        budgets=[1.0],
        beta=beta,
        interaction=NonInteracting(),
    )


# ---------------------------------------------------------------------------
# frozen instance: N=1, M=2, a=p=w=1, beta=1  (shares ~ Beta(2,2))
# ---------------------------------------------------------------------------

def test_partition_function_frozen():
    res = quadrature_moments(unit_spec())
    # Z = Gamma(2)Gamma(2)/Gamma(4) = 1/6
    assert res.Z == pytest.approx(1.0 / 6.0, rel=1e-12)
    assert res.log_Z == pytest.approx(-np.log(6.0), abs=1e-12)


def test_first_two_moments_frozen():
    res = quadrature_moments(unit_spec())
    assert res.mean[0] == pytest.approx([0.5, 0.5], abs=1e-12)
    # var of Beta(2,2) = 2*2/(4^2*5) = 0.05
    assert res.cov_same[0, 0, 0] == pytest.approx(0.05, abs=1e-12)
    assert res.cov_same[0, 0, 1] == pytest.approx(-0.05, abs=1e-12)


def test_gamma_both_routes_frozen():
    res = quadrature_moments(unit_spec(), QuadratureConfig(ref_goods=(0, 1)))
    # Gamma = (z0 - 1)/w = 3, from d log Z / d w (Z ~ w^3) and from <g_k>
    assert res.gamma_logz[0] == pytest.approx(3.0, rel=1e-6)
    for t in range(2):
        gamma_fr = res.fr.beta / res.fr.prices[t] * res.fr.g_mean[t, 0]
        assert gamma_fr == pytest.approx(3.0, rel=1e-12)


def test_beta_shares_general_parameters():
    # y1 ~ Beta(1 + beta a1, 1 + beta a2) for any (a, p, w, beta)
    spec = ModelSpec(prices=[1.2, 0.7], preferences=[2.0, 0.5], budgets=[3.0],
                     beta=1.7, interaction=NonInteracting())
    z = 1.0 + spec.beta * spec.preferences
    z0 = z.sum()
    res = quadrature_moments(spec)
    w, p = spec.budgets[0], spec.prices
    mean_x1 = (w / p[0]) * z[0] / z0
    var_x1 = (w / p[0]) ** 2 * z[0] * z[1] / (z0 ** 2 * (z0 + 1.0))
    # non-integer beta*a: integrand is not polynomial, so Gauss-Legendre
    # is merely fast-converging rather than exact
    assert res.mean[0, 0] == pytest.approx(mean_x1, rel=1e-8)
    assert res.cov_same[0, 0, 0] == pytest.approx(var_x1, rel=1e-7)


# ---------------------------------------------------------------------------
# M = 3 (nested triangular grid)
# ---------------------------------------------------------------------------

def test_three_goods_dirichlet_values():
    res = quadrature_moments(unit_spec(M=3), QuadratureConfig(nodes=96))
    # Dirichlet(2,2,2): Z = Gamma(2)^3/Gamma(6) = 1/120
    assert res.Z == pytest.approx(1.0 / 120.0, rel=1e-9)
    assert res.mean[0] == pytest.approx(np.full(3, 1.0 / 3.0), abs=1e-10)
    assert res.cov_same[0, 0, 0] == pytest.approx(2.0 / 63.0, rel=1e-8)
    gamma_fr = res.fr.beta / res.fr.prices[0] * res.fr.g_mean[0, 0]
    assert gamma_fr == pytest.approx(5.0, rel=1e-8)


def test_three_goods_covariance_structure():
    res = quadrature_moments(unit_spec(M=3), QuadratureConfig(nodes=96))
    C = res.cov_same[0]
    # rows sum to zero on the simplex (p = 1)
    assert np.max(np.abs(C.sum(axis=1))) < 1e-10
    assert np.allclose(C, C.T, atol=1e-12)


# ---------------------------------------------------------------------------
# N = 2 and the interacting container
# ---------------------------------------------------------------------------

def test_two_agent_factorizes_when_noninteracting():
    spec = ModelSpec(prices=[1.0, 1.0], preferences=[1.0, 1.0], budgets=[1.0, 1.0],
                     beta=1.0, interaction=NonInteracting())
    res = quadrature_moments(spec)
    assert res.mean == pytest.approx(np.full((2, 2), 0.5), abs=1e-10)
    # independent agents: cross-covariance vanishes
    assert np.max(np.abs(res.cov_cross)) < 1e-10
    # and Z factorizes into the single-agent value squared
    assert res.Z == pytest.approx((1.0 / 6.0) ** 2, rel=1e-9)


def test_two_agent_interacting_couples():
    spec = ModelSpec(prices=[1.0, 1.3], preferences=[1.0, 0.8], budgets=[2.0, 2.0],
                     beta=2.0, interaction=MeanFieldPreference(c=0.3, k=2.0))
    res = quadrature_moments(spec, QuadratureConfig(nodes=128))
    assert res.fr is not None and res.fr.kind == "pooled"
    assert np.max(np.abs(res.cov_cross)) > 1e-4       # genuinely coupled
    # agents identical: same marginal means
    assert res.mean[0] == pytest.approx(res.mean[1], rel=1e-10)


def test_two_agent_heterogeneous_has_no_pooled_container():
    spec = ModelSpec(prices=[1.0, 1.0], preferences=[1.0, 1.0], budgets=[1.0, 2.0],
                     beta=1.0, interaction=NonInteracting())
    res = quadrature_moments(spec, QuadratureConfig(nodes=96))
    assert res.fr is None


# ---------------------------------------------------------------------------
# convergence gate and guard rails
# ---------------------------------------------------------------------------

def test_node_doubling_gate_passes_smooth_case():
    res = quadrature_moments(unit_spec(), QuadratureConfig(check_convergence=True))
    assert res.diagnostics["node_doubling_drift"] < 1e-10


def test_doubling_nodes_is_stable():
    lo = quadrature_moments(unit_spec(), QuadratureConfig(nodes=128))
    hi = quadrature_moments(unit_spec(), QuadratureConfig(nodes=256))
    assert np.max(np.abs(lo.mean - hi.mean)) < 1e-12


@pytest.mark.parametrize("N,M", [(3, 2), (2, 3), (1, 4), (4, 4)])
def test_unsupported_sizes_rejected(N, M):
    spec = ModelSpec(prices=np.ones(M), preferences=np.ones(M),
                     budgets=np.ones(N), beta=1.0, interaction=NonInteracting())
    with pytest.raises(UnsupportedSize):
        quadrature_moments(spec)


def test_selfish_mode_rejected():
    spec = ModelSpec(prices=[1.0, 1.0], preferences=[1.0, 1.0], budgets=[1.0],
                     beta=1.0, interaction=MeanFieldPreference(c=0.1, k=2.0),
                     decision_mode="selfish")
    with pytest.raises(VariantError):
        quadrature_moments(spec)


def test_infinite_beta_rejected():
    with pytest.raises(ConfigError):
        quadrature_moments(unit_spec(beta=np.inf))


def test_config_validation():
    with pytest.raises(ConfigError):
        QuadratureConfig(nodes=32)
    with pytest.raises(ConfigError):
        QuadratureConfig(eps_clip=1e-3)
    with pytest.raises(ConfigError):
        QuadratureConfig(eps_clip=0.0)


# ---------------------------------------------------------------------------
# finite-difference Slutsky route
# ---------------------------------------------------------------------------

def test_fd_slutsky_frozen_instance():
    S = oracle_slutsky_fd(unit_spec())
    target = np.array([[-0.25, 0.25], [0.25, -0.25]])
    assert np.max(np.abs(S[0] - target)) < 1e-6


def test_fd_slutsky_homogeneity_and_symmetry():
    spec = ModelSpec(prices=[1.2, 0.7], preferences=[2.0, 0.5], budgets=[3.0],
                     beta=1.7, interaction=NonInteracting())
    S = oracle_slutsky_fd(spec)[0]
    assert np.max(np.abs(S @ spec.prices)) < 1e-6
    assert np.max(np.abs(S - S.T)) < 1e-6
