"""Fluctuation-response assembly, aggregate matrix, and the metric bundle.

Independent oracle used throughout: with U = sum a_i log x_i the budget
shares are Dirichlet(1 + beta a_i), and every mixed moment the assembly
consumes (<g>, <x g>, <x x g>) has a closed form via the Liouville
integral E[prod y_i^{c_i}] = G(z0)/G(z0+s) prod G(z_i+c_i)/G(z_i).  The
builder below turns those into an exact per-agent moment container, so
fr_slutsky can be checked against the exact share-basket Slutsky matrix
without any sampling or quadrature error.
"""

import numpy as np
import pytest

from slutskylab.analytics import noninteracting_solution, solve_saddle
from slutskylab.errors import (
    ConfigError,
    DimensionMismatch,
    EigSolverFailure,
    MissingMoments,
    UnsupportedSize,
    VariantError,
)
from slutskylab.model import MeanFieldPreference, ModelSpec, NonInteracting
from slutskylab.moments import FRMoments
from slutskylab.quadrature import QuadratureConfig, oracle_slutsky_fd, quadrature_moments
from slutskylab.slutsky import (
    SlutskyEstimate,
    WealthMap,
    aggregate_slutsky,
    closed_form_estimate,
    fr_slutsky,
    slutsky_metrics,
)

S_FROZEN = np.array([[-0.25, 0.25], [0.25, -0.25]])


def dirichlet_container(spec, ref_goods=(0,)):
    """Exact per-agent FR moment container for a NonInteracting economy."""
    assert isinstance(spec.interaction, NonInteracting)
    N, M = spec.num_agents, spec.num_goods
    p, beta = spec.prices, spec.beta
    a = spec.per_agent_preferences
    K = len(ref_goods)
    mean = np.empty((N, M))
    cov = np.empty((N, M, M))
    gm = np.empty((K, N))
    xg = np.empty((K, N, M))
    xxg = np.empty((K, N, M, M))
    for n in range(N):
        w = spec.budgets[n]
        z = 1.0 + beta * a[n]
        z0 = z.sum()
        r = z / z0
        mean[n] = w * r / p
        cov[n] = (np.diag(r) - np.outer(r, r)) / (z0 + 1.0) * np.outer(w / p, w / p)
        for t, k in enumerate(ref_goods):
            gm[t, n] = p[k] * (z0 - 1.0) / (beta * w)
            for i in range(M):
                xg[t, n, i] = a[n, k] if i == k else p[k] * z[i] / (beta * p[i])
            for i in range(M):
                for j in range(M):
                    if i == k and j == k:
                        xxg[t, n, i, j] = a[n, k] * w * z[k] / (z0 * p[k])
                    elif i == k:
                        xxg[t, n, i, j] = a[n, k] * w * z[j] / (z0 * p[j])
                    elif j == k:
                        xxg[t, n, i, j] = a[n, k] * w * z[i] / (z0 * p[i])
                    elif i == j:
                        xxg[t, n, i, j] = (
                            w * p[k] * z[i] * (z[i] + 1.0) / (beta * z0 * p[i] ** 2)
                        )
                    else:
                        xxg[t, n, i, j] = (
                            w * p[k] * z[i] * z[j] / (beta * z0 * p[i] * p[j])
                        )
    return FRMoments(
        kind="per_agent", ref_goods=tuple(ref_goods), beta=beta, prices=p,
        num_agents=N, mean_x=mean, cov_same=cov, g_mean=gm, xg_same=xg,
        xxg_same=xxg,
    )


def frozen_spec():
    return ModelSpec(prices=[1.0, 1.0], preferences=[1.0, 1.0], budgets=[1.0],
                     beta=1.0, interaction=NonInteracting())


# ---------------------------------------------------------------------------
# fluctuation-response route
# ---------------------------------------------------------------------------

def test_fr_frozen_instance_from_exact_moments():
    est = fr_slutsky(frozen_spec(), dirichlet_container(frozen_spec()))
    assert np.max(np.abs(est.mean_individual - S_FROZEN)) < 1e-14
    assert est.method == "FluctuationResponse"


def test_fr_frozen_instance_from_quadrature():
    spec = frozen_spec()
    res = quadrature_moments(spec, QuadratureConfig(ref_goods=(0, 1)))
    est = fr_slutsky(spec, res.fr)
    assert np.max(np.abs(est.mean_individual - S_FROZEN)) < 1e-6


@pytest.mark.parametrize("ref_goods", [(0,), (1,), (2,), (0, 1, 2)])
def test_fr_reference_good_independence(ref_goods):
    # the assembled matrix cannot depend on which good anchors Gamma
    spec = ModelSpec(prices=[1.1, 0.8, 1.4], preferences=[0.7, 1.9, 1.2],
                     budgets=[4.0], beta=2.5, interaction=NonInteracting())
    est = fr_slutsky(spec, dirichlet_container(spec, ref_goods))
    _, S = noninteracting_solution(spec)
    assert np.max(np.abs(est.mean_individual - S[0])) < 1e-12


def test_fr_heterogeneous_agents():
    spec = ModelSpec(
        prices=[1.0, 2.0, 0.5, 1.5],
        preferences=[[1.0, 0.5, 2.0, 1.0], [0.3, 1.2, 0.8, 2.1], [1.0, 1.0, 1.0, 1.0]],
        budgets=[1.0, 3.0, 0.7],
        beta=1.8,
        interaction=NonInteracting(),
    )
    est = fr_slutsky(spec, dirichlet_container(spec, (0, 2)))
    _, S = noninteracting_solution(spec)
    assert est.per_agent.shape == (3, 4, 4)
    assert np.max(np.abs(est.per_agent - S)) < 1e-12
    assert np.max(np.abs(est.mean_individual - S.mean(axis=0))) < 1e-12


def test_fr_pooled_matches_fd_oracle():
    # identical interacting agents: pooled same/cross blocks vs direct FD
    spec = ModelSpec(prices=[1.0, 1.3], preferences=[1.0, 0.8], budgets=[2.0, 2.0],
                     beta=2.0, interaction=MeanFieldPreference(c=0.3, k=2.0))
    cfg = QuadratureConfig(nodes=220, ref_goods=(0, 1))
    est = fr_slutsky(spec, quadrature_moments(spec, cfg).fr)
    S_fd = oracle_slutsky_fd(spec, cfg).mean(axis=0)
    assert np.max(np.abs(est.mean_individual - S_fd)) < 1e-6
    # finite-beta identical agents keep the matrix symmetric
    assert np.max(np.abs(est.mean_individual - est.mean_individual.T)) < 1e-10


def test_fr_missing_moments():
    with pytest.raises(MissingMoments):
        fr_slutsky(frozen_spec(), None)


def test_fr_batch_error_bars():
    spec = frozen_spec()
    rng = np.random.default_rng(7)
    base = dirichlet_container(spec)
    batches = []
    for _ in range(8):
        jitter = dict(
            mean_x=base.mean_x * (1 + 1e-3 * rng.standard_normal(base.mean_x.shape)),
            cov_same=base.cov_same * (1 + 1e-3 * rng.standard_normal(base.cov_same.shape)),
        )
        batches.append(
            FRMoments(kind="per_agent", ref_goods=base.ref_goods, beta=base.beta,
                      prices=base.prices, num_agents=1, g_mean=base.g_mean,
                      xg_same=base.xg_same, xxg_same=base.xxg_same, **jitter)
        )
    est = fr_slutsky(spec, base, batch_moments=batches)
    assert est.errors.shape == (2, 2)
    assert np.all(est.errors > 0)
    assert np.max(est.errors) < 5e-3     # commensurate with the jitter scale
    with pytest.raises(ConfigError):
        fr_slutsky(spec, base, batch_moments=batches[:1])


def test_estimate_rejects_inconsistent_mean():
    with pytest.raises(DimensionMismatch):
        SlutskyEstimate(
            per_agent=S_FROZEN[None],
            mean_individual=np.zeros((2, 2)),
            method="FluctuationResponse",
            metrics=slutsky_metrics(S_FROZEN, np.ones(2)),
        )


# ---------------------------------------------------------------------------
# aggregate matrix and wealth maps
# ---------------------------------------------------------------------------

def test_wealth_map_multipliers_and_validation():
    w = np.array([1.0, 3.0])
    assert WealthMap("proportional").multipliers(w) == pytest.approx(w / 2.0)
    # on-map power chain factors: q * w / wbar
    assert WealthMap("power", q=2.0).chain_factors(w) == pytest.approx(w)
    with pytest.raises(ConfigError):
        WealthMap("percentile")
    with pytest.raises(ConfigError):
        WealthMap("power", q=-1.0)
    with pytest.raises(ConfigError):
        WealthMap(w0=0.0)
    with pytest.raises(ConfigError):
        WealthMap(kappa=[1.0, -2.0])
    with pytest.raises(DimensionMismatch):
        WealthMap(kappa=[1.0, 2.0, 3.0]).multipliers(w)


def test_aggregate_identical_proportional_is_mean_individual():
    spec = ModelSpec(prices=[1.0, 1.3], preferences=[1.0, 0.8], budgets=[2.0, 2.0],
                     beta=2.0, interaction=MeanFieldPreference(c=0.3, k=2.0))
    mom = quadrature_moments(spec, QuadratureConfig(nodes=160)).fr
    est = fr_slutsky(spec, mom)
    agg = aggregate_slutsky(spec, est, mom, WealthMap("proportional"))
    assert np.array_equal(agg, est.mean_individual)


def test_aggregate_noninteracting_identical_equals_single_agent():
    spec = ModelSpec(prices=[1.0, 2.0], preferences=[1.0, 0.5],
                     budgets=[3.0, 3.0, 3.0, 3.0], beta=1.0,
                     interaction=NonInteracting())
    mom = dirichlet_container(spec)
    est = fr_slutsky(spec, mom)
    agg = aggregate_slutsky(spec, est, mom, WealthMap("proportional"))
    _, S = noninteracting_solution(spec)
    assert np.max(np.abs(agg - S[0])) < 1e-12


def test_aggregate_power_map_correction():
    # c=0, shared preferences, heterogeneous budgets, F(x) = x^2:
    # chain factors kappa = 2 w^a/wbar, and the correction reduces to
    # (q-1) wbar r_i r_j / (p_i p_j) on top of the proportional result
    spec = ModelSpec(prices=[1.0, 2.0, 0.5], preferences=[1.0, 0.5, 1.5],
                     budgets=[1.0, 2.0, 4.0, 9.0], beta=1.0,
                     interaction=NonInteracting())
    mom = dirichlet_container(spec)
    est = fr_slutsky(spec, mom)
    base = aggregate_slutsky(spec, est, mom, WealthMap("proportional"))
    agg = aggregate_slutsky(spec, est, mom, WealthMap("power", q=2.0))
    z = 1.0 + spec.beta * spec.preferences
    r = z / z.sum()
    wbar = spec.budgets.mean()
    expected = wbar * np.outer(r / spec.prices, r / spec.prices)
    assert np.max(np.abs(agg - base - expected)) < 1e-12
    assert np.max(np.abs(expected)) > 0.1         # genuinely nonzero


def test_aggregate_missing_moments():
    spec = frozen_spec()
    est = fr_slutsky(spec, dirichlet_container(spec))
    with pytest.raises(MissingMoments):
        aggregate_slutsky(spec, est, None, WealthMap())


# ---------------------------------------------------------------------------
# closed form at beta = inf
# ---------------------------------------------------------------------------

def test_closed_form_estimate_uniform():
    spec = ModelSpec(prices=np.ones(4), preferences=np.ones(4), budgets=[10.0],
                     beta=np.inf, interaction=MeanFieldPreference(c=0.01, k=2.0))
    est = closed_form_estimate(spec)
    assert est.method == "ClosedFormBetaInf"
    assert est.aggregate is not None
    # uniform economy: individual and aggregate both symmetric
    assert np.max(np.abs(est.mean_individual - est.mean_individual.T)) < 1e-10
    m = slutsky_metrics(est.aggregate, spec.prices)
    assert m.chi < 1e-10 or m.chi_denominator_underflow


def test_closed_form_requires_infinite_beta():
    spec = ModelSpec(prices=np.ones(4), preferences=np.ones(4), budgets=[10.0],
                     beta=4.0, interaction=MeanFieldPreference(c=0.01, k=2.0))
    with pytest.raises(VariantError):
        closed_form_estimate(spec)


def test_closed_form_aggregate_symmetric_heterogeneous():
    # the individual matrix loses symmetry on a heterogeneous condensed
    # economy; the aggregate never does
    spec = ModelSpec(prices=[2.2, 2.1, 1.6, 2.3], preferences=np.ones(4),
                     budgets=[10.0], beta=np.inf,
                     interaction=MeanFieldPreference(c=0.2, k=2.0))
    est = closed_form_estimate(spec)
    agg = est.aggregate
    assert np.max(np.abs(agg - agg.T)) < 1e-12
    assert slutsky_metrics(agg, spec.prices).chi < 1e-10
    asym = np.max(np.abs(est.mean_individual - est.mean_individual.T))
    assert asym > 1e-3


# ---------------------------------------------------------------------------
# metric bundle
# ---------------------------------------------------------------------------

def test_metrics_frozen_example():
    m = slutsky_metrics(S_FROZEN, np.ones(2))
    assert sorted(m.eigenvalues.real) == pytest.approx([-0.5, 0.0], abs=1e-12)
    assert np.max(np.abs(m.eigenvalues.imag)) < 1e-12
    assert m.trace == pytest.approx(-0.5)
    assert m.homogeneity_residual < 1e-14
    assert m.chi < 1e-12 and not m.chi_denominator_underflow


def test_metrics_chi_symmetric_zero():
    rng = np.random.default_rng(3)
    A = rng.standard_normal((5, 5))
    m = slutsky_metrics(A + A.T, np.ones(5))
    assert m.chi == 0.0


def test_metrics_chi_underflow_sentinel():
    S = np.array([[0.0, 0.3], [-0.3, 0.0]])
    m = slutsky_metrics(S, np.ones(2))
    assert m.chi_denominator_underflow
    assert np.isinf(m.chi)


def test_metrics_chi_scale_invariant():
    rng = np.random.default_rng(11)
    S = rng.standard_normal((6, 6))
    p = np.ones(6)
    assert slutsky_metrics(S, p).chi == pytest.approx(
        slutsky_metrics(173.25 * S, p).chi, rel=1e-12
    )


def test_metrics_spectrum_matches_companion_oracle():
    # polynomial with known roots -> companion matrix eigenvalues
    roots = np.array([2.0, -1.0, 0.5 + 0.5j, 0.5 - 0.5j])
    coeffs = np.poly(roots)                     # leading coefficient 1
    M = len(roots)
    comp = np.zeros((M, M))
    comp[0, :] = -coeffs[1:].real
    comp[1:, :-1] = np.eye(M - 1)
    eig = slutsky_metrics(comp, np.ones(M)).eigenvalues
    got = np.sort_complex(eig)
    want = np.sort_complex(roots)
    assert np.max(np.abs(got - want)) < 1e-8


def test_metrics_spectrum_similarity_oracle():
    rng = np.random.default_rng(5)
    lam = np.array([-3.0, -1.5, -0.25, 0.0, 2.0])
    Q = rng.standard_normal((5, 5)) + 5.0 * np.eye(5)
    A = Q @ np.diag(lam) @ np.linalg.inv(Q)
    eig = np.sort(slutsky_metrics(A, np.ones(5)).eigenvalues.real)
    assert eig == pytest.approx(np.sort(lam), abs=1e-8)


def test_metrics_spectrum_transpose_invariant():
    rng = np.random.default_rng(9)
    S = rng.standard_normal((8, 8))
    e1 = np.sort_complex(slutsky_metrics(S, np.ones(8)).eigenvalues)
    e2 = np.sort_complex(slutsky_metrics(S.T, np.ones(8)).eigenvalues)
    assert np.max(np.abs(e1 - e2)) < 1e-8


def test_metrics_input_guards():
    with pytest.raises(DimensionMismatch):
        slutsky_metrics(np.zeros((2, 3)), np.ones(3))
    with pytest.raises(UnsupportedSize):
        slutsky_metrics(np.eye(65), np.ones(65))
