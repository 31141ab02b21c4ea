"""Chain-level tests: proposal mechanics, determinism, equilibrium checks.

Statistical assertions run at fixed seeds on moderate chain lengths; the
full-length versions with the contractual tolerances live in
test_acceptance.py.
"""

import dataclasses
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from slutskylab import (
    CalibrationFailure,
    ChainConfig,
    ConfigError,
    MeanFieldPreference,
    ModelSpec,
    NonInteracting,
    PairwiseHamiltonian,
    acceptance_log_ratio,
    critical_c,
    fr_slutsky,
    noninteracting_solution,
    pathwise_slutsky,
    propose_move,
    run_chain,
    run_grand_canonical_chain,
)
from slutskylab.model import Allocation
from slutskylab import sampler as sampler_mod
from slutskylab import _kernels_py

HET_SPEC = ModelSpec(
    prices=np.array([1.0, 2.0, 0.7, 1.3]),
    preferences=np.array([0.5, 1.0, 2.0, 0.8]),
    budgets=np.array([3.0]),
    beta=1.0,
    interaction=NonInteracting(),
)


@pytest.fixture(scope="module")
def het_chain():
    cfg = ChainConfig(seed=3, measure_sweeps=400_000, fr_reference_goods=(0, 2))
    return run_chain(HET_SPEC, cfg)


# ---------------------------------------------------------------------------
# single-move mechanics
# ---------------------------------------------------------------------------

def test_propose_move_zero_noise_is_identity():
    y = propose_move([0.3, 0.7], [0.0, 0.0], np.array([1.0, 1.0]), 1.0)
    assert_allclose(y, [0.3, 0.7], rtol=0, atol=0)


def test_propose_move_uniform_kick_rescales_away():
    y = propose_move([1.0, 1.0], [math.log(2)] * 2, np.array([1.0, 1.0]), 2.0)
    assert_allclose(y, [1.0, 1.0], rtol=1e-15)


def test_propose_move_asymmetric_kick():
    y = propose_move([1.0, 1.0], [math.log(2), 0.0], np.array([1.0, 1.0]), 2.0)
    assert_allclose(y, [4.0 / 3.0, 2.0 / 3.0], rtol=1e-15)


def test_acceptance_log_ratio_includes_volume_term():
    spec = ModelSpec.uniform(num_goods=2, num_agents=1, beta=1.0, budget=2.0)
    alloc = Allocation.even_split(spec)
    y = np.array([4.0 / 3.0, 2.0 / 3.0])
    # dU = log(8/9); proposal volume term adds another log(8/9)
    assert_allclose(
        acceptance_log_ratio(spec, alloc, 0, y), 2.0 * math.log(8.0 / 9.0),
        rtol=1e-14,
    )


# ---------------------------------------------------------------------------
# configuration contract
# ---------------------------------------------------------------------------

@pytest.mark.parametrize(
    "kwargs",
    [
        dict(seed=1, measure_sweeps=0),
        dict(seed=1, measure_sweeps=100, thinning=0),
        dict(seed=1, measure_sweeps=100, proposal_sigma=0.0),
        dict(seed=1, measure_sweeps=100, proposal_sigma=-1.0),
        dict(seed=1, measure_sweeps=100, batch_count=4),
        dict(seed=1, measure_sweeps=100, thinning=20, batch_count=8),
        dict(seed=1, measure_sweeps=100, burn_in_sweeps=-5),
        dict(seed=1, measure_sweeps=100, fr_reference_goods=()),
    ],
)
def test_chain_config_rejects(kwargs):
    with pytest.raises(ConfigError):
        ChainConfig(**kwargs)


def test_burn_in_defaults_to_a_fifth_of_total():
    cfg = ChainConfig(seed=1, measure_sweeps=1000)
    assert cfg.burn_in == 250
    assert ChainConfig(seed=1, measure_sweeps=1000, burn_in_sweeps=17).burn_in == 17


def test_infinite_beta_rejected():
    spec = ModelSpec.uniform(num_goods=2, num_agents=1, beta=math.inf, budget=1.0)
    with pytest.raises(ConfigError):
        run_chain(spec, ChainConfig(seed=1, measure_sweeps=64))


# ---------------------------------------------------------------------------
# determinism and backend equivalence
# ---------------------------------------------------------------------------

def test_chain_is_deterministic():
    spec = ModelSpec.uniform(num_goods=3, num_agents=2, beta=1.0, budget=5.0)
    cfg = ChainConfig(seed=11, measure_sweeps=5_000)
    a, b = run_chain(spec, cfg), run_chain(spec, cfg)
    assert_array_equal(a.mean_x, b.mean_x)
    assert_array_equal(a.batch_mean_x, b.batch_mean_x)
    assert_array_equal(a.cov_same, b.cov_same)
    assert a.acceptance_rate == b.acceptance_rate


def test_identity_perturbation_reproduces_base_chain():
    # common-random-numbers contract: same config + same spec => same path
    spec = ModelSpec.uniform(num_goods=2, num_agents=1, beta=1.0, budget=1.0)
    cfg = ChainConfig(seed=2, measure_sweeps=5_000)
    base = run_chain(spec, cfg)
    again = run_chain(spec.with_prices(spec.prices * 1.0), cfg)
    assert_array_equal(base.mean_x, again.mean_x)
    assert_array_equal(base.batch_mean_x, again.batch_mean_x)


def test_python_and_compiled_backends_agree_bitwise(monkeypatch):
    if not sampler_mod.kernels.COMPILED:
        pytest.skip("compiled backend not available")
    spec = ModelSpec.uniform(num_goods=3, num_agents=4, beta=2.0, budget=6.0)
    spec = spec.with_interaction(MeanFieldPreference(c=0.05, k=2.0))
    cfg = ChainConfig(seed=17, measure_sweeps=2_000)
    compiled = run_chain(spec, cfg)
    monkeypatch.setattr(sampler_mod, "kernels", _kernels_py)
    pure = run_chain(spec, cfg)
    assert_array_equal(compiled.mean_x, pure.mean_x)
    assert_array_equal(compiled.batch_mean_x, pure.batch_mean_x)
    assert compiled.acceptance_rate == pure.acceptance_rate


def test_backends_agree_on_grand_canonical(monkeypatch):
    if not sampler_mod.kernels.COMPILED:
        pytest.skip("compiled backend not available")
    spec = ModelSpec.uniform(num_goods=4, num_agents=1, beta=1.0, budget=10.0)
    cfg = ChainConfig(seed=29, measure_sweeps=2_000)
    compiled = run_grand_canonical_chain(spec, cfg)
    monkeypatch.setattr(sampler_mod, "kernels", _kernels_py)
    pure = run_grand_canonical_chain(spec, cfg)
    assert_array_equal(compiled.mean_x, pure.mean_x)
    assert compiled.mu == pure.mu


# ---------------------------------------------------------------------------
# equilibrium checks against closed forms
# ---------------------------------------------------------------------------

def test_mean_basket_beta100():
    spec = ModelSpec(
        prices=np.array([1.0, 2.0]), preferences=np.ones(2),
        budgets=np.array([3.0]), beta=100.0,
    )
    obs = run_chain(
        spec, ChainConfig(seed=4, measure_sweeps=150_000, proposal_sigma=0.3)
    )
    z = np.abs(obs.mean_x[0] - [1.5, 0.75]) / obs.se_mean_x[0]
    assert z.max() < 3.0


def test_dirichlet_marginal_moments():
    # x1 on the unit budget with beta=a=1, M=2 is Beta(2,2)
    spec = ModelSpec.uniform(num_goods=2, num_agents=1, beta=1.0, budget=1.0)
    obs = run_chain(spec, ChainConfig(seed=7, measure_sweeps=200_000))
    assert abs(obs.mean_x[0, 0] - 0.5) < 3 * obs.se_mean_x[0, 0]
    assert abs(obs.cov_same[0, 0] - 0.05) < 3 * obs.se_cov_same[0, 0]


def test_marginal_ks_statistic_smoke():
    from scipy import stats

    spec = ModelSpec.uniform(num_goods=2, num_agents=1, beta=1.0, budget=1.0)
    cfg = ChainConfig(seed=13, measure_sweeps=100_000, record_trace=True)
    obs = run_chain(spec, cfg)
    d = stats.kstest(obs.trace["mean_basket"][:, 0], stats.beta(2, 2).cdf).statistic
    assert d < 0.02


def test_mean_matches_closed_form_heterogeneous(het_chain):
    means, _ = noninteracting_solution(HET_SPEC)
    z = np.abs(het_chain.mean_x - means) / het_chain.se_mean_x
    assert z.max() < 3.0


def test_covariance_annihilates_prices(het_chain):
    # budget constraint forces sum_j C_ij p_j = 0
    resid = het_chain.cov_same @ HET_SPEC.prices
    assert np.max(np.abs(resid)) < 1e-10 * np.max(np.abs(het_chain.cov_same))


def test_budget_residual_is_machine_zero(het_chain):
    assert het_chain.diagnostics["budget_residual"] < 1e-12


def test_herfindahl_near_zero_for_uniform_preferences():
    spec = ModelSpec.uniform(num_goods=4, num_agents=1, beta=4.0, budget=10.0)
    obs = run_chain(spec, ChainConfig(seed=5, measure_sweeps=50_000))
    assert obs.herfindahl < 0.01


def test_batch_errors_shrink_like_sqrt_time():
    spec = ModelSpec.uniform(num_goods=2, num_agents=1, beta=1.0, budget=1.0)
    se = []
    for sweeps in (25_000, 100_000):
        obs = run_chain(spec, ChainConfig(seed=19, measure_sweeps=sweeps))
        se.append(obs.se_mean_x.mean())
    ratio = se[0] / se[1]
    assert 1.3 < ratio < 3.1   # ideal value 2 for a 4x longer chain


def test_sample_count_and_batch_shapes():
    spec = ModelSpec.uniform(num_goods=2, num_agents=3, beta=1.0, budget=1.0)
    cfg = ChainConfig(seed=1, measure_sweeps=1_000, thinning=5, batch_count=10)
    obs = run_chain(spec, cfg)
    assert obs.n_samples == 200
    assert obs.batch_mean_x.shape == (10, 3, 2)
    assert obs.cov_cross is not None
    assert np.isfinite(obs.geweke_z)
    assert isinstance(obs.equilibrated, bool)


def test_trace_schema():
    spec = ModelSpec.uniform(num_goods=2, num_agents=2, beta=1.0, budget=1.0)
    cfg = ChainConfig(seed=1, measure_sweeps=500, thinning=5, record_trace=True)
    obs = run_chain(spec, cfg)
    tr = obs.trace
    assert set(tr) == {"sweep", "mean_basket", "herfindahl", "acceptance"}
    assert tr["mean_basket"].shape == (100, 2)
    assert tr["sweep"][0] == cfg.burn_in + 5
    assert np.all(np.diff(tr["sweep"]) == 5)
    assert np.all((tr["acceptance"] >= 0) & (tr["acceptance"] <= 1))
    assert np.all((tr["herfindahl"] >= 0) & (tr["herfindahl"] <= 1))


# ---------------------------------------------------------------------------
# fluctuation-response moments accumulated along the chain
# ---------------------------------------------------------------------------

def test_fr_slutsky_from_chain_matches_closed_form(het_chain):
    est = fr_slutsky(HET_SPEC, het_chain.fr, batch_moments=het_chain.fr_batches)
    _, S = noninteracting_solution(HET_SPEC)
    z = np.abs(est.per_agent[0] - S[0]) / est.errors[0]
    assert z.max() < 3.0


def test_fr_layouts_by_interaction():
    ident = ModelSpec.uniform(num_goods=3, num_agents=4, beta=1.0, budget=3.0)
    obs = run_chain(ident, ChainConfig(seed=2, measure_sweeps=2_000))
    assert obs.fr.kind == "per_agent"
    mf = ident.with_interaction(MeanFieldPreference(c=0.05, k=2.0))
    obs = run_chain(mf, ChainConfig(seed=2, measure_sweeps=2_000))
    assert obs.fr.kind == "pooled"
    het_budget = dataclasses.replace(mf, budgets=np.array([1.0, 2.0, 3.0, 4.0]))
    obs = run_chain(het_budget, ChainConfig(seed=2, measure_sweeps=2_000))
    assert obs.fr is None


def test_accumulate_fr_off_skips_container():
    spec = ModelSpec.uniform(num_goods=2, num_agents=1, beta=1.0, budget=1.0)
    obs = run_chain(spec, ChainConfig(seed=2, measure_sweeps=1_000, accumulate_fr=False))
    assert obs.fr is None and obs.fr_batches is None


def test_selfish_mode_runs_without_fr():
    spec = ModelSpec.uniform(num_goods=4, num_agents=8, beta=10.0, budget=10.0)
    spec = dataclasses.replace(
        spec.with_interaction(MeanFieldPreference(c=0.2, k=2.0)),
        decision_mode="selfish",
    )
    obs = run_chain(spec, ChainConfig(seed=21, measure_sweeps=10_000))
    assert obs.fr is None
    assert 0.0 < obs.acceptance_rate < 1.0
    assert np.all(np.isfinite(obs.mean_x))


def test_condensation_above_critical_coupling():
    base = ModelSpec.uniform(num_goods=4, num_agents=8, beta=10.0, budget=10.0)
    cc = critical_c(base.with_interaction(MeanFieldPreference(c=0.01, k=2.0)), 10.0).c_crit
    low = run_chain(base, ChainConfig(seed=21, measure_sweeps=30_000))
    spec = base.with_interaction(MeanFieldPreference(c=5 * cc, k=2.0))
    high = run_chain(spec, ChainConfig(seed=21, measure_sweeps=60_000))
    assert low.herfindahl < 0.05
    assert high.herfindahl > 0.5


def test_hamiltonian_variant_runs():
    spec = ModelSpec.uniform(num_goods=3, num_agents=4, beta=1.0, budget=3.0)
    spec = spec.with_interaction(PairwiseHamiltonian(J=2.0, rho=0.5))
    obs = run_chain(spec, ChainConfig(seed=6, measure_sweeps=5_000))
    assert np.all(np.isfinite(obs.mean_x))
    assert obs.diagnostics["budget_residual"] < 1e-12


# ---------------------------------------------------------------------------
# grand-canonical ensemble
# ---------------------------------------------------------------------------

def test_grand_canonical_budget_variance_example():
    # c=0, M=4, a=p=1, beta=1, w=10: sigma^2 = w^2 M / (M(1+beta)^2) ... = 12.5
    spec = ModelSpec.uniform(num_goods=4, num_agents=1, beta=1.0, budget=10.0)
    obs = run_grand_canonical_chain(spec, ChainConfig(seed=9, measure_sweeps=200_000))
    assert abs(obs.budget_mean - 10.0) / 10.0 <= 1e-2
    assert abs(obs.budget_var - 12.5) < 3 * obs.se_budget_var
    assert obs.mu > 0
    assert obs.fr is None


def test_grand_canonical_needs_identical_budgets():
    spec = ModelSpec(
        prices=np.ones(2), preferences=np.ones(2),
        budgets=np.array([1.0, 2.0]), beta=1.0,
    )
    with pytest.raises(ConfigError):
        run_grand_canonical_chain(spec, ChainConfig(seed=1, measure_sweeps=1_000))


def test_grand_canonical_calibration_failure():
    spec = ModelSpec.uniform(num_goods=4, num_agents=1, beta=1.0, budget=10.0)
    with pytest.raises(CalibrationFailure):
        run_grand_canonical_chain(
            spec, ChainConfig(seed=9, measure_sweeps=2_000), tol=1e-10
        )


# ---------------------------------------------------------------------------
# pathwise derivatives
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("eps", [0.0, -0.01, 0.1, 0.5])
def test_pathwise_rel_step_bounds(eps):
    spec = ModelSpec.uniform(num_goods=2, num_agents=1, beta=1.0, budget=1.0)
    with pytest.raises(ConfigError):
        pathwise_slutsky(spec, ChainConfig(seed=1, measure_sweeps=100), rel_step=eps)


def test_pathwise_vs_fluctuation_response(het_chain):
    fr_est = fr_slutsky(HET_SPEC, het_chain.fr, batch_moments=het_chain.fr_batches)
    pw_est = pathwise_slutsky(
        HET_SPEC, ChainConfig(seed=5, measure_sweeps=100_000), rel_step=1e-2
    )
    combined = np.sqrt(fr_est.errors[0] ** 2 + pw_est.errors ** 2)
    z = np.abs(pw_est.per_agent[0] - fr_est.per_agent[0]) / combined
    assert z.max() < 3.0
    assert pw_est.method == "Pathwise"
    assert pw_est.metrics.eigenvalues.shape == (4,)


def test_pathwise_diagonal_dominates_noise():
    # forward differences with shared draws: smooth estimate, small bias
    spec = ModelSpec.uniform(num_goods=2, num_agents=1, beta=1.0, budget=1.0)
    est = pathwise_slutsky(
        spec, ChainConfig(seed=8, measure_sweeps=50_000), rel_step=1e-2
    )
    target = np.array([[-0.25, 0.25], [0.25, -0.25]])
    assert np.max(np.abs(est.per_agent[0] - target)) < 0.02
