"""Config parsing, CSV/manifest plumbing, CLI exit codes, sweep contract."""

import filecmp
import json
import math

import numpy as np
import pytest

from slutskylab import (
    ConfigError,
    MeanFieldPreference,
    NonInteracting,
    PairwiseHamiltonian,
    build_chain,
    build_model,
    parse_config,
    read_manifest,
    replay,
)
from slutskylab.cli import main
from slutskylab.config import resolved_tree
from slutskylab.experiments import simulate_run, sweep_run
from slutskylab.manifest import config_hash

MINI_SIM = """
model:
  goods: 3
  agents: 2
  beta: 2.0
  budget: 5.0
  preferences: [1.0, 0.5, 2.0]
chain:
  seed: 31
  burn_in_sweeps: 200
  measure_sweeps: 2000
"""

MINI_SWEEP = """
model:
  goods: 3
  agents: 4
  beta: 1.0
  budget: 10.0
chain:
  seed: 7
  burn_in_sweeps: 100
  measure_sweeps: 1000
sweep:
  axes:
    c: [0.0, 0.05, 0.2]
    beta: [1.0, 4.0]
  replicates: 2
"""


# ---------------------------------------------------------------------------
# config schema
# ---------------------------------------------------------------------------

def test_unknown_keys_are_hard_errors():
    with pytest.raises(ConfigError, match="model.gods"):
        parse_config("model:\n  gods: 4\n")
    with pytest.raises(ConfigError, match="chain.sweeps"):
        parse_config("chain:\n  sweeps: 100\n")
    with pytest.raises(ConfigError, match="interaction.cc"):
        parse_config("model:\n  interaction:\n    cc: 0.1\n")


def test_invalid_yaml_is_config_error():
    with pytest.raises(ConfigError):
        parse_config("model: [unclosed\n")


def test_model_construction_from_tree():
    tree = parse_config(MINI_SIM)
    spec = build_model(tree["model"])
    assert spec.num_goods == 3 and spec.num_agents == 2
    assert spec.beta == 2.0
    assert isinstance(spec.interaction, NonInteracting)
    np.testing.assert_array_equal(spec.budgets, [5.0, 5.0])


def test_interaction_kinds():
    mf = build_model(parse_config(
        "model:\n  goods: 2\n  interaction:\n    type: meanfield\n    c: 0.3\n"
    )["model"])
    assert isinstance(mf.interaction, MeanFieldPreference)
    assert mf.interaction.c == 0.3
    ham = build_model(parse_config(
        "model:\n  goods: 2\n  interaction:\n    type: hamiltonian\n    J: 2.0\n"
        "    rho: 0.5\n"
    )["model"])
    assert isinstance(ham.interaction, PairwiseHamiltonian)
    with pytest.raises(ConfigError):
        build_model({"goods": 2, "interaction": {"type": "quantum"}})


def test_beta_inf_spellings():
    for text in ("inf", "Infinity", ".inf"):
        spec = build_model(parse_config(f"model:\n  beta: {text}\n")["model"])
        assert math.isinf(spec.beta)
    with pytest.raises(ConfigError):
        build_model({"beta": "warm"})
    with pytest.raises(ConfigError):
        build_model({"beta": -1.0})


def test_ensemble_names_validated():
    with pytest.raises(ConfigError, match="ensemble"):
        parse_config("run:\n  ensemble: microcanonical\n")


def test_chain_defaults_and_seed_override():
    cfg = build_chain({}, None)
    assert cfg.measure_sweeps == 100_000 and cfg.burn_in == 10_000
    assert build_chain({"seed": 3}, seed_override=99).seed == 99


def test_resolved_tree_round_trips():
    tree = parse_config(MINI_SIM)
    spec = build_model(tree["model"])
    cfg = build_chain(tree["chain"])
    resolved = resolved_tree(spec, cfg)
    spec2 = build_model(resolved["model"])
    cfg2 = build_chain(resolved["chain"])
    np.testing.assert_array_equal(spec.prices, spec2.prices)
    np.testing.assert_array_equal(spec.budgets, spec2.budgets)
    assert cfg == cfg2
    assert config_hash(resolved) == config_hash(json.loads(json.dumps(resolved)))


# ---------------------------------------------------------------------------
# executors, manifests, replay
# ---------------------------------------------------------------------------

def test_simulate_outputs_and_manifest(tmp_path):
    files = simulate_run(parse_config(MINI_SIM), tmp_path / "out")
    names = {f.name for f in files}
    assert names == {"observables.csv", "manifest.json"}
    man = read_manifest(tmp_path / "out" / "manifest.json")
    assert man.kind == "simulate"
    assert set(man.outputs) == {"observables.csv"}
    assert man.input_hash == config_hash(man.config)
    header = (tmp_path / "out" / "observables.csv").read_text().splitlines()[0]
    assert header.startswith("schema_version,")


def test_manifest_replay_is_byte_exact(tmp_path):
    simulate_run(parse_config(MINI_SIM), tmp_path / "a")
    replay(tmp_path / "a" / "manifest.json", tmp_path / "b")
    assert filecmp.cmp(
        tmp_path / "a" / "observables.csv",
        tmp_path / "b" / "observables.csv",
        shallow=False,
    )


def test_manifest_hash_mismatch_detected(tmp_path):
    simulate_run(parse_config(MINI_SIM), tmp_path / "a")
    man_path = tmp_path / "a" / "manifest.json"
    raw = json.loads(man_path.read_text())
    raw["config"]["chain"]["seed"] = 999
    man_path.write_text(json.dumps(raw))
    with pytest.raises(ConfigError, match="input_hash"):
        replay(man_path, tmp_path / "b")


@pytest.fixture(scope="module")
def sweep_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    sweep_run(parse_config(MINI_SWEEP), out)
    return out


def test_sweep_counting_contract(sweep_dir):
    # 3 x 2 axes with 2 replicates: 12 chains, 6 theory rows
    data = (sweep_dir / "sweep.csv").read_text().splitlines()
    theory = (sweep_dir / "sweep_theory.csv").read_text().splitlines()
    assert len(data) == 13 and len(theory) == 7


def test_sweep_rerun_byte_identical(sweep_dir, tmp_path):
    sweep_run(parse_config(MINI_SWEEP), tmp_path)
    assert filecmp.cmp(sweep_dir / "sweep.csv", tmp_path / "sweep.csv",
                       shallow=False)


def test_sweep_point_seeds_differ(sweep_dir):
    lines = (sweep_dir / "sweep.csv").read_text().splitlines()
    header = lines[0].split(",")
    seeds = {row.split(",")[header.index("seed")] for row in lines[1:]}
    assert len(seeds) == 12


def test_sweep_axis_validation():
    with pytest.raises(ConfigError, match="gamma"):
        parse_config("sweep:\n  axes:\n    gamma: [1]\n")
    with pytest.raises(ConfigError, match="non-empty"):
        sweep_run(parse_config("sweep:\n  axes:\n    c: []\n"), "/tmp/unused")


def test_sweep_budget_cap(tmp_path):
    tree = parse_config(MINI_SWEEP)
    tree["sweep"]["max_points"] = 5
    with pytest.raises(ConfigError, match="max_points"):
        sweep_run(tree, tmp_path)


def test_sweep_partial_failure_persists_good_points(tmp_path):
    text = MINI_SWEEP.replace("c: [0.0, 0.05, 0.2]", "c: [0.0, -5.0]")
    files = sweep_run(parse_config(text), tmp_path)
    assert any(f.name == "sweep_failures.txt" for f in files)
    rows = (tmp_path / "sweep.csv").read_text().splitlines()
    assert len(rows) > 1   # the valid c=0 points survived
    report = (tmp_path / "sweep_failures.txt").read_text()
    assert "-5" in report


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def _write(tmp_path, text):
    p = tmp_path / "cfg.yaml"
    p.write_text(text)
    return str(p)


def test_cli_simulate_exit_zero(tmp_path, capsys):
    rc = main(["simulate", "--config", _write(tmp_path, MINI_SIM),
               "--out", str(tmp_path / "out")])
    assert rc == 0
    assert "observables.csv" in capsys.readouterr().out


def test_cli_unknown_key_exit_two(tmp_path, capsys):
    rc = main(["simulate", "--config", _write(tmp_path, "model:\n  gods: 3\n"),
               "--out", str(tmp_path / "out")])
    assert rc == 2
    assert "unknown config key" in capsys.readouterr().err


def test_cli_missing_config_exit_two(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "nope.yaml"),
                 "--out", str(tmp_path / "out")]) == 2


def test_cli_solve_and_seed_override(tmp_path):
    cfg = _write(tmp_path, MINI_SIM)
    assert main(["solve", "--config", cfg, "--out", str(tmp_path / "s1")]) == 0
    text = (tmp_path / "s1" / "solve.csv").read_text()
    assert text.startswith("schema_version,")
    assert main(["simulate", "--config", cfg, "--seed", "4242",
                 "--out", str(tmp_path / "s2")]) == 0
    man = read_manifest(tmp_path / "s2" / "manifest.json")
    assert man.seed == 4242


def test_cli_sweep_partial_failure_exit_three(tmp_path):
    text = MINI_SWEEP.replace("c: [0.0, 0.05, 0.2]", "c: [0.0, -5.0]")
    rc = main(["sweep", "--config", _write(tmp_path, text),
               "--out", str(tmp_path / "out")])
    assert rc == 3
    assert (tmp_path / "out" / "sweep.csv").exists()


def test_cli_threads_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("SLUTSKYLAB_THREADS", "not-a-number")
    rc = main(["simulate", "--config", _write(tmp_path, MINI_SIM),
               "--out", str(tmp_path / "out")])
    assert rc == 2
