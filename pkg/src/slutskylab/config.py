"""YAML run configuration: schema, defaults, and spec construction.

The config is a small key-tree; unknown keys anywhere in the tree are
hard errors (silent typo absorption is the dominant failure mode of
simulation configs).  Quantities carry the model's natural units:
budgets and prices in currency, beta dimensionless, sweeps in units of
N proposal steps.
"""

from __future__ import annotations

import math
from typing import Optional

import numpy as np
import yaml

from .errors import ConfigError
from .model import (
    MeanFieldPreference,
    ModelSpec,
    NonInteracting,
    PairwiseHamiltonian,
)
from .sampler import ChainConfig

__all__ = [
    "load_config",
    "parse_config",
    "build_model",
    "build_chain",
    "resolved_tree",
]

# allowed key-tree; None marks a scalar/list leaf
_SCHEMA = {
    "model": {
        "goods": None,
        "agents": None,
        "beta": None,
        "budget": None,
        "prices": None,
        "preferences": None,
        "decision_mode": None,
        "interaction": {
            "type": None, "c": None, "k": None, "J": None, "rho": None,
        },
    },
    "chain": {
        "seed": None,
        "burn_in_sweeps": None,
        "measure_sweeps": None,
        "thinning": None,
        "proposal_sigma": None,
        "batch_count": None,
        "fr_reference_goods": None,
        "record_trace": None,
    },
    "run": {
        "ensemble": None,
        "rel_step": None,
    },
    "sweep": {
        "axes": {
            "c": None, "beta": None, "w": None, "M": None, "N": None,
            "J": None, "rho": None,
        },
        "replicates": None,
        "max_points": None,
    },
}

_CHAIN_DEFAULTS = {
    "seed": 12345,
    "burn_in_sweeps": 10_000,
    "measure_sweeps": 100_000,
    "thinning": 1,
    "proposal_sigma": 1.0,
    "batch_count": 16,
    "fr_reference_goods": [0],
    "record_trace": False,
}


def _check_keys(tree, schema, path=""):
    if not isinstance(tree, dict):
        raise ConfigError(f"expected a mapping at '{path or '<root>'}'")
    for key, sub in tree.items():
        if key not in schema:
            loc = f"{path}.{key}" if path else key
            raise ConfigError(f"unknown config key '{loc}'")
        if isinstance(schema[key], dict) and sub is not None:
            _check_keys(sub, schema[key], f"{path}.{key}" if path else key)


def _as_beta(value) -> float:
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity"):
            return math.inf
        raise ConfigError(f"beta: cannot parse {value!r}")
    beta = float(value)
    if beta <= 0:
        raise ConfigError("beta must be positive (use 'inf' for the limit)")
    return beta


def build_model(tree: dict) -> ModelSpec:
    """ModelSpec from the (validated) `model:` subtree."""
    t = dict(tree or {})
    M = int(t.get("goods", 2))
    N = int(t.get("agents", 1))
    beta = _as_beta(t.get("beta", 1.0))
    budget = t.get("budget", 1.0)
    budgets = (
        np.asarray(budget, dtype=float)
        if isinstance(budget, (list, tuple))
        else np.full(N, float(budget))
    )
    prices = np.asarray(t.get("prices", np.ones(M)), dtype=float)
    prefs = t.get("preferences", 1.0)
    preferences = (
        np.asarray(prefs, dtype=float)
        if isinstance(prefs, (list, tuple))
        else np.full(M, float(prefs))
    )
    inter_tree = t.get("interaction") or {}
    kind = inter_tree.get("type", "none")
    if kind in (None, "none"):
        interaction = NonInteracting()
    elif kind == "meanfield":
        interaction = MeanFieldPreference(
            c=float(inter_tree.get("c", 0.0)), k=float(inter_tree.get("k", 2.0))
        )
    elif kind == "hamiltonian":
        interaction = PairwiseHamiltonian(
            J=float(inter_tree.get("J", 0.0)), rho=float(inter_tree.get("rho", 0.5))
        )
    else:
        raise ConfigError(f"interaction.type: unknown kind {kind!r}")
    return ModelSpec(
        prices=prices,
        preferences=preferences,
        budgets=budgets,
        beta=beta,
        interaction=interaction,
        decision_mode=t.get("decision_mode", "global"),
    )


def build_chain(tree: dict, seed_override: Optional[int] = None) -> ChainConfig:
    t = dict(_CHAIN_DEFAULTS)
    t.update(tree or {})
    if seed_override is not None:
        t["seed"] = int(seed_override)
    return ChainConfig(
        seed=int(t["seed"]),
        measure_sweeps=int(t["measure_sweeps"]),
        burn_in_sweeps=None if t["burn_in_sweeps"] is None else int(t["burn_in_sweeps"]),
        thinning=int(t["thinning"]),
        proposal_sigma=float(t["proposal_sigma"]),
        batch_count=int(t["batch_count"]),
        fr_reference_goods=tuple(int(k) for k in t["fr_reference_goods"]),
        record_trace=bool(t["record_trace"]),
    )


def parse_config(text: str) -> dict:
    """Parse + validate YAML config text, returning the raw tree."""
    try:
        tree = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    if tree is None:
        tree = {}
    _check_keys(tree, _SCHEMA)
    run = tree.get("run") or {}
    ensemble = run.get("ensemble", "canonical")
    if ensemble not in ("canonical", "grand"):
        raise ConfigError(f"run.ensemble: expected canonical|grand, got {ensemble!r}")
    return tree


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc


def resolved_tree(spec: ModelSpec, cfg: ChainConfig, ensemble: str = "canonical",
                  rel_step: float = 1e-2) -> dict:
    """Fully-resolved config tree (defaults applied) for manifests.

    Loading this tree back reproduces `spec` and `cfg` exactly.
    """
    inter = spec.interaction
    if isinstance(inter, NonInteracting):
        itree = {"type": "none"}
    elif isinstance(inter, MeanFieldPreference):
        itree = {"type": "meanfield", "c": inter.c, "k": inter.k}
    else:
        itree = {"type": "hamiltonian", "J": inter.J, "rho": inter.rho}
    return {
        "model": {
            "goods": spec.num_goods,
            "agents": spec.num_agents,
            "beta": "inf" if math.isinf(spec.beta) else spec.beta,
            "budget": spec.budgets.tolist(),
            "prices": spec.prices.tolist(),
            "preferences": spec.preferences.tolist(),
            "decision_mode": spec.decision_mode,
            "interaction": itree,
        },
        "chain": {
            "seed": cfg.seed,
            "burn_in_sweeps": cfg.burn_in,
            "measure_sweeps": cfg.measure_sweeps,
            "thinning": cfg.thinning,
            "proposal_sigma": cfg.proposal_sigma,
            "batch_count": cfg.batch_count,
            "fr_reference_goods": list(cfg.fr_reference_goods),
            "record_trace": cfg.record_trace,
        },
        "run": {"ensemble": ensemble, "rel_step": rel_step},
    }
