"""Experiment orchestration: single runs, figure-style studies, sweeps.

Every executor takes a resolved config tree, runs chains and/or theory,
and writes versioned CSV files plus a RunManifest.  All numbers are
derived from (tree, seed), so `manifest.replay` reproduces the MC
outputs byte-exactly.  CSV floats are written with repr round-trip
precision; matrices are flattened row-major with S_i_j headers.
"""

from __future__ import annotations

import copy
import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from .analytics import (
    budget_variance_sigma2,
    critical_c,
    hamiltonian_meanfield,
    solve_saddle,
)
from .config import build_chain, build_model, resolved_tree
from .errors import CalibrationFailure, ConfigError
from .manifest import RunManifest, config_hash, write_manifest
from .model import MeanFieldPreference, ModelSpec, NonInteracting, herfindahl
from .sampler import ChainConfig, pathwise_slutsky, run_chain, run_grand_canonical_chain
from .slutsky import closed_form_estimate, fr_slutsky, slutsky_metrics

__all__ = [
    "simulate_run",
    "solve_run",
    "slutsky_run",
    "ensemble_check_run",
    "phase_diagram_run",
    "run_experiment",
    "sweep_run",
    "rerun",
    "FIGURES",
]

SCHEMA_VERSION = 1
_CHAIN_DEFAULT_SEED = 12345


# ---------------------------------------------------------------------------
# CSV plumbing
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header: List[str], rows: List[list]) -> Path:
    assert header[0] == "schema_version"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def _matrix_headers(tag: str, M: int) -> List[str]:
    return [f"{tag}_{i}_{j}" for i in range(M) for j in range(M)]


def _spec_cols(spec: ModelSpec) -> list:
    inter = spec.interaction
    kind = type(inter).__name__
    c = getattr(inter, "c", None)
    k = getattr(inter, "k", None)
    J = getattr(inter, "J", None)
    rho = getattr(inter, "rho", None)
    return [
        spec.num_goods, spec.num_agents,
        "inf" if math.isinf(spec.beta) else spec.beta,
        kind, c, k, J, rho, spec.decision_mode, float(spec.budgets.mean()),
    ]


_SPEC_HEADER = [
    "M", "N", "beta", "interaction", "c", "k", "J", "rho",
    "decision_mode", "w_mean",
]


def _scaled_chain(cfg: ChainConfig, scale: float) -> ChainConfig:
    if scale == 1.0:
        return cfg
    if scale <= 0:
        raise ConfigError("scale must be positive")
    measure = max(int(cfg.measure_sweeps * scale), cfg.thinning * cfg.batch_count)
    burn = int(cfg.burn_in * scale)
    return replace(cfg, measure_sweeps=measure, burn_in_sweeps=burn)


def _trace_file(out: Path, stem: str, spec: ModelSpec, obs) -> Optional[Path]:
    if obs.trace is None:
        return None
    M = spec.num_goods
    header = (
        ["schema_version", "sweep"]
        + [f"xbar_{i}" for i in range(M)]
        + ["herfindahl", "acceptance"]
    )
    rows = [
        [SCHEMA_VERSION, int(tr_s)] + list(xb) + [h, a]
        for tr_s, xb, h, a in zip(
            obs.trace["sweep"], obs.trace["mean_basket"],
            obs.trace["herfindahl"], obs.trace["acceptance"],
        )
    ]
    return _write_csv(out / f"{stem}_trace.csv", header, rows)


def _finish(out: Path, kind: str, tree: dict, seed: int, files: List[Path],
            t0: float, equilibrated=None, notes=None) -> List[Path]:
    man = RunManifest(
        kind=kind,
        config=tree,
        seed=seed,
        outputs=[f.name for f in files],
        input_hash=config_hash(tree),
        wall_clock_s=round(time.time() - t0, 3),
        equilibrated=equilibrated,
        notes=notes or {},
    )
    files.append(write_manifest(out / "manifest.json", man))
    return files


# ---------------------------------------------------------------------------
# single-run executors
# ---------------------------------------------------------------------------

def _chain_header(M: int) -> List[str]:
    return (
        ["schema_version", "ensemble"] + _SPEC_HEADER
        + ["seed", "burn_in_sweeps", "measure_sweeps", "thinning", "n_samples",
           "acceptance", "equilibrated", "geweke_z",
           "herfindahl", "herfindahl_se"]
        + [f"xbar_{i}" for i in range(M)]
        + [f"xbar_se_{i}" for i in range(M)]
        + ["mu", "budget_mean", "budget_var", "budget_var_se"]
    )


def _chain_row(ensemble: str, spec: ModelSpec, cfg: ChainConfig, obs) -> list:
    pooled = obs.mean_x.mean(axis=0)
    pooled_se = obs.se_mean_x.mean(axis=0) / math.sqrt(spec.num_agents)
    return (
        [SCHEMA_VERSION, ensemble] + _spec_cols(spec)
        + [cfg.seed, cfg.burn_in, cfg.measure_sweeps, cfg.thinning, obs.n_samples,
           obs.acceptance_rate, obs.equilibrated, obs.geweke_z,
           obs.herfindahl, obs.se_herfindahl]
        + list(pooled) + list(pooled_se)
        + [obs.mu, obs.budget_mean, obs.budget_var, obs.se_budget_var]
    )


def simulate_run(tree: dict, out_dir, seed: Optional[int] = None,
                 scale: float = 1.0) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    spec = build_model(tree.get("model") or {})
    cfg = _scaled_chain(build_chain(tree.get("chain") or {}, seed), scale)
    ensemble = (tree.get("run") or {}).get("ensemble", "canonical")
    if ensemble == "grand":
        obs = run_grand_canonical_chain(spec, cfg)
    else:
        obs = run_chain(spec, cfg)
    resolved = resolved_tree(spec, cfg, ensemble)
    files = [
        _write_csv(out / "observables.csv", _chain_header(spec.num_goods),
                   [_chain_row(ensemble, spec, cfg, obs)])
    ]
    trace = _trace_file(out, "observables", spec, obs)
    if trace is not None:
        files.append(trace)
    return _finish(out, "simulate", resolved, cfg.seed, files, t0,
                   equilibrated=obs.equilibrated)


def solve_run(tree: dict, out_dir, seed: Optional[int] = None,
              scale: float = 1.0) -> List[Path]:
    """Theory-only: saddle basket, concentration, critical couplings."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    spec = build_model(tree.get("model") or {})
    cfg = build_chain(tree.get("chain") or {}, seed)
    M = spec.num_goods
    header = (
        ["schema_version"] + _SPEC_HEADER
        + [f"xbar_theory_{i}" for i in range(M)]
        + ["herfindahl_theory", "c_inf", "c_crit", "nc_pc_ratio", "J_crit_stable"]
    )
    c_inf = c_crit = stable = None
    if isinstance(spec.interaction, MeanFieldPreference):
        lines = critical_c(spec)
        c_inf, c_crit = lines.c_inf, lines.c_crit
    if hasattr(spec.interaction, "rho"):
        fp = hamiltonian_meanfield(spec)
        stable = bool(np.all(fp.stable))
        xbar_th = fp.x_star
    else:
        xbar_th = solve_saddle(spec).xbar
    ratio = float(spec.budgets.mean()) / M / math.exp(-1.5)
    row = (
        [SCHEMA_VERSION] + _spec_cols(spec) + list(xbar_th)
        + [herfindahl(xbar_th, spec.prices), c_inf, c_crit, ratio, stable]
    )
    files = [_write_csv(out / "solve.csv", header, [row])]
    resolved = resolved_tree(spec, cfg)
    return _finish(out, "solve", resolved, cfg.seed, files, t0)


def _slutsky_header(M: int) -> List[str]:
    return (
        ["schema_version", "method"] + _SPEC_HEADER + ["seed", "c_over_ccrit"]
        + _matrix_headers("S", M) + _matrix_headers("S_se", M)
        + ["chi", "max_re_eig", "trace", "homogeneity_resid"]
    )


def _slutsky_row(method: str, spec: ModelSpec, seed, est, c_ratio=None) -> list:
    S = est.mean_individual
    se = est.errors
    met = est.metrics
    return (
        [SCHEMA_VERSION, method] + _spec_cols(spec) + [seed, c_ratio]
        + list(S.ravel())
        + (list(se.ravel()) if se is not None else [None] * S.size)
        + [met.chi, float(np.max(met.eigenvalues.real)), met.trace,
           met.homogeneity_residual]
    )


def slutsky_run(tree: dict, out_dir, seed: Optional[int] = None,
                scale: float = 1.0) -> List[Path]:
    """Pathwise + fluctuation-response estimates (one chain each route)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    spec = build_model(tree.get("model") or {})
    cfg = _scaled_chain(build_chain(tree.get("chain") or {}, seed), scale)
    rel_step = float((tree.get("run") or {}).get("rel_step", 1e-2))
    rows = []
    equil = None
    if math.isinf(spec.beta):
        est = closed_form_estimate(spec)
        rows.append(_slutsky_row("ClosedFormBetaInf", spec, None, est))
    else:
        pw = pathwise_slutsky(spec, cfg, rel_step=rel_step)
        rows.append(_slutsky_row("Pathwise", spec, cfg.seed, pw))
        obs = run_chain(spec, cfg)
        equil = obs.equilibrated
        if obs.fr is not None:
            fr = fr_slutsky(spec, obs.fr, batch_moments=obs.fr_batches)
            rows.append(_slutsky_row("FluctuationResponse", spec, cfg.seed, fr))
    files = [_write_csv(out / "slutsky.csv", _slutsky_header(spec.num_goods), rows)]
    resolved = resolved_tree(spec, cfg, rel_step=rel_step)
    return _finish(out, "slutsky", resolved, cfg.seed, files, t0, equilibrated=equil)


def ensemble_check_run(tree: dict, out_dir, seed: Optional[int] = None,
                       scale: float = 1.0) -> List[Path]:
    """Grand-canonical budget fluctuations against the theory formula."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    spec = build_model(tree.get("model") or {})
    cfg = _scaled_chain(build_chain(tree.get("chain") or {}, seed), scale)
    obs = run_grand_canonical_chain(spec, cfg)
    sigma2 = budget_variance_sigma2(spec, solve_saddle(spec).xbar)
    w = spec.common_budget
    header = (
        ["schema_version"] + _SPEC_HEADER
        + ["seed", "mu", "budget_mean", "sigma2_mc", "sigma2_se",
           "sigma2_theory", "rel_fluct_mc", "rel_fluct_theory"]
    )
    row = (
        [SCHEMA_VERSION] + _spec_cols(spec)
        + [cfg.seed, obs.mu, obs.budget_mean, obs.budget_var, obs.se_budget_var,
           sigma2, obs.budget_var / w ** 2, sigma2 / w ** 2]
    )
    files = [_write_csv(out / "ensemble.csv", header, [row])]
    resolved = resolved_tree(spec, cfg, ensemble="grand")
    return _finish(out, "ensemble-check", resolved, cfg.seed, files, t0,
                   equilibrated=obs.equilibrated)


# ---------------------------------------------------------------------------
# figure-style studies (desk-scale defaults; --scale adjusts sweeps)
# ---------------------------------------------------------------------------

def _default_chain(seed: int, scale: float, **overrides) -> ChainConfig:
    base = ChainConfig(seed=seed, measure_sweeps=100_000, burn_in_sweeps=10_000,
                       **overrides)
    return _scaled_chain(base, scale)


def _point_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence([int(master), int(index)]).generate_state(1)[0])


def _fig1(out: Path, seed: int, scale: float) -> List[Path]:
    """Three regimes of the concentration transition at M=6."""
    M, N, beta, k = 6, 16, 50.0, 2.0
    points = [(0.5, 1.0), (10.0, 0.01), (10.0, 0.1)]
    header = (
        ["schema_version"] + _SPEC_HEADER
        + ["seed", "herfindahl_mc", "herfindahl_se", "herfindahl_theory",
           "regime", "equilibrated"]
        + [f"xbar_{i}" for i in range(M)]
    )
    rows = []
    equil = True
    for idx, (w, c) in enumerate(points):
        spec = ModelSpec.uniform(num_goods=M, num_agents=N, beta=beta, budget=w)
        spec = spec.with_interaction(MeanFieldPreference(c=c, k=k))
        cfg = _default_chain(_point_seed(seed, idx), scale, proposal_sigma=0.5)
        obs = run_chain(spec, cfg)
        sol = solve_saddle(spec)
        h_th = herfindahl(sol.xbar, spec.prices)
        regime = "condensed" if h_th > 0.5 else "non-condensed"
        equil = equil and obs.equilibrated
        rows.append(
            [SCHEMA_VERSION] + _spec_cols(spec)
            + [cfg.seed, obs.herfindahl, obs.se_herfindahl, h_th, regime,
               obs.equilibrated]
            + list(obs.mean_x.mean(axis=0))
        )
    return [_write_csv(out / "fig1.csv", header, rows)], equil


def _fig2(out: Path, seed: int, scale: float) -> List[Path]:
    """Concentration surface over (c, beta) with the critical-line curve."""
    M, N, w, k = 4, 64, 10.0, 2.0
    betas = [1.0, 2.0, 4.0, 10.0]
    ratios = [0.25, 0.5, 0.75, 1.0, 1.25, 1.75, 2.5]
    header = (
        ["schema_version"] + _SPEC_HEADER
        + ["seed", "c_over_ccrit", "herfindahl_mc", "herfindahl_se", "equilibrated"]
    )
    rows = []
    equil = True
    idx = 0
    base = ModelSpec.uniform(num_goods=M, num_agents=N, beta=betas[0], budget=w)
    for beta in betas:
        cc = critical_c(
            base.with_beta(beta).with_interaction(MeanFieldPreference(c=0.01, k=k))
        ).c_crit
        for r in ratios:
            spec = base.with_beta(beta).with_interaction(
                MeanFieldPreference(c=r * cc, k=k)
            )
            cfg = _default_chain(_point_seed(seed, idx), scale)
            obs = run_chain(spec, cfg)
            equil = equil and obs.equilibrated
            rows.append(
                [SCHEMA_VERSION] + _spec_cols(spec)
                + [cfg.seed, r, obs.herfindahl, obs.se_herfindahl, obs.equilibrated]
            )
            idx += 1
    files = [_write_csv(out / "fig2_surface.csv", header, rows)]

    theory = []
    for beta in np.geomspace(0.5, 20.0, 25):
        lines = critical_c(
            base.with_beta(float(beta)).with_interaction(
                MeanFieldPreference(c=0.01, k=k)
            )
        )
        theory.append([SCHEMA_VERSION, float(beta), lines.c_inf, lines.c_crit])
    files.append(
        _write_csv(out / "fig2_theory.csv",
                   ["schema_version", "beta", "c_inf", "c_crit"], theory)
    )

    # near-critical switching trajectory, flagged as a trace output
    cc10 = critical_c(
        base.with_beta(10.0).with_interaction(MeanFieldPreference(c=0.01, k=k))
    ).c_crit
    spec = base.with_beta(10.0).with_interaction(MeanFieldPreference(c=1.05 * cc10, k=k))
    cfg = replace(_default_chain(_point_seed(seed, 999), scale), record_trace=True,
                  thinning=10)
    obs = run_chain(spec, cfg)
    trace = _trace_file(out, "fig2", spec, obs)
    if trace is not None:
        files.append(trace)
    return files, equil


_FIG34_PRICES = (2.2, 2.1, 1.6, 2.3)


def _fig34_spec(c: float, beta: float) -> ModelSpec:
    return ModelSpec(
        prices=np.array(_FIG34_PRICES),
        preferences=np.ones(4),
        budgets=np.full(16, 10.0),
        beta=beta,
        interaction=MeanFieldPreference(c=c, k=2.0),
    )


def _fig3(out: Path, seed: int, scale: float) -> List[Path]:
    """Individual Slutsky entries vs c: pathwise and FR, against beta=inf."""
    beta = 4.0
    cc = critical_c(_fig34_spec(0.01, beta)).c_crit
    ratios = [0.1, 0.3, 0.6, 1.0, 1.5, 3.0, 10.0]
    M = 4
    rows = []
    equil = True
    for idx, r in enumerate(ratios):
        spec = _fig34_spec(r * cc, beta)
        cfg = _default_chain(_point_seed(seed, idx), scale)
        pw = pathwise_slutsky(spec, cfg, rel_step=1e-2)
        rows.append(_slutsky_row("Pathwise", spec, cfg.seed, pw, c_ratio=r))
        obs = run_chain(spec, cfg)
        equil = equil and obs.equilibrated
        if obs.fr is not None:
            fr = fr_slutsky(spec, obs.fr, batch_moments=obs.fr_batches)
            rows.append(_slutsky_row("FluctuationResponse", spec, cfg.seed, fr,
                                     c_ratio=r))
    files = [_write_csv(out / "fig3.csv", _slutsky_header(M), rows)]

    theory = []
    cc_inf = critical_c(_fig34_spec(0.01, math.inf)).c_inf
    for r in np.geomspace(0.05, 20.0, 40):
        spec = _fig34_spec(float(r) * cc_inf, math.inf)
        est = closed_form_estimate(spec)
        theory.append(_slutsky_row("ClosedFormBetaInf", spec, None, est,
                                   c_ratio=float(r)))
    files.append(_write_csv(out / "fig3_theory.csv", _slutsky_header(M), theory))
    return files, equil


def _fig4(out: Path, seed: int, scale: float) -> List[Path]:
    """Spectrum, asymmetry, and decay of the beta=inf matrix vs coupling."""
    cc_inf = critical_c(_fig34_spec(0.01, math.inf)).c_inf
    header = (
        ["schema_version", "c", "c_over_cinf", "chi", "chi_aggregate",
         "max_re_eig", "frobenius", "trace"]
    )
    rows = []
    for r in np.geomspace(0.05, 120.0, 40):
        spec = _fig34_spec(float(r) * cc_inf, math.inf)
        est = closed_form_estimate(spec)
        agg_chi = slutsky_metrics(est.aggregate, spec.prices).chi
        rows.append([
            SCHEMA_VERSION, float(r) * cc_inf, float(r), est.metrics.chi,
            agg_chi, float(np.max(est.metrics.eigenvalues.real)),
            float(np.linalg.norm(est.mean_individual)), est.metrics.trace,
        ])
    return [_write_csv(out / "fig4_theory.csv", header, rows)], None


def _fig5(out: Path, seed: int, scale: float) -> List[Path]:
    """Relative budget fluctuations in the soft-constraint ensemble.

    Soft-budget chains only have a stationary state below the critical
    coupling: past it the concentrated basket is not holdable at fixed mu
    (the preference amplification outgrows the linear spend penalty), and
    the unconcentrated branch folds at the critical line.  MC points
    therefore stay below c_crit; the 1/c decay beyond it is covered by the
    theory curve, which follows the global free-energy minimum.
    """
    M, w, k = 4, 10.0, 2.0
    base = ModelSpec.uniform(num_goods=M, num_agents=256, beta=1.0, budget=w)
    header = (
        ["schema_version"] + _SPEC_HEADER
        + ["seed", "c_over_ccrit", "mu", "sigma2_mc", "sigma2_se",
           "sigma2_theory", "sigma2_beta_mc"]
    )
    rows = []
    equil = True
    idx = 0
    for beta in (1.0, 4.0):
        cc = critical_c(
            base.with_beta(beta).with_interaction(MeanFieldPreference(c=0.01, k=k))
        ).c_crit
        for r in (0.0, 0.25, 0.5):
            spec = base.with_beta(beta)
            if r > 0:
                spec = spec.with_interaction(MeanFieldPreference(c=r * cc, k=k))
            cfg = _default_chain(_point_seed(seed, idx), scale)
            sigma2 = budget_variance_sigma2(spec, solve_saddle(spec).xbar)
            try:
                obs = run_grand_canonical_chain(spec, cfg)
            except CalibrationFailure:
                # no holdable state at this coupling/size: keep the theory
                # value, flag the run, leave the MC columns empty
                equil = False
                rows.append(
                    [SCHEMA_VERSION] + _spec_cols(spec)
                    + [cfg.seed, r, math.nan, math.nan, math.nan,
                       sigma2, math.nan]
                )
            else:
                equil = equil and obs.equilibrated
                rows.append(
                    [SCHEMA_VERSION] + _spec_cols(spec)
                    + [cfg.seed, r, obs.mu, obs.budget_var, obs.se_budget_var,
                       sigma2, obs.budget_var * beta]
                )
            idx += 1
    files = [_write_csv(out / "fig5.csv", header, rows)]

    theory_header = ["schema_version", "beta", "c", "c_over_ccrit", "mu",
                     "herfindahl", "sigma2", "sigma2_beta", "branch"]
    theory = []
    for beta in (1.0, 4.0):
        cc = critical_c(
            base.with_beta(beta).with_interaction(MeanFieldPreference(c=0.01, k=k))
        ).c_crit
        for r in [0.0] + list(np.geomspace(0.05, 20.0, 40)):
            spec = base.with_beta(beta)
            if r > 0:
                spec = spec.with_interaction(
                    MeanFieldPreference(c=float(r) * cc, k=k)
                )
            sol = solve_saddle(spec)
            s2 = budget_variance_sigma2(spec, sol.xbar)
            theory.append([
                SCHEMA_VERSION, beta, float(r) * cc, float(r), sol.mu,
                herfindahl(sol.xbar, spec.prices), s2, s2 * beta, sol.branch,
            ])
    files.append(_write_csv(out / "fig5_theory.csv", theory_header, theory))
    return files, equil


FIGURES = {"fig1": _fig1, "fig2": _fig2, "fig3": _fig3, "fig4": _fig4, "fig5": _fig5}


def run_experiment(name: str, out_dir, seed: int = 12345,
                   scale: float = 1.0) -> List[Path]:
    if name not in FIGURES:
        raise ConfigError(
            f"unknown experiment {name!r}; expected one of {sorted(FIGURES)}"
        )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    files, equil = FIGURES[name](out, seed, scale)
    return _finish(out, name, {"experiment": name}, seed, files, t0,
                   equilibrated=equil, notes={"scale": scale})


# ---------------------------------------------------------------------------
# parameter sweeps
# ---------------------------------------------------------------------------

_AXIS_NAMES = ("c", "beta", "w", "M", "N", "J", "rho")


def _apply_axes(model_tree: dict, assignment: dict) -> dict:
    t = copy.deepcopy(model_tree)
    inter = dict(t.get("interaction") or {})
    for name, value in assignment.items():
        if name == "beta":
            t["beta"] = value
        elif name == "w":
            t["budget"] = value
        elif name == "M":
            t["goods"] = int(value)
            for key in ("prices", "preferences"):
                if isinstance(t.get(key), (list, tuple)) and len(t[key]) != int(value):
                    raise ConfigError(
                        f"sweep over M conflicts with explicit {key} of length "
                        f"{len(t[key])}"
                    )
        elif name == "N":
            t["agents"] = int(value)
            if isinstance(t.get("budget"), (list, tuple)):
                raise ConfigError("sweep over N conflicts with per-agent budgets")
        elif name == "c":
            inter.setdefault("type", "meanfield")
            inter["c"] = value
        elif name in ("J", "rho"):
            inter.setdefault("type", "hamiltonian")
            inter[name] = value
        else:
            raise ConfigError(f"unknown sweep axis {name!r}")
    if inter:
        t["interaction"] = inter
    return t


def _sweep_points(sweep_tree: dict) -> List[dict]:
    axes = sweep_tree.get("axes") or {}
    for name in axes:
        if name not in _AXIS_NAMES:
            raise ConfigError(f"unknown sweep axis {name!r}")
        if not isinstance(axes[name], (list, tuple)) or not axes[name]:
            raise ConfigError(f"sweep axis {name!r} must be a non-empty list")
    names = sorted(axes)
    grids = [axes[n] for n in names]
    points = [{}]
    for name, values in zip(names, grids):
        points = [dict(p, **{name: v}) for p in points for v in values]
    replicates = int(sweep_tree.get("replicates", 1))
    if replicates < 1:
        raise ConfigError("sweep replicates must be >= 1")
    budget = int(sweep_tree.get("max_points", 512))
    if len(points) * replicates > budget:
        raise ConfigError(
            f"sweep has {len(points) * replicates} chains, over the "
            f"max_points budget of {budget}"
        )
    return points


def _sweep_one(args):
    """One sweep chain; top-level so process pools can pickle it."""
    index, assignment, rep, model_tree, chain_tree, seed, scale = args
    try:
        spec = build_model(_apply_axes(model_tree, assignment))
        cfg = _scaled_chain(build_chain(chain_tree, seed), scale)
        obs = run_chain(spec, cfg)
        return index, rep, assignment, spec, cfg, obs, None
    except Exception as exc:   # partial-failure contract: report, keep going
        return index, rep, assignment, None, None, None, f"{type(exc).__name__}: {exc}"


def sweep_run(tree: dict, out_dir, seed: Optional[int] = None, scale: float = 1.0,
              threads: int = 1) -> List[Path]:
    """Grid sweep: MC per point/replicate plus theory columns per point."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    sweep_tree = tree.get("sweep")
    if not sweep_tree:
        raise ConfigError("sweep requires a `sweep:` section in the config")
    master = int(seed if seed is not None else
                 (tree.get("chain") or {}).get("seed", _CHAIN_DEFAULT_SEED))
    model_tree = tree.get("model") or {}
    chain_tree = dict(tree.get("chain") or {})
    points = _sweep_points(sweep_tree)
    replicates = int(sweep_tree.get("replicates", 1))

    tasks = []
    index = 0
    for p_idx, assignment in enumerate(points):
        for rep in range(replicates):
            tasks.append((
                p_idx, assignment, rep, model_tree, chain_tree,
                _point_seed(master, index), scale,
            ))
            index += 1
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_sweep_one, tasks))
    else:
        results = [_sweep_one(t) for t in tasks]

    axis_names = sorted((sweep_tree.get("axes") or {}).keys())
    M_probe = 0
    for p in points:
        try:
            M_probe = max(M_probe, build_model(_apply_axes(model_tree, p)).num_goods)
        except Exception:
            continue
    if M_probe == 0:
        raise ConfigError("no sweep point yields a valid model")
    header = (
        ["schema_version", "point", "replicate"] + [f"axis_{n}" for n in axis_names]
        + _SPEC_HEADER
        + ["seed", "n_samples", "acceptance", "equilibrated", "geweke_z",
           "herfindahl", "herfindahl_se"]
        + [f"xbar_{i}" for i in range(M_probe)]
        + [f"xbar_se_{i}" for i in range(M_probe)]
    )
    rows, failures = [], []
    for p_idx, rep, assignment, spec, cfg, obs, err in results:
        if err is not None:
            failures.append((p_idx, rep, assignment, err))
            continue
        pooled = obs.mean_x.mean(axis=0)
        pooled_se = obs.se_mean_x.mean(axis=0) / math.sqrt(spec.num_agents)
        pad = M_probe - spec.num_goods
        rows.append(
            [SCHEMA_VERSION, p_idx, rep] + [assignment[n] for n in axis_names]
            + _spec_cols(spec)
            + [cfg.seed, obs.n_samples, obs.acceptance_rate, obs.equilibrated,
               obs.geweke_z, obs.herfindahl, obs.se_herfindahl]
            + list(pooled) + [None] * pad + list(pooled_se) + [None] * pad
        )
    files = [_write_csv(out / "sweep.csv", header, rows)]

    theory_rows = []
    for p_idx, assignment in enumerate(points):
        try:
            spec = build_model(_apply_axes(model_tree, assignment))
            if hasattr(spec.interaction, "rho"):
                xbar_th = hamiltonian_meanfield(spec).x_star
            else:
                xbar_th = solve_saddle(spec).xbar
        except Exception as exc:
            failures.append((p_idx, "theory", assignment,
                             f"{type(exc).__name__}: {exc}"))
            continue
        pad = M_probe - spec.num_goods
        theory_rows.append(
            [SCHEMA_VERSION, p_idx] + [assignment[n] for n in axis_names]
            + list(xbar_th) + [None] * pad
            + [herfindahl(xbar_th, spec.prices)]
        )
    files.append(_write_csv(
        out / "sweep_theory.csv",
        ["schema_version", "point"] + [f"axis_{n}" for n in axis_names]
        + [f"xbar_theory_{i}" for i in range(M_probe)] + ["herfindahl_theory"],
        theory_rows,
    ))
    notes = {"scale": scale, "threads": threads}
    if failures:
        report = out / "sweep_failures.txt"
        with open(report, "w", encoding="utf-8") as fh:
            for p_idx, rep, assignment, err in failures:
                fh.write(f"point={p_idx} replicate={rep} params={assignment}: {err}\n")
        files.append(report)
        notes["failed_points"] = len(failures)
    full_tree = {"model": model_tree, "chain": chain_tree, "sweep": sweep_tree}
    return _finish(out, "sweep", full_tree, master, files, t0, notes=notes)


def phase_diagram_run(tree: dict, out_dir, seed: Optional[int] = None,
                      scale: float = 1.0) -> List[Path]:
    """Concentration surface for the configured model (fig2-style)."""
    if tree and tree.get("sweep"):
        return sweep_run(tree, out_dir, seed=seed, scale=scale)
    return run_experiment("fig2", out_dir,
                          seed=seed if seed is not None else _CHAIN_DEFAULT_SEED,
                          scale=scale)


# ---------------------------------------------------------------------------
# manifest replay
# ---------------------------------------------------------------------------

_EXECUTORS = {
    "simulate": simulate_run,
    "solve": solve_run,
    "slutsky": slutsky_run,
    "ensemble-check": ensemble_check_run,
}


def rerun(man, out_dir) -> List[Path]:
    out = Path(out_dir)
    if man.kind in _EXECUTORS:
        return _EXECUTORS[man.kind](man.config, out, seed=man.seed)
    if man.kind in FIGURES:
        return run_experiment(man.kind, out, seed=man.seed,
                              scale=man.notes.get("scale", 1.0))
    if man.kind == "sweep":
        return sweep_run(man.config, out, seed=man.seed,
                         scale=man.notes.get("scale", 1.0),
                         threads=1)
    raise ConfigError(f"manifest kind {man.kind!r} has no replay handler")
