"""Config-driven runners behind the command line: convergence sweeps, minimax
demos, margin reports and single ERM runs.

Every runner writes deterministic files: identical config and master seed give
byte-identical CSV/JSON at any thread count. Wall-clock timings go to a
separate ``timings.csv`` for that reason.
"""
from __future__ import annotations

import csv
import json
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from . import margin as mg
from . import minimax as mm
from . import quantizer as qz
from .config import (SCHEMA_VERSION, AdversarialSpec, ExperimentConfig, build_distribution)
from .distributions import ConeBallDistribution, FiniteSupport
from .fitting import fit_loglog_slope
from .seeding import mix

CONVERGENCE_COLUMNS = ("n", "rep", "excess_risk", "excess_risk_se", "erm_method")
TIMING_COLUMNS = ("n", "rep", "wall_time_ms")
MINIMAX_COLUMNS = ("n", "sigma_id", "rep", "excess_risk", "method")

# stream ids passed as the grid index to ``mix`` for non-grid work
_OPTIMAL_STREAM = 0xFFFF0000
_SEPARATION_STREAM = 0xFFFF0001
_MARGIN_STREAM = 0xFFFF0002
_ERM_STREAM = 0xFFFF0003


class CertificationError(RuntimeError):
    """The optimal risk of the distribution is not known to the runner."""


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row[c]) for c in columns])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return v
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    body = {"schema_version": SCHEMA_VERSION, **payload}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(body), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _pool_map(fn: Callable, tasks: list, threads: int) -> list:
    """Ordered map, serial or over a thread pool; the result order never depends on scheduling."""
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def _out(cfg: ExperimentConfig, out_dir) -> Path:
    return Path(out_dir if out_dir is not None else cfg.out_dir)


def _config_echo(cfg: ExperimentConfig) -> dict:
    return cfg.model_dump(mode="json")


def erm_fit(sample: np.ndarray, k: int, cfg: ExperimentConfig, seed: int) -> tuple[np.ndarray, str]:
    if cfg.erm_method == "exhaustive":
        return qz.erm_exhaustive(sample, k), "exhaustive"
    return qz.erm_multistart(sample, k, restarts=cfg.restarts, seed=seed), f"multistart-{cfg.restarts}"


def load_optimal(path) -> qz.CodebookSet:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return qz.CodebookSet.from_dict(data.get("optimal", data))


def resolve_optimal(cfg: ExperimentConfig, dist) -> qz.CodebookSet:
    """Optimal set with a trustworthy risk: exact, analytic, or loaded from a certificate file."""
    if cfg.optimal_path is not None:
        return load_optimal(cfg.optimal_path)
    if isinstance(dist, FiniteSupport) and qz.partition_count(len(dist.atoms), cfg.k) <= qz.EXHAUSTIVE_GUARD:
        return qz.optimal_codebooks(dist, cfg.k)
    if isinstance(dist, ConeBallDistribution) and dist.origin is not None and dist.origin[0].k == cfg.k:
        return qz.optimal_codebooks(dist, cfg.k)
    raise CertificationError(
        "the optimal risk of this distribution has no closed form; run "
        "`vqmargin margin-report` on the same distribution first, then set "
        "\"optimal_path\" to the optimal.json it writes")


# ---------------------------------------------------------------------------
# convergence


def run_convergence(cfg: ExperimentConfig, threads: int = 1, out_dir=None) -> dict[str, Any]:
    """Excess risk of the ERM codebook over a grid of sample sizes, with a log-log slope fit."""
    spec = cfg.distribution
    if isinstance(spec, AdversarialSpec) and spec.retuned:
        return run_minimax_demo(cfg, threads, out_dir)
    out = _out(cfg, out_dir)
    dist = build_distribution(spec)
    optimal = resolve_optimal(cfg, dist)
    k, seed = cfg.k, cfg.master_seed
    tasks = [(g, r) for g in range(len(cfg.n_grid)) for r in range(cfg.reps)]

    def work(task):
        g, r = task
        n = cfg.n_grid[g]
        t0 = time.perf_counter()
        s = mix(seed, g, r)
        X = dist.sample(n, s)
        c, method = erm_fit(X, k, cfg, mix(s, 1, 0))
        ex = qz.loss(c, dist, optimal, n_mc=cfg.n_mc, seed=mix(s, 2, 0))
        ms = (time.perf_counter() - t0) * 1e3
        return ({"n": n, "rep": r, "excess_risk": ex.value, "excess_risk_se": ex.std_error,
                 "erm_method": method}, {"n": n, "rep": r, "wall_time_ms": round(ms, 3)})

    results = _pool_map(work, tasks, threads)
    rows = [a for a, _ in results]
    write_csv(out / "convergence.csv", CONVERGENCE_COLUMNS, rows)
    write_csv(out / "timings.csv", TIMING_COLUMNS, [b for _, b in results])

    summary = []
    for n in cfg.n_grid:
        v = np.array([row["excess_risk"] for row in rows if row["n"] == n])
        se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
        summary.append({"n": n, "mean_excess": float(v.mean()), "se": se, "reps": len(v)})
    fit = None
    if all(s["mean_excess"] > 0 for s in summary):
        fit = fit_loglog_slope([s["n"] for s in summary], [s["mean_excess"] for s in summary],
                               [s["se"] for s in summary], drop_first=cfg.drop_first)
    result = {"command": "convergence", "config": _config_echo(cfg), "summary": summary,
              "fit": None if fit is None else fit.to_dict(),
              "optimal": optimal.to_dict()}
    if fit is None:
        result["note"] = "a mean excess risk is not positive; no log-log fit"
    write_json(out / "convergence_summary.json", result)
    return result


# ---------------------------------------------------------------------------
# minimax demo


def run_minimax_demo(cfg: ExperimentConfig, threads: int = 1, out_dir=None) -> dict[str, Any]:
    """Sup over sign patterns of the mean excess risk, with delta retuned at every n."""
    spec = cfg.distribution
    if not isinstance(spec, AdversarialSpec):
        raise ValueError("minimax-demo needs an adversarial distribution spec")
    out = _out(cfg, out_dir)
    algo = mm.default_algorithm(cfg.restarts)
    n_mc = min(cfg.n_mc, 20_000)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if spec.retuned:
            table = mm.minimax_experiment(spec.family_for, algo, cfg.n_grid, cfg.reps, cfg.master_seed,
                                          threads=threads, n_mc=n_mc)
        else:
            fam = spec.family_for()
            table = mm.minimax_experiment(lambda n: fam, algo, cfg.n_grid, cfg.reps, cfg.master_seed,
                                          threads=threads, n_mc=n_mc, signs=[spec.signs(fam.m)])
    write_csv(out / "minimax.csv", MINIMAX_COLUMNS, table.rows)
    result = {"command": "minimax-demo", "config": _config_echo(cfg), "summary": table.summary,
              "fit": None if table.fit is None else table.fit.to_dict(),
              "n_patterns": table.n_patterns, "patterns_subsampled": table.patterns_subsampled,
              "excluded_clamped": [row["n"] for row in table.summary if row["clamped"]]}
    write_json(out / "minimax_summary.json", result)
    return result


# ---------------------------------------------------------------------------
# margin report


def _default_radius(cfg, dist, optimal, books_B: float) -> tuple[float, str]:
    spec = cfg.distribution
    if cfg.r0 is not None:
        return cfg.r0, "config"
    if isinstance(spec, AdversarialSpec):
        return dist.origin[0].r0, "family"
    if isinstance(dist, FiniteSupport):
        r = mg.zero_weight_radius(optimal, dist)
        if r > 0:
            return r * mg.ZERO_WEIGHT_SHRINK, "zero-weight"
    return books_B / 2, "half-B"


def run_margin_report(cfg: ExperimentConfig, threads: int = 1, out_dir=None) -> dict[str, Any]:
    """optimal codebooks -> B, p_min -> margin check -> separation -> kappa0."""
    if cfg.k < 2:
        raise ValueError("margin quantities need k >= 2")
    out = _out(cfg, out_dir)
    spec = cfg.distribution
    dist = build_distribution(spec, cfg.n_grid[0] if cfg.n_grid else None)
    seed = cfg.master_seed
    opt_seed = mix(seed, _OPTIMAL_STREAM, 0)
    optimal = qz.optimal_codebooks(dist, cfg.k, effort=cfg.effort, seed=opt_seed, n_mc=cfg.n_mc)
    B = min(mg.min_code_distance(c) for c in optimal)
    r0, source = _default_radius(cfg, dist, optimal, B)
    sep_seed = mix(seed, _SEPARATION_STREAM, 0)
    sep = mg.separation(dist, cfg.k, budget=cfg.budget, seed=sep_seed, n_mc=min(cfg.n_mc, 100_000))
    eps = sep.epsilon if math.isfinite(sep.epsilon) and sep.epsilon > 0 else None
    margin_seed = mix(seed, _MARGIN_STREAM, 0)
    if source == "half-B":
        # continuous family without a known radius: report the largest certified one
        cert = mg.certify_radius(optimal, dist, r0, grid_size=max(cfg.grid_size, 8), n_mc=cfg.n_mc,
                                 seed=margin_seed)
        if cert > 0:
            r0, source = cert, "grid-certified"
    report = mg.margin_check(optimal, dist, r0, grid_size=cfg.grid_size, n_mc=cfg.n_mc,
                             seed=margin_seed, epsilon=eps)
    if eps is None:
        report.diagnostics["kappa0"] = "not computed: no finite separation estimate"
    result = {"command": "margin-report", "config": _config_echo(cfg),
              "seeds": {"optimal": opt_seed, "separation": sep_seed, "margin": margin_seed},
              "r0_source": source, "margin": report.to_dict(), "separation": sep.to_dict(),
              "optimal": optimal.to_dict()}
    if isinstance(spec, AdversarialSpec):
        fam = dist.origin[0]
        result["family"] = fam.to_dict()
        result["family_reference"] = {"B": fam.Delta, "r0": fam.r0, "epsilon": fam.epsilon,
                                      "p_min_floor": 1.0 / (2 * fam.k)}
    write_json(out / "margin_report.json", result)
    write_json(out / "optimal.json", {"optimal": optimal.to_dict(), "distribution": dist.to_spec(),
                                      "k": cfg.k})
    return result


# ---------------------------------------------------------------------------
# single ERM run


def run_erm(cfg: ExperimentConfig, threads: int = 1, out_dir=None) -> dict[str, Any]:
    out = _out(cfg, out_dir)
    n = cfg.n_grid[-1]
    dist = build_distribution(cfg.distribution, n)
    s = mix(cfg.master_seed, _ERM_STREAM, 0)
    X = dist.sample(n, s)
    c, method = erm_fit(X, cfg.k, cfg, mix(s, 1, 0))
    risk = qz.true_risk(c, dist, n_mc=cfg.n_mc, seed=mix(s, 2, 0))
    result = {"command": "erm", "config": _config_echo(cfg), "n": n, "erm_method": method,
              "codebook": qz.canonical(c).tolist(), "empirical_risk": qz.empirical_risk(c, X),
              "risk": risk.to_dict()}
    write_json(out / "erm.json", result)
    return result


RUNNERS = {
    "convergence": run_convergence,
    "minimax-demo": run_minimax_demo,
    "margin-report": run_margin_report,
    "erm": run_erm,
}
