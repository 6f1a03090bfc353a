"""Acceptance criteria, each run at its tolerance and time limit.

Every criterion records one PASS/FAIL line; the lines are printed in the
terminal summary of the pytest run (and immediately with ``-s``).
"""
import itertools
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate

from vqmargin import experiments as ex
from vqmargin import geometry as geo
from vqmargin import margin as mg
from vqmargin import minimax as mm
from vqmargin import quantizer as qz
from vqmargin.config import load_config
from vqmargin.distributions import ConeBallDistribution, FiniteSupport, UniformBall, cone_cell_moment
from vqmargin.verify import FLOOR, erm_oracle_audit, reduction_audit

ROOT = Path(__file__).resolve().parents[1]
RESULTS = []


def _fam0():
    return mm.build_family(3, 2, 1.0, n=100)


def _record(num, title, limit, checks):
    """Run ``checks`` (returns a list of (name, ok, detail)), time it, record and assert."""
    t0 = time.perf_counter()
    try:
        items = checks()
    except Exception as exc:  # an error is a failed criterion, not a missing line
        items = [("raised", False, repr(exc))]
    dt = time.perf_counter() - t0
    failed = [f"{name} ({detail})" for name, ok, detail in items if not ok]
    if dt > limit:
        failed.append(f"took {dt:.1f}s > {limit:g}s")
    line = f"{'PASS' if not failed else 'FAIL'} criterion {num}: {title} [{dt:.1f}s / {limit:g}s]"
    if failed:
        line += " -- " + "; ".join(failed)
    RESULTS.append(line)
    print(line)
    assert not failed, line


def _cfg(name, tmp_path, **update):
    cfg = load_config(ROOT / "configs" / name)
    return cfg.model_copy(update={"out_dir": str(tmp_path / Path(name).stem), **update})


def test_criterion_01_cone_moment():
    def run():
        rho, d = 0.1, 2
        mu = cone_cell_moment(rho, d)
        num = integrate.quad(lambda r: r ** 2 * (rho - r) * r ** (d - 1), 0, rho, epsabs=1e-16)[0]
        den = integrate.quad(lambda r: (rho - r) * r ** (d - 1), 0, rho, epsabs=1e-16)[0]
        P = ConeBallDistribution([[0.0, 0.0]], rho, [1.0], 1.0)
        X = P.sample(1_000_000, 2024)
        mc = float(np.mean(np.sum(X ** 2, axis=1)))
        return [("value 0.003", abs(mu - 0.003) <= 1e-15, mu),
                ("quadrature 1e-10", abs(mu - num / den) <= 1e-10, num / den),
                ("Monte Carlo 0.5%", abs(mc - mu) <= 0.005 * mu, mc)]
    _record(1, "closed-form cone moment", 5, run)


def test_criterion_02_risk_gap_identity():
    def run():
        fam = _fam0()
        signs = mm.balanced_signs(fam.m)
        out = []
        for sp, sq in itertools.product(signs, repeat=2):
            P = mm.p_sigma(fam, sp)
            S = qz.cone_offsets(P, 1_000_000, 7)
            base = qz.cone_ball_contrasts(mm.q_sigma(fam, sp), P, S)
            v = qz.cone_ball_contrasts(mm.q_sigma(fam, sq), P, S)
            diff, se = qz._stratified(v - base, P.masses)
            ident = fam.Delta ** 2 * fam.delta / (8 * fam.m) * mm.sign_distance(sp, sq)
            closed = mm.closed_risk(fam, sq, sp) - mm.closed_risk(fam, sp, sp)
            out.append((f"sigma={sp.tolist()} sigma'={sq.tolist()}",
                        abs(diff - ident) <= 3 * se + FLOOR and abs(closed - ident) <= 1e-15,
                        f"mc={diff:.6g} se={se:.2g} identity={ident:.6g}"))
        return out
    _record(2, "risk-gap identity on the reference family", 30, run)


def test_criterion_03_hellinger():
    def run():
        out = []
        for k, d, delta in [(3, 2, 0.1), (6, 2, 0.05), (9, 3, 1 / 3)]:
            fam = mm.build_family(k, d, 1.0, delta=delta)
            for s, t in itertools.combinations(mm.balanced_signs(fam.m), 2):
                if mm.sign_distance(s, t) != 4:
                    continue
                for n in (1, 2, 5, 10):
                    h = mm.hellinger(fam, s, t, n)
                    out.append((f"k={k} n={n} affinity", abs(h.affinity - h.affinity_closed_form) <= 1e-14,
                                h.affinity))
                    out.append((f"k={k} n={n} bound", h.h2_exact <= h.h2_bound, h.h2_exact))
        return out
    _record(3, "Hellinger affinity and product bound", 1, run)


def test_criterion_04_erm_oracle():
    def run():
        res = erm_oracle_audit(100, 4)
        return [("matches in >= 95", res["matched"] >= 95, res["matched"]),
                ("never beats exhaustive", res["multistart_beats_oracle"] == 0, res["multistart_beats_oracle"])]
    _record(4, "multistart ERM matches the exhaustive oracle", 60, run)


def test_criterion_05_voronoi_audit():
    def run():
        a = geo.boundary_closeness_audit(100_000, k=3, d=2, M=1.0, seed=5, tol=1e-9)
        return [("inner-product bound", a.vor1_violations == 0, a.vor1_violations),
                ("bisector-distance bound", a.vor2_violations == 0, a.vor2_violations)]
    _record(5, "label-change bounds on 1e5 triples", 30, run)


def test_criterion_06_key_inequality():
    def run():
        fam = _fam0()
        P = mm.p_sigma(fam, [1, -1])
        opt = qz.optimal_codebooks(P, 3)
        q = mg.margin_quantities(opt, P)
        kap = mg.kappa0(3, fam.M, fam.epsilon, q.p_min, q.B, fam.r0)
        res = mg.key_inequality_audit(P, opt, kap, trials=1000, seed=6)
        return [("zero violations", res.violations == 0, f"{res.violations} of {res.trials}")]
    _record(6, "codebook distance controlled by excess risk", 300, run)


def test_criterion_07_reduction():
    def run():
        fam = _fam0()
        res = reduction_audit(fam, np.array([1, -1]), 200, seed=7)
        return [("members of the canonical family", res["non_members"] == 0, res["non_members"]),
                ("no risk increase beyond 3 SE", res["risk_violations"] == 0, res["risk_violations"]),
                ("recentering bound", res["recentering_violations"] == 0, res["recentering_violations"])]
    _record(7, "quantizer reduction on 200 codebooks", 300, run)


def _slope_ok(result, lo, hi):
    s = result["fit"]["slope"]
    return lo <= s <= hi, f"slope={s:.3f}"


def test_criterion_08a_fast_rate_cone(tmp_path):
    def run():
        cfg = _cfg("fast_rate_cone.json", tmp_path)
        assert cfg.reps == 50 and cfg.n_grid == [2 ** j for j in range(6, 13)]
        ok, detail = _slope_ok(ex.run_convergence(cfg), -1.35, -0.65)
        return [("slope in [-1.35, -0.65]", ok, detail)]
    _record(8, "fast rate on the fixed-delta cone family", 300, run)


def test_criterion_08b_fast_rate_gaussian(tmp_path):
    def run():
        mcfg = _cfg("margin_gaussian.json", tmp_path)
        dist = mcfg.distribution
        from vqmargin.config import build_distribution
        qg = build_distribution(dist)
        w = qg.weights
        cond = mg.gaussian_condition(w.min(), w.max(), 3, qg.sigma, qg.B_tilde, qg.M, qg.eps_trunc)[0]
        ex.run_margin_report(mcfg)
        cfg = _cfg("fast_rate_gaussian.json", tmp_path,
                   optimal_path=str(tmp_path / "margin_gaussian" / "optimal.json"))
        ok, detail = _slope_ok(ex.run_convergence(cfg), -1.35, -0.65)
        return [("mixture passes the polarization condition", cond, cond),
                ("slope in [-1.35, -0.65]", ok, detail)]
    _record("8", "fast rate on a polarized quasi-Gaussian mixture", 300, run)


def test_criterion_09_slow_rate(tmp_path):
    def run():
        cfg = _cfg("minimax_sweep.json", tmp_path)
        assert cfg.distribution.retuned
        ok, detail = _slope_ok(ex.run_minimax_demo(cfg), -0.75, -0.25)
        return [("sup-over-sigma slope in [-0.75, -0.25]", ok, detail)]
    _record(9, "slow rate under the retuned minimax family", 600, run)


def test_criterion_10_margin_verdicts():
    def run():
        out = []
        fs = FiniteSupport([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]], [0.2, 0.3, 0.5], M=2.0)
        o = qz.optimal_codebooks(fs, 3)
        r0 = mg.zero_weight_radius(o, fs)
        out.append(("finite support holds", mg.margin_check(o, fs, r0 * mg.ZERO_WEIGHT_SHRINK).verdict == "holds",
                    r0))
        fam = _fam0()
        P = mm.p_sigma(fam, [1, -1])
        opt = qz.optimal_codebooks(P, 3)
        rep = mg.margin_check(opt, P, fam.r0, n_mc=200_000, seed=10, epsilon=fam.epsilon)
        out.append(("reference family holds", rep.verdict == "holds", rep.verdict))
        out.append(("B = Delta", abs(rep.B - fam.Delta) <= 1e-9, rep.B))
        out.append(("r0 = 7 Delta / 16", rep.r0_tested == 7 * fam.Delta / 16, rep.r0_tested))
        out.append(("p_min >= 1/(2k) - 3 SE", rep.p_min >= 1 / 6 - 3 * rep.p_min_se, rep.p_min))
        U = UniformBall(1.0, 2)
        ou = qz.optimal_codebooks(U, 2, effort=20, seed=0, n_mc=30_000)
        ru = mg.margin_check(ou, U, 0.4, n_mc=50_000, seed=10)
        out.append(("uniform ball fails or is inconclusive", ru.verdict in ("fails", "inconclusive"), ru.verdict))
        out.append(("infinite optimal set diagnosed", bool(ru.diagnostics.get("infinite_optima_suspected")),
                    ru.diagnostics))
        return out
    _record(10, "margin verdicts", 300, run)


def test_criterion_11_gaussian_condition_and_bounds():
    from test_distributions import _triangle

    def run():
        out = []
        ok, t1, t2 = mg.gaussian_condition(1, 1, 3, 0.01, 1.0, 3.0, 0.1)
        out.append(("sigma=0.01 holds", ok and abs(t1 - 0.688) < 1e-3 and t2 < 1e-12, (t1, t2)))
        ok, t1, _ = mg.gaussian_condition(1, 1, 3, 0.2, 1.0, 3.0, 0.1)
        out.append(("sigma=0.2 fails", not ok and abs(t1 / 2.25e4 - 1) < 1e-2, t1))
        ok, t1, t2 = mg.gaussian_condition(1, 1, 3, 1e-8, 1.0, 3.0, 0.1)
        out.append(("small-sigma limit holds", ok and t1 < 1e-10 and t2 == 0.0, (t1, t2)))
        qg = _triangle()
        opt = qz.optimal_codebooks(qg, 3, effort=10, seed=1, n_mc=100_000)
        chk = mg.gaussian_bounds_check(qg, opt, n_mc=400_000, seed=11)
        out.append(("risk of the means", chk.risk_ok, (chk.risk_of_means, chk.risk_bound)))
        out.append(("p_min lower bound", chk.p_min_ok, (chk.p_min, chk.p_min_lower)))
        out.append(("critical area bound", chk.area_ok, list(zip(chk.areas, chk.area_bounds))))
        return out
    _record(11, "Gaussian condition and numeric bounds", 300, run)


def _outputs(d):
    return {p.name: p.read_bytes() for p in sorted(Path(d).iterdir()) if p.name != "timings.csv"}


def test_criterion_12_determinism(tmp_path):
    def run():
        out = []
        small = {"n_grid": [64, 256, 1024], "reps": 6}
        jobs = [("convergence", ex.run_convergence, _cfg("fast_rate_cone.json", tmp_path, **small)),
                ("minimax-demo", ex.run_minimax_demo, _cfg("minimax_sweep.json", tmp_path, **small)),
                ("margin-report", ex.run_margin_report, _cfg("margin_cone.json", tmp_path)),
                ("erm", ex.run_erm, _cfg("erm_small.json", tmp_path))]
        for name, runner, cfg in jobs:
            files = []
            for t in (1, 2, 8):
                d = tmp_path / f"{name}-{t}"
                runner(cfg, threads=t, out_dir=d)
                files.append(_outputs(d))
            out.append((f"{name} byte-identical at 1, 2, 8 threads",
                        files[0] == files[1] == files[2] and len(files[0]) > 0, sorted(files[0])))
        return out
    _record(12, "determinism across worker threads", 600, run)
