"""Property-verification suites run by ``vqmargin verify``.

Each suite returns a list of named checks; a suite passes when every check
does. Sizes are chosen so the full run stays well under ten minutes on one core.
"""
from __future__ import annotations

import itertools
import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy import integrate

from . import geometry as geo
from . import margin as mg
from . import minimax as mm
from . import quantizer as qz
from .distributions import (FiniteSupport, build_quasi_gaussian, cone_cell_moment,
                            unit_ball_volume)
from .seeding import mix


@dataclass
class Check:
    name: str
    passed: bool
    detail: dict[str, Any] = field(default_factory=dict)


def _check(name: str, passed, **detail) -> Check:
    return Check(name, bool(passed), detail)


FLOOR = 1e-12


def _z(diff: float, se: float) -> float:
    """|diff| in standard errors, with an absolute roundoff floor."""
    excess = max(abs(diff) - FLOOR, 0.0)
    return excess / se if se > 0 else (0.0 if excess == 0 else math.inf)


def fam0(n: int = 100) -> mm.AdversarialFamily:
    """Reference family: k=3, d=2, M=1 with delta tuned to n."""
    return mm.build_family(3, 2, 1.0, n=n)


@contextmanager
def largest_index_tiebreak():
    """Temporarily break ties toward the largest index (mutation testing only)."""
    old = geo._TIEBREAK_LARGEST
    geo._TIEBREAK_LARGEST = True
    try:
        yield
    finally:
        geo._TIEBREAK_LARGEST = old


# ---------------------------------------------------------------------------


def suite_geometry(seed: int) -> list[Check]:
    out = []
    a = geo.nearest_index([[-1.0], [1.0]], [0.0])
    out.append(_check("tie goes to smallest index", a.index == 0, index=a.index))
    rng = np.random.default_rng(mix(seed, 10, 0))
    bad = 0
    for _ in range(200):
        # integer lattice inputs make exact ties common
        c = rng.integers(-2, 3, size=(5, 2)).astype(float)
        x = rng.integers(-2, 3, size=2).astype(float)
        d2 = np.sum((c - x) ** 2, axis=1)
        res = geo.nearest_index(c, x)
        if res.index != int(np.flatnonzero(d2 == d2.min())[0]):
            bad += 1
        perm = rng.permutation(5)
        res_p = geo.nearest_index(c[perm], x)
        first = int(np.flatnonzero(d2[perm] == d2.min())[0])
        if res_p.index != first or perm[res_p.index] not in np.flatnonzero(d2 == d2.min()):
            bad += 1
    out.append(_check("least minimizing index under permutations", bad == 0, failures=bad))
    audit = geo.boundary_closeness_audit(100_000, k=3, d=2, M=1.0, seed=mix(seed, 10, 1))
    out.append(_check("label-change bounds (inner product and bisector distance)",
                      audit.vor1_violations == 0 and audit.vor2_violations == 0,
                      triples=audit.triples, vor1_violations=audit.vor1_violations,
                      vor2_violations=audit.vor2_violations, vor1_worst=audit.vor1_worst,
                      vor2_worst=audit.vor2_worst))
    opt = [rng.uniform(-1, 1, (3, 2))]
    X = rng.uniform(-1, 1, (2000, 2))
    cd = geo.critical_distance(opt, X)
    ts = np.sort(rng.uniform(0, 0.5, 10))
    counts = [int(np.sum(cd <= t)) for t in ts]
    out.append(_check("critical membership monotone in t", counts == sorted(counts), counts=counts))
    return out


def suite_distributions(seed: int) -> list[Check]:
    out = []
    rho, d = 0.1, 2
    quad = integrate.quad(lambda r: r ** 2 * (rho - r) * r ** (d - 1), 0, rho)[0]
    norm = integrate.quad(lambda r: (rho - r) * r ** (d - 1), 0, rho)[0]
    mu = cone_cell_moment(rho, d)
    out.append(_check("cone moment matches radial quadrature", abs(quad / norm - mu) <= 1e-10,
                      closed=mu, quadrature=quad / norm))
    fam = fam0()
    P = mm.p_sigma(fam, [1, -1])
    mass_int = []
    for b, z in enumerate(P.centers):
        f = lambda r: P.density(z + np.array([r, 0.0]))[0] * unit_ball_volume(d) * d * r ** (d - 1)
        mass_int.append(integrate.quad(f, 0, P.rho)[0])
    out.append(_check("cone density integrates to ball mass", np.allclose(mass_int, P.masses, atol=1e-6),
                      integrated=mass_int, masses=P.masses.tolist()))
    n = 200_000
    _, lab = P.sample_labeled(n, mix(seed, 11, 0))
    freq = np.bincount(lab, minlength=len(P.masses)) / n
    z = (freq - P.masses) / np.sqrt(P.masses * (1 - P.masses) / n)
    out.append(_check("cone ball frequencies within 4 SE", np.all(np.abs(z) <= 4), z=z.tolist()))
    X = P.sample(n, mix(seed, 11, 1))
    out.append(_check("cone samples inside support", bool(np.all(geo.in_ball(X, P.M)))))
    qg = build_quasi_gaussian([[0.3, 0.0], [-0.3, 0.2], [0.0, -0.3]], 0.05, [0.3, 0.3, 0.4], 1.0)
    U = np.random.default_rng(mix(seed, 11, 2)).uniform(-1, 1, (n, 2))
    vals = qg.density(U) * 4.0
    integral, se = float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n))
    out.append(_check("quasi-Gaussian density integrates to one", abs(integral - 1) <= 4 * se + 1e-4,
                      integral=integral, se=se))
    return out


def suite_closed_form(seed: int) -> list[Check]:
    out = []
    fam = fam0()
    worst, gap_err = 0.0, 0.0
    signs = mm.balanced_signs(fam.m)
    for sp in signs:
        P = mm.p_sigma(fam, sp)
        S = qz.cone_offsets(P, 200_000, mix(seed, 12, 0))
        base = qz.cone_ball_contrasts(mm.q_sigma(fam, sp), P, S)
        for sq in signs:
            c = mm.q_sigma(fam, sq)
            closed = mm.closed_risk(fam, sq, sp)
            v = qz.cone_ball_contrasts(c, P, S)
            mean, se = qz._stratified(v, P.masses)
            # paired differences of ball-respecting codebooks are constant per
            # offset, so their SE is roundoff; FLOOR absorbs it
            worst = max(worst, _z(mean - closed, se))
            gmean, gse = qz._stratified(v - base, P.masses)
            gap = closed - mm.closed_risk(fam, sp, sp)
            ident = fam.Delta ** 2 * fam.delta / (8 * fam.m) * mm.sign_distance(sp, sq)
            gap_err = max(gap_err, abs(gap - ident))
            worst = max(worst, _z(gmean - gap, gse))
    out.append(_check("closed-form risk and risk gaps match Monte Carlo within 4 SE", worst <= 4,
                      worst_z=worst))
    out.append(_check("risk-gap identity exact", gap_err <= 1e-15, max_error=gap_err))
    best_ok = all(min(signs, key=lambda s: mm.closed_risk(fam, s, sp)).tolist() == sp.tolist()
                  for sp in signs)
    out.append(_check("Q_sigma optimal among canonical quantizers", best_ok))
    c = mm.q_sigma(fam, [1, -1])
    out.append(_check("reference risk value", abs(mm.closed_risk(fam, [1, -1], [1, -1]) - 1.43229e-3) < 1e-8))
    fs = FiniteSupport([[0.0], [1.0]], [0.5, 0.5])
    out.append(_check("two-atom variance exact", qz.true_risk([[0.5]], fs).value == 0.25))
    return out


def suite_hellinger(seed: int) -> list[Check]:
    out = []
    worst_affinity, bound_ok = 0.0, True
    for k, d, delta in [(3, 2, 0.1), (6, 2, 0.05), (9, 3, 1 / 3), (12, 2, 0.2)]:
        fam = mm.build_family(k, d, 1.0, delta=delta)
        signs = mm.balanced_signs(fam.m)
        for s, t in itertools.combinations(signs, 2):
            if mm.sign_distance(s, t) != 4:
                continue
            for n in (1, 2, 5, 10):
                h = mm.hellinger(fam, s, t, n)
                worst_affinity = max(worst_affinity, abs(h.affinity - h.affinity_closed_form))
                bound_ok &= h.h2_exact <= h.h2_bound
                bound_ok &= abs(h.h2_exact - 2 * (1 - h.affinity ** n)) <= 1e-15
    out.append(_check("affinity equals closed form to 1e-14", worst_affinity <= 1e-14, worst=worst_affinity))
    out.append(_check("product Hellinger within bound", bound_ok))
    fam = mm.build_family(3, 2, 1.0, delta=0.1)
    h = mm.hellinger(fam, [1, -1], [-1, 1], 1)
    out.append(_check("reference affinity", abs(h.affinity - 0.99498743710662) < 1e-12
                      and abs(h.h2_exact - 0.010025) < 1e-6, affinity=h.affinity, h2=h.h2_exact))
    return out


def random_reduction_inputs(fam: mm.AdversarialFamily, count: int, seed: int) -> list[np.ndarray]:
    """Codebooks near the balls (jittered canonical members, ball-anchored points) and uniform ones."""
    rng = np.random.default_rng(seed)
    centers = fam.pair_centers
    out = []
    for t in range(count):
        kind = t % 3
        if kind == 0:
            s = mm.balanced_signs(fam.m)[int(rng.integers(len(mm.balanced_signs(fam.m))))]
            c = mm.q_sigma(fam, s) + fam.Delta * 10 ** rng.uniform(-4, 0) * rng.standard_normal((fam.k, fam.d))
        elif kind == 1:
            pick = rng.integers(len(centers), size=fam.k)
            c = centers[pick] + fam.Delta * rng.uniform(0, 0.6) * rng.standard_normal((fam.k, fam.d))
        else:
            u = rng.standard_normal((fam.k, fam.d))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            c = u * (fam.M * rng.random(fam.k) ** (1 / fam.d))[:, None]
        out.append(c)
    return out


def reduction_audit(fam: mm.AdversarialFamily, sigma_p, count: int, seed: int,
                    n_mc: int = 20_000) -> dict[str, Any]:
    risk_viol = slack_viol = 0
    worst = -math.inf
    members = {tuple(s) for s in mm.balanced_signs(fam.m)}
    not_member = 0
    for i, c in enumerate(random_reduction_inputs(fam, count, mix(seed, 13, 0))):
        tr = mm.reduction_risks(fam, c, sigma_p, n_mc=n_mc, seed=mix(seed, 13, i + 1))
        r, se = tr.risks, tr.risk_se
        if tuple(tr.sigma.tolist()) not in members:
            not_member += 1
        d, s = r["Q_sigma_minus_Q"], se["Q_sigma_minus_Q"]
        worst = max(worst, d / s if s > 0 else (0.0 if d <= FLOOR else math.inf))
        if d > 3 * s + FLOOR:
            risk_viol += 1
        if r["Q2_minus_Q1"] > r["recentering_slack"] + 3 * se["Q2_minus_Q1"] + FLOOR:
            slack_viol += 1
    return {"codebooks": count, "risk_violations": risk_viol, "recentering_violations": slack_viol,
            "non_members": not_member, "worst_z": worst}


def suite_reduction(seed: int, count: int = 200) -> list[Check]:
    fam = fam0()
    sp = np.array([1, -1])
    res = reduction_audit(fam, sp, count, seed)
    out = [_check("reduction never raises risk beyond 3 SE", res["risk_violations"] == 0
                  and res["non_members"] == 0, **res),
           _check("recentering bound holds", res["recentering_violations"] == 0)]
    c = mm.q_sigma(fam, sp)
    back, s = mm.reduce_quantizer(fam, c, sp)
    out.append(_check("canonical member is a fixed point", back is c or np.array_equal(back, c)))
    return out


def tiny_erm_instances(count: int, seed: int):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.integers(3, 9))
        k = int(rng.integers(1, 4))
        d = int(rng.integers(1, 3))
        X = np.round(rng.normal(size=(n, d)), 1)
        if rng.random() < 0.2:
            X[-1] = X[0]
        yield X, min(k, n)


def erm_oracle_audit(count: int, seed: int) -> dict[str, Any]:
    matched = beaten = 0
    for X, k in tiny_erm_instances(count, seed):
        ex = qz.empirical_risk(qz.erm_exhaustive(X, k), X)
        ms = qz.empirical_risk(qz.erm_multistart(X, k, restarts="all", seed=0), X)
        if abs(ms - ex) <= 1e-9:
            matched += 1
        if ms < ex - 1e-9:
            beaten += 1
    return {"instances": count, "matched": matched, "multistart_beats_oracle": beaten}


def suite_erm_oracle(seed: int) -> list[Check]:
    res = erm_oracle_audit(100, mix(seed, 14, 0))
    out = [_check("multistart matches exhaustive ERM", res["matched"] >= 95 and res["multistart_beats_oracle"] == 0,
                  **res)]
    c = qz.erm_exhaustive([0.0, 1.0, 10.0], 2)
    out.append(_check("exhaustive reference instance", np.allclose(qz.canonical(c).ravel(), [0.5, 10.0]),
                      codebook=c.ravel().tolist()))
    # the middle point is equidistant from both starting code points
    tie = qz.lloyd([0.5, 1.5], [0.0, 1.0, 2.0])
    out.append(_check("Lloyd resolves ties toward the smallest index", np.allclose(tie.ravel(), [0.5, 2.0]),
                      codebook=tie.ravel().tolist()))
    step = qz.lloyd_run([0.1, 0.9], [0.0, 0.4, 1.0], max_iter=1)
    out.append(_check("Lloyd centroid step", np.allclose(step.codebook.ravel(), [0.2, 1.0])))
    return out


def suite_margin(seed: int) -> list[Check]:
    out = []
    fam = fam0()
    P = mm.p_sigma(fam, [1, -1])
    opt = qz.optimal_codebooks(P, 3)
    rep = mg.margin_check(opt, P, fam.r0, n_mc=200_000, seed=mix(seed, 15, 0), epsilon=fam.epsilon)
    out.append(_check("reference family satisfies the margin condition", rep.verdict == "holds"
                      and abs(rep.B - fam.Delta) <= 1e-9 and rep.p_min >= 1 / 6 - 3 * rep.p_min_se,
                      verdict=rep.verdict, B=rep.B, p_min=rep.p_min))
    fs = FiniteSupport([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0]], [0.2, 0.3, 0.5])
    o = qz.optimal_codebooks(fs, 3)
    r0 = mg.zero_weight_radius(o, fs)
    rep = mg.margin_check(o, fs, r0 * mg.ZERO_WEIGHT_SHRINK)
    out.append(_check("finite support holds at half the minimal gap", rep.verdict == "holds" and abs(r0 - 0.5) < 1e-12,
                      r0=r0, verdict=rep.verdict))
    out.append(_check("kappa0 reference", mg.kappa0(2, 1, 0.1, 0.5, 1, 0.5) == 4096.0))
    p, _, _ = mg.weight_p_curve(opt, P, np.linspace(0, 0.5, 20), n_mc=50_000, seed=mix(seed, 15, 1))
    out.append(_check("weight function monotone", bool(np.all(np.diff(p) >= 0))))
    sep = mg.separation(P, 3, budget=20, seed=mix(seed, 15, 2), n_mc=50_000)
    out.append(_check("separation of the reference family", abs(sep.epsilon - fam.epsilon) <= 1e-12,
                      epsilon=sep.epsilon, expected=fam.epsilon))
    return out


def suite_two_ball(seed: int) -> list[Check]:
    ok, cert = mm.two_ball_optimality_check(1.0, 0.01, 2, seed=mix(seed, 16, 0))
    out = [_check("two-ball optimum at the centers and the midpoint", ok,
                  err_two=cert.two_error, err_one=cert.one_error)]
    ok2, cert2 = mm.two_ball_optimality_check(0.1, 0.04, 2, seed=mix(seed, 16, 1))
    out.append(_check("hypothesis gate", not ok2 and not cert2.hypothesis))
    return out


def suite_key_inequality(seed: int, trials: int = 300) -> list[Check]:
    fam = fam0()
    P = mm.p_sigma(fam, [1, -1])
    opt = qz.optimal_codebooks(P, 3)
    q = mg.margin_quantities(opt, P)
    kap = mg.kappa0(3, fam.M, fam.epsilon, q.p_min, q.B, fam.r0)
    res = mg.key_inequality_audit(P, opt, kap, trials=trials, seed=mix(seed, 17, 0))
    return [_check("codebook distance controlled by excess risk", res.violations == 0,
                   trials=res.trials, violations=res.violations, worst_ratio=res.worst_ratio, kappa0=kap)]


SUITES: dict[str, Callable[[int], list[Check]]] = {
    "geometry": suite_geometry,
    "distributions": suite_distributions,
    "closed-form": suite_closed_form,
    "hellinger": suite_hellinger,
    "reduction": suite_reduction,
    "erm-oracle": suite_erm_oracle,
    "margin": suite_margin,
    "two-ball": suite_two_ball,
    "key-inequality": suite_key_inequality,
}


def run_suites(names=None, seed: int = 0, mutate_tiebreak: bool = False) -> dict[str, Any]:
    names = list(SUITES) if not names else list(names)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s) {unknown}; choose from {sorted(SUITES)}")
    report = {"seed": seed, "mutate_tiebreak": mutate_tiebreak, "suites": []}
    for name in names:
        t0 = time.perf_counter()
        try:
            if mutate_tiebreak:
                with largest_index_tiebreak():
                    checks = SUITES[name](seed)
            else:
                checks = SUITES[name](seed)
            error = None
        except Exception as exc:  # a crashing suite counts as a failure
            checks, error = [], f"{type(exc).__name__}: {exc}"
        passed = error is None and all(c.passed for c in checks)
        report["suites"].append({
            "name": name, "passed": passed, "seconds": round(time.perf_counter() - t0, 3),
            "error": error,
            "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in checks],
        })
    report["passed"] = all(s["passed"] for s in report["suites"])
    return report
