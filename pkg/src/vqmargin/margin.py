"""Margin-condition quantities and verdicts.

The weight function p(t) is the probability of the t-neighborhood of the
critical region. It is estimated through a computable superset: a point counts
when it lies within t of a supporting hyperplane of its own cell for some
optimal codebook, which can only overestimate p(t).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import geometry as geo
from . import quantizer as qz
from .distributions import (ConeBallDistribution, Distribution, FiniteSupport,
                            QuasiGaussianMixture, UniformBall)
from .seeding import mix

SE_BAND = 3.0
GRID_SPAN = 1024.0
# N*_t is closed, so a finite-support weight function jumps at the zero-weight
# radius itself; certified radii are reported just below it.
ZERO_WEIGHT_SHRINK = 1.0 - 1e-9


class MarginError(ValueError):
    pass


@dataclass
class MarginQuantities:
    B: float
    p_min: float
    p_min_se: float
    cell_masses: list[list[float]]
    exact: bool


@dataclass
class MarginReport:
    B: float
    p_min: float
    p_min_se: float
    t_grid: list[float]
    p_hat: list[float]
    p_se: list[float]
    bound: list[float]
    r0_tested: float
    verdict: str  # "holds" | "fails" | "inconclusive"
    M: float
    kappa0: float | None = None
    epsilon: float | None = None
    n_mc: int = 0
    seed: int = 0
    grid_size: int = 0
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        for key in ("kappa0", "epsilon"):
            if out[key] is not None and math.isinf(out[key]):
                out[key] = "inf"
        return out


@dataclass
class SeparationReport:
    stationary_points: qz.CodebookSet
    global_risk: float
    epsilon: float
    epsilon_se: float
    budget: int
    low_confidence: bool
    seed: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {"stationary_points": self.stationary_points.to_dict(), "global_risk": self.global_risk,
                "epsilon": "inf" if math.isinf(self.epsilon) else self.epsilon,
                "epsilon_se": self.epsilon_se, "budget": self.budget,
                "low_confidence": self.low_confidence, "seed": self.seed}


def _books(optimal) -> list[np.ndarray]:
    books = list(optimal.codebooks if isinstance(optimal, qz.CodebookSet) else optimal)
    if not books:
        raise MarginError("optimal set is empty")
    return [geo.as_codebook(c) for c in books]


def min_code_distance(c) -> float:
    c = geo.as_codebook(c)
    if c.shape[0] < 2:
        raise MarginError("B is undefined for k = 1")
    return _pairwise_min(c)


def _pairwise_min(c: np.ndarray) -> float:
    diff = c[:, None, :] - c[None, :, :]
    dist = np.sqrt(np.einsum("ijd,ijd->ij", diff, diff))
    np.fill_diagonal(dist, np.inf)
    return float(dist.min())


def cell_masses(c, dist: Distribution, n_mc: int, seed: int) -> tuple[np.ndarray, np.ndarray, bool]:
    """(P(V_j), standard errors, exact?) for every cell of ``c``."""
    c = geo.as_codebook(c)
    k = c.shape[0]
    if isinstance(dist, FiniteSupport):
        idx, _ = geo.assign(c, dist.atoms)
        return np.bincount(idx, weights=dist.weights, minlength=k), np.zeros(k), True
    if isinstance(dist, ConeBallDistribution):
        idx = qz.ball_assignment(c, dist)
        if idx is not None:
            return np.bincount(idx, weights=dist.masses, minlength=k), np.zeros(k), True
    X = dist.sample(n_mc, seed)
    idx, _ = geo.assign(c, X)
    p = np.bincount(idx, minlength=k) / n_mc
    return p, np.sqrt(p * (1 - p) / n_mc), False


def margin_quantities(optimal, dist: Distribution, n_mc: int = 200_000,
                      seed: int = 0) -> MarginQuantities:
    books = _books(optimal)
    B = min(min_code_distance(c) for c in books)
    best, best_se, masses, exact = math.inf, 0.0, [], True
    for c in books:
        p, se, ex = cell_masses(c, dist, n_mc, seed)
        masses.append(p.tolist())
        exact = exact and ex
        j = int(np.argmin(p))
        if p[j] < best:
            best, best_se = float(p[j]), float(se[j])
    return MarginQuantities(B, best, best_se, masses, exact)


def weight_p_curve(optimal, dist: Distribution, t_values: Sequence[float], n_mc: int = 200_000,
                   seed: int = 0, force_mc: bool = False) -> tuple[np.ndarray, np.ndarray, bool]:
    """p(t) on several radii from one sample (nested, hence monotone in t).

    Finite supports are summed exactly unless ``force_mc`` is set.
    """
    books = _books(optimal)
    t = np.asarray(t_values, dtype=float)
    if np.any(t < 0):
        raise MarginError("t must be nonnegative")
    if isinstance(dist, FiniteSupport) and not force_mc:
        cd = geo.critical_distance(books, dist.atoms)
        p = np.array([dist.weights[cd <= ti].sum() for ti in t])
        return p, np.zeros_like(p), True
    X = dist.sample(n_mc, seed)
    cd = np.sort(geo.critical_distance(books, X))
    p = np.searchsorted(cd, t, side="right") / n_mc
    return p, np.sqrt(p * (1 - p) / n_mc), False


def weight_p(optimal, dist: Distribution, t: float, n_mc: int = 200_000,
             seed: int = 0) -> tuple[float, float]:
    p, se, _ = weight_p_curve(optimal, dist, [t], n_mc, seed)
    return float(p[0]), float(se[0])


def margin_bound(B: float, p_min: float, M: float, t) -> np.ndarray:
    return B * p_min * np.asarray(t, dtype=float) / (128 * M ** 2)


def geometric_grid(r0: float, grid_size: int) -> np.ndarray:
    if grid_size < 1:
        raise MarginError("grid_size must be positive")
    if grid_size == 1:
        return np.array([r0])
    return np.geomspace(r0 / GRID_SPAN, r0, grid_size)


def margin_check(optimal, dist: Distribution, r0: float, grid_size: int = 32,
                 n_mc: int = 200_000, seed: int = 0, epsilon: float | None = None,
                 M: float | None = None, force_mc: bool = False) -> MarginReport:
    """Three-valued check of p(t) <= B p_min t / (128 M^2) on a grid in (0, r0]."""
    if not r0 > 0:
        raise MarginError("r0 must be positive")
    M = float(dist.M if M is None else M)
    books = _books(optimal)
    q = margin_quantities(books, dist, n_mc, mix(seed, 0, 0))
    grid = geometric_grid(r0, grid_size)
    p, se, exact = weight_p_curve(books, dist, grid, n_mc, mix(seed, 0, 1), force_mc)
    bound = margin_bound(q.B, q.p_min, M, grid)
    if np.all(p + SE_BAND * se <= bound):
        verdict = "holds"
    elif np.any(p - SE_BAND * se > bound):
        verdict = "fails"
    else:
        verdict = "inconclusive"
    diagnostics: dict[str, Any] = {"exact": bool(exact and q.exact), "n_optimal": len(books)}
    if isinstance(optimal, qz.CodebookSet):
        diagnostics["optimal_method"] = optimal.method
        if optimal.diagnostics.get("infinite_optima_suspected"):
            diagnostics["infinite_optima_suspected"] = True
            diagnostics["note"] = ("distinct near-optimal codebooks keep appearing; the set of "
                                   "optimal codebooks looks infinite, so the margin condition cannot hold")
            if verdict == "holds":
                verdict = "inconclusive"
    k = books[0].shape[0]
    kap = None
    if epsilon is not None and q.p_min > 0:
        kap = kappa0(k, M, epsilon, q.p_min, q.B, r0)
    return MarginReport(B=q.B, p_min=q.p_min, p_min_se=q.p_min_se, t_grid=grid.tolist(),
                        p_hat=p.tolist(), p_se=se.tolist(), bound=bound.tolist(), r0_tested=float(r0),
                        verdict=verdict, M=M, kappa0=kap, epsilon=epsilon, n_mc=n_mc, seed=seed,
                        grid_size=grid_size, diagnostics=diagnostics)


def zero_weight_radius(optimal, dist: FiniteSupport) -> float:
    """Largest r with p(t) = 0 for all t < r (exact, finite support)."""
    return float(geo.critical_distance(_books(optimal), dist.atoms).min())


def certify_radius(optimal, dist: Distribution, t_max: float, grid_size: int = 64,
                   n_mc: int = 200_000, seed: int = 0, M: float | None = None) -> float:
    """Largest grid radius below which every grid point passes the margin inequality (0 if none)."""
    M = float(dist.M if M is None else M)
    books = _books(optimal)
    q = margin_quantities(books, dist, n_mc, mix(seed, 0, 0))
    grid = geometric_grid(t_max, grid_size)
    p, se, _ = weight_p_curve(books, dist, grid, n_mc, mix(seed, 0, 1))
    ok = p + SE_BAND * se <= margin_bound(q.B, q.p_min, M, grid)
    if not ok[0]:
        return 0.0
    bad = np.flatnonzero(~ok)
    return float(grid[-1] if bad.size == 0 else grid[bad[0] - 1])


def kappa0(k: int, M: float, epsilon: float, p_min: float, B: float, r0: float) -> float:
    """4 k M^2 max(1/epsilon, 64 M^2 / (p_min B^2 r0^2))."""
    for name, v in (("k", k), ("M", M), ("epsilon", epsilon), ("p_min", p_min), ("B", B), ("r0", r0)):
        if not v > 0:
            raise MarginError(f"{name} must be positive, got {v}")
    return 4 * k * M ** 2 * max(1.0 / epsilon, 64 * M ** 2 / (p_min * B ** 2 * r0 ** 2))


def polynomial_margin_radius(B: float, M: float, p_min: float, Q: float, q: float) -> float:
    """Margin radius for a weight function bounded by Q t^q with q > 1."""
    if not q > 1:
        raise MarginError("q must exceed 1")
    for name, v in (("B", B), ("M", M), ("p_min", p_min), ("Q", Q)):
        if not v > 0:
            raise MarginError(f"{name} must be positive")
    base = p_min * B / (16 * math.sqrt(2) * M * Q)
    return B / (4 * math.sqrt(2) * M) * base ** (1.0 / (q - 1))


def gaussian_condition(theta_min: float, theta_max: float, k: int, sigma: float, B_tilde: float,
                       M: float, eps_trunc: float) -> tuple[bool, float, float]:
    """Polarization condition of a quasi-Gaussian mixture; returns (holds, term1, term2)."""
    for name, v in (("theta_min", theta_min), ("theta_max", theta_max), ("k", k), ("sigma", sigma),
                    ("B_tilde", B_tilde), ("M", M)):
        if not v > 0:
            raise MarginError(f"{name} must be positive")
    if not 0 <= eps_trunc < 1:
        raise MarginError("eps_trunc must lie in [0, 1)")
    s2 = sigma ** 2
    a1 = B_tilde ** 2 / (2048 * s2)
    term1 = 2048 * k * s2 / ((1 - eps_trunc) * B_tilde ** 2 * -math.expm1(-a1))
    a2 = B_tilde ** 2 / (32 * s2)
    # log(e^a - 1) = a + log1p(-e^-a), stable for large a
    log_den = math.log((1 - eps_trunc) * 7 * s2 * B_tilde) + a2 + math.log(-math.expm1(-a2))
    log_term2 = math.log(2048 * k ** 2 * M ** 3) - log_den
    term2 = math.exp(log_term2) if log_term2 > -745 else 0.0
    return theta_min / theta_max >= max(term1, term2), term1, term2


# ---------------------------------------------------------------------------
# epsilon-separation


def _cone_polish(c: np.ndarray, dist: ConeBallDistribution, max_iter: int = 100) -> np.ndarray:
    """Exact population Lloyd steps while every ball stays inside one cell."""
    for _ in range(max_iter):
        idx = qz.ball_assignment(c, dist)
        if idx is None:
            return c
        new = c.copy()
        for j in range(c.shape[0]):
            m = idx == j
            if m.any():
                new[j] = dist.masses[m] @ dist.centers[m] / dist.masses[m].sum()
        if np.array_equal(new, c):
            return c
        c = new
    return c


def separation(dist: Distribution, k: int, budget: int = 50, seed: int = 0,
               n_mc: int = 100_000) -> SeparationReport:
    """Estimate the separation: smallest excess risk of a non-global stationary codebook."""
    if budget < 10:
        raise MarginError("budget must be at least 10")
    rng = np.random.default_rng(mix(seed, 1, 0))
    if isinstance(dist, FiniteSupport):
        X, w = dist.atoms, dist.weights
    else:
        X, w = dist.sample(n_mc, mix(seed, 1, 1)), None
    if k > len(X):
        raise MarginError("k exceeds the number of support points")
    chains = [qz.lloyd_run(X[list(s)], X, weights=w).codebook for s in qz._k_subsets(len(X), k, budget, rng)]
    if isinstance(dist, ConeBallDistribution):
        chains = [_cone_polish(c, dist) for c in chains]

    found = qz.CodebookSet(method="exact" if isinstance(dist, FiniteSupport) else "approximate")
    for c in chains:
        found.add(c, qz.true_risk(c, dist, n_mc=n_mc, seed=mix(seed, 1, 2)))
    values = np.array([r.value for r in found.risks])
    g = int(np.argmin(values))
    global_risk = float(values[g])
    eps, eps_se = math.inf, 0.0
    scale = max(abs(global_risk), 1e-300)
    for c, r in zip(found.codebooks, found.risks):
        gap = loss_between(c, found.codebooks[g], dist, r, found.risks[g], n_mc, mix(seed, 1, 3))
        if gap.value > SE_BAND * gap.std_error + 1e-9 * scale and gap.value < eps:
            eps, eps_se = gap.value, gap.std_error
    found.diagnostics = {"chains": len(chains), "distinct": len(found)}
    low = budget < 30 or math.isinf(eps)
    return SeparationReport(found, global_risk, eps, eps_se, budget, low, seed)


def loss_between(c, c_ref, dist: Distribution, r: qz.RiskEstimate, r_ref: qz.RiskEstimate,
                 n_mc: int, seed: int) -> qz.RiskEstimate:
    if r.method != "monte-carlo" and r_ref.method != "monte-carlo":
        return qz.RiskEstimate(r.value - r_ref.value, 0.0, r.method, 0)
    return qz.loss(c, dist, [c_ref], n_mc=n_mc, seed=seed)


# ---------------------------------------------------------------------------
# key inequality audit


def nearest_optimal_distance_sq(c, optimal) -> float:
    """min over optimal codebooks and relabelings of |c - c*|^2."""
    c = geo.as_codebook(c)
    best = math.inf
    for cs in _books(optimal):
        D = geo.squared_distances(cs, c)           # (k, k): D[a, b] = |c_a - cs_b|^2
        r, col = linear_sum_assignment(D)
        best = min(best, float(D[r, col].sum()))
    return best


def random_codebooks(optimal, k: int, d: int, M: float, trials: int, seed: int) -> list[np.ndarray]:
    """Half uniform in B(0, M)^k, half optimal codebooks jittered at log-uniform scales."""
    rng = np.random.default_rng(seed)
    books = _books(optimal)
    out = []
    for t in range(trials):
        if t % 2 == 0:
            u = rng.standard_normal((k, d))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            c = u * (M * rng.random(k) ** (1.0 / d))[:, None]
        else:
            base = books[int(rng.integers(len(books)))]
            scale = M * 10 ** rng.uniform(-4, 0)
            c = base[rng.permutation(k)] + scale * rng.standard_normal((k, d)) / math.sqrt(d)
            norms = np.linalg.norm(c, axis=1)
            c[norms > M] *= (M / norms[norms > M])[:, None]
        out.append(c)
    return out


@dataclass
class AuditResult:
    trials: int
    violations: int
    worst_ratio: float
    worst_codebook: list[list[float]] | None = None
    ratios: list[float] = field(default_factory=list, repr=False)


def key_inequality_audit(dist: Distribution, optimal, kappa0_value: float, trials: int = 1000,
                         seed: int = 0, n_mc: int = 20_000,
                         codebooks: Sequence | None = None) -> AuditResult:
    """Check |c - c*(c)|^2 <= kappa0 * loss(c) (+3 SE) on random codebooks."""
    if not kappa0_value > 0:
        raise MarginError("kappa0 must be positive")
    books = _books(optimal)
    k, d = books[0].shape
    if codebooks is None:
        codebooks = random_codebooks(books, k, d, dist.M, trials, mix(seed, 2, 0))
    # shared evaluation sample for every trial (common random numbers)
    if isinstance(dist, ConeBallDistribution):
        S = qz.cone_offsets(dist, n_mc, mix(seed, 2, 1))
        opt_vals = [dist.masses @ qz.cone_ball_contrasts(b, dist, S) for b in books]
        evaluate = lambda c: dist.masses @ qz.cone_ball_contrasts(c, dist, S)
    elif isinstance(dist, FiniteSupport):
        opt_vals, evaluate = None, None
    else:
        X = dist.sample(n_mc, mix(seed, 2, 1))
        opt_vals = [geo.contrast_many(b, X) for b in books]
        evaluate = lambda c: geo.contrast_many(c, X)
    opt_exact = [qz.true_risk(b, dist, n_mc=n_mc) for b in books]
    best_opt = min(r.value for r in opt_exact)
    violations, worst, worst_c, ratios = 0, 0.0, None, []
    for c in codebooks:
        lhs = nearest_optimal_distance_sq(c, books)
        r = qz.true_risk(c, dist, n_mc=n_mc) if isinstance(dist, (FiniteSupport, ConeBallDistribution)) else None
        if r is not None and r.method != "monte-carlo" and all(o.method != "monte-carlo" for o in opt_exact):
            ell, se = r.value - best_opt, 0.0
        else:
            g = evaluate(c)
            j = int(np.argmin([o.mean() for o in opt_vals]))
            diff = g - opt_vals[j]
            ell, se = float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(len(diff)))
        if lhs > kappa0_value * (max(ell, 0.0) + SE_BAND * se) + 1e-15:
            violations += 1
        ratio = lhs / (kappa0_value * ell) if ell > 0 else (0.0 if lhs == 0 else math.inf)
        ratios.append(ratio)
        if ratio > worst:
            worst, worst_c = ratio, geo.as_codebook(c).tolist()
    return AuditResult(len(codebooks), violations, worst, worst_c, ratios)


# ---------------------------------------------------------------------------
# Quasi-Gaussian numeric checks


@dataclass
class GaussianBoundsCheck:
    risk_of_means: float
    risk_of_means_se: float
    risk_bound: float
    risk_ok: bool
    p_min: float
    p_min_se: float
    p_min_lower: float
    p_min_ok: bool
    x_values: list[float]
    areas: list[float]
    area_se: list[float]
    area_bounds: list[float]
    area_ok: bool

    @property
    def all_ok(self) -> bool:
        return self.risk_ok and self.p_min_ok and self.area_ok


def gaussian_bounds_check(mixture: QuasiGaussianMixture, optimal, x_values: Sequence[float] | None = None,
                          n_mc: int = 400_000, seed: int = 0) -> GaussianBoundsCheck:
    """Three numeric inequalities behind the quasi-Gaussian margin result, each within 3 SE."""
    k = len(mixture.means)
    th = mixture.weights
    s2 = mixture.sigma ** 2
    Bt = mixture.B_tilde
    r = qz.true_risk(mixture.means, mixture, n_mc=n_mc, seed=mix(seed, 3, 0))
    risk_bound = 2 * k * th.max() * s2 / (1 - mixture.eps_trunc)
    q = margin_quantities(optimal, mixture, n_mc, mix(seed, 3, 1))
    p_lower = th.min() * -math.expm1(-9 * Bt ** 2 / (128 * s2))
    if x_values is None:
        x_values = (Bt / 8) * np.array([1 / 64, 1 / 16, 1 / 4, 1.0])
    U = UniformBall(mixture.M, 2).sample(n_mc, mix(seed, 3, 2))
    cd = geo.critical_distance(_books(optimal), U)
    disc = math.pi * mixture.M ** 2
    areas, ses, bounds = [], [], []
    for x in x_values:
        f = float(np.mean(cd <= x))
        areas.append(disc * f)
        ses.append(disc * math.sqrt(f * (1 - f) / n_mc))
        bounds.append(4 * k * math.pi * mixture.M * x)
    area_ok = all(a - SE_BAND * s <= b for a, s, b in zip(areas, ses, bounds))
    return GaussianBoundsCheck(
        risk_of_means=r.value, risk_of_means_se=r.std_error, risk_bound=risk_bound,
        risk_ok=r.value - SE_BAND * r.std_error <= risk_bound,
        p_min=q.p_min, p_min_se=q.p_min_se, p_min_lower=p_lower,
        p_min_ok=q.p_min >= p_lower - SE_BAND * q.p_min_se,
        x_values=[float(x) for x in x_values], areas=areas, area_se=ses, area_bounds=bounds,
        area_ok=area_ok)
