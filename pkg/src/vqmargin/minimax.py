"""Adversarial cone-ball families, their canonical quantizers and the
lower-bound ingredients (risk gaps, Hellinger affinities, quantizer reduction).

A family places ``m = 2k/3`` pairs of small balls ``U_i = B(z_i, rho)`` and
``U'_i = B(z_i + w_i, rho)``. A balanced sign vector ``sigma`` tilts pair ``i``
to mass ``(1 + sigma_i delta) / m``; the quantizer ``Q_sigma`` spends two code
points on the heavy pairs and one (the pair midpoint) on the light ones.
"""
from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import geometry as geo
from . import quantizer as qz
from .distributions import ConeBallDistribution, cone_cell_moment
from .fitting import SlopeFit, fit_loglog_slope
from .seeding import mix

DELTA_MAX = 1.0 / 3.0
NET_PITCH = 6.0  # net spacing in units of Delta
MAX_PATTERNS = 64


class MinimaxError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AdversarialFamily:
    k: int
    d: int
    M: float
    m: int
    Delta: float
    rho: float
    delta: float
    z: np.ndarray
    w: np.ndarray
    n_target: int | None = None
    delta_clamped: bool = False

    @property
    def p_plus(self) -> float:
        return (1 + self.delta) / (2 * self.m)

    @property
    def p_minus(self) -> float:
        return (1 - self.delta) / (2 * self.m)

    @property
    def epsilon(self) -> float:
        """Separation of every P_sigma in the family."""
        return self.Delta ** 2 * self.delta / (2 * self.m)

    @property
    def r0(self) -> float:
        return 7 * self.Delta / 16

    @property
    def pair_centers(self) -> np.ndarray:
        """Ball centers in the order U_1, U'_1, U_2, U'_2, ..."""
        out = np.empty((2 * self.m, self.d))
        out[0::2] = self.z
        out[1::2] = self.z + self.w
        return out

    def with_delta(self, delta: float) -> "AdversarialFamily":
        return _assemble(self.k, self.d, self.M, delta, self.n_target, False, self.z, self.w)

    def to_dict(self) -> dict[str, Any]:
        return {"k": self.k, "d": self.d, "M": self.M, "n_target": self.n_target,
                "Delta": self.Delta, "rho": self.rho, "delta": self.delta,
                "delta_clamped": self.delta_clamped,
                "z": self.z.tolist(), "w": self.w.tolist()}


def delta_for_n(m: int, n: int) -> float:
    return math.sqrt(m) / (2 * math.sqrt(n))


def family_scale(k: int, d: int, M: float) -> tuple[int, float, float]:
    """(m, Delta, rho) for the given k, d, M."""
    if k < 3 or k % 3:
        raise MinimaxError("k must be a multiple of 3, at least 3")
    m = 2 * k // 3
    Delta = 15 * M / (96 * m ** (1.0 / d))
    return m, Delta, Delta / 16


def lattice_net(m: int, d: int, pitch: float, radius: float) -> np.ndarray:
    """First ``m`` points of the cubic lattice ``pitch * Z^d`` inside B(0, radius).

    Points are ordered by norm, then lexicographically, so the net is
    deterministic and starts at the origin.
    """
    L = int(math.floor(radius / pitch))
    cand = [np.array(v, dtype=float) * pitch
            for v in itertools.product(range(-L, L + 1), repeat=d)]
    cand = [p for p in cand if np.linalg.norm(p) <= radius * (1 + 1e-12)]
    cand.sort(key=lambda p: (round(float(np.linalg.norm(p)), 12), tuple(p)))
    if len(cand) < m:
        raise geo.GeometryError(
            f"only {len(cand)} lattice points of pitch {pitch:g} fit in B(0, {radius:g}); need {m}")
    return np.asarray(cand[:m])


def _assemble(k, d, M, delta, n_target, clamped, z=None, w=None) -> AdversarialFamily:
    m, Delta, rho = family_scale(k, d, M)
    if not 0.0 <= delta <= DELTA_MAX + 1e-15:
        raise MinimaxError(f"delta must lie in [0, 1/3], got {delta}")
    if z is None:
        z = lattice_net(m, d, NET_PITCH * Delta, M - rho - Delta)
    if w is None:
        w = np.zeros((m, d))
        w[:, 0] = Delta
    return AdversarialFamily(k=k, d=d, M=float(M), m=m, Delta=Delta, rho=rho, delta=float(delta),
                             z=np.asarray(z, dtype=float), w=np.asarray(w, dtype=float),
                             n_target=n_target, delta_clamped=clamped)


def build_family(k: int, d: int, M: float, n: int | None = None,
                 delta: float | None = None) -> AdversarialFamily:
    """Adversarial family for sample size ``n`` (delta = sqrt(m)/(2 sqrt(n)), clamped to 1/3)
    or for an explicit ``delta``."""
    m, _, _ = family_scale(k, d, M)
    clamped = False
    if delta is None:
        if n is None or n < 1:
            raise MinimaxError("give either n >= 1 or delta")
        delta = delta_for_n(m, n)
        if delta > DELTA_MAX:
            warnings.warn(f"delta={delta:.4g} for n={n} exceeds 1/3; clamped", RuntimeWarning)
            delta, clamped = DELTA_MAX, True
    return _assemble(k, d, M, delta, n, clamped)


def validate_signs(fam: AdversarialFamily, sigma) -> np.ndarray:
    s = np.asarray(sigma, dtype=int)
    if s.shape != (fam.m,) or not np.all(np.abs(s) == 1):
        raise MinimaxError(f"sigma must be a vector of {fam.m} signs")
    if s.sum() != 0:
        raise MinimaxError("sigma must be balanced (sum zero)")
    return s


def balanced_signs(m: int) -> list[np.ndarray]:
    return [np.array(s) for s in itertools.product((1, -1), repeat=m) if sum(s) == 0]


def sigma_from_tau(tau) -> np.ndarray:
    t = np.asarray(tau, dtype=int)
    return np.concatenate([t, -t])


def sign_distance(sigma, sigma_prime) -> int:
    return int(np.abs(np.asarray(sigma) - np.asarray(sigma_prime)).sum())


def p_sigma(fam: AdversarialFamily, sigma) -> ConeBallDistribution:
    s = validate_signs(fam, sigma)
    pair_mass = (1 + s * fam.delta) / (2 * fam.m)
    masses = np.repeat(pair_mass, 2)
    # masses may drift from 1 by an ulp; renormalize exactly
    masses = masses / masses.sum()
    return ConeBallDistribution(fam.pair_centers, fam.rho, masses, fam.M, origin=(fam, s))


def q_sigma(fam: AdversarialFamily, sigma) -> np.ndarray:
    s = validate_signs(fam, sigma)
    pts = []
    for zi, wi, si in zip(fam.z, fam.w, s):
        if si == 1:
            pts.extend([zi, zi + wi])
        else:
            pts.append(zi + wi / 2)
    return np.asarray(pts)


def closed_risk(fam: AdversarialFamily, sigma_q, sigma_p) -> float:
    """R(Q_{sigma_q}, P_{sigma_p}) in closed form."""
    sq = validate_signs(fam, sigma_q)
    sp = validate_signs(fam, sigma_p)
    mu = cone_cell_moment(fam.rho, fam.d)
    pair_mass = (1 + sp * fam.delta) / fam.m
    extra = np.where(sq == 1, 0.0, fam.Delta ** 2 / 4)
    return float(pair_mass @ (mu + extra))


def analytic_optimal_set(dist: ConeBallDistribution, k: int) -> qz.CodebookSet:
    fam, sigma = dist.origin
    if k != fam.k:
        return qz._approximate_optimal(dist, k, 20, 0, 200_000)
    out = qz.CodebookSet(method="analytic")
    candidates = balanced_signs(fam.m) if fam.delta == 0 else [sigma]
    for s in candidates:
        out.add(q_sigma(fam, s), qz.RiskEstimate(closed_risk(fam, s, sigma), 0.0, "closed-form", 0))
    return out


@dataclass(frozen=True)
class HellingerResult:
    affinity: float
    affinity_closed_form: float | None
    h2_bound: float
    h2_exact: float
    sign_distance: int


def hellinger(fam: AdversarialFamily, sigma, sigma_prime, n: int) -> HellingerResult:
    """Affinity and squared Hellinger distance of the n-fold products of P_sigma, P_sigma'.

    Both laws share ball shapes, so the affinity is the sum over balls of the
    geometric mean of the two masses.
    """
    a = p_sigma(fam, sigma).masses
    b = p_sigma(fam, sigma_prime).masses
    alpha = float(np.sum(np.sqrt(a * b)))
    rho = sign_distance(sigma, sigma_prime)
    closed = None
    if rho == 4:
        closed = 1 + (2 / fam.m) * (math.sqrt(1 - fam.delta ** 2) - 1)
    h2 = 2 * (1 - alpha ** n)
    bound = 4 * n * fam.delta ** 2 / fam.m
    if rho == 4 and h2 > bound * (1 + 1e-12):
        raise AssertionError(f"H^2 = {h2} exceeds 4 n delta^2 / m = {bound}")
    return HellingerResult(alpha, closed, bound, h2, rho)


# ---------------------------------------------------------------------------
# Quantizer reduction Q -> Q1 -> Q2 -> Q_sigma


@dataclass
class ReductionTrace:
    counts: np.ndarray          # n_i(Q): distinct code points in each pair region
    i0: int
    i_ge3: int
    k1: int
    k2: int
    split_q2: np.ndarray        # pairs given two code points by Q2
    sigma: np.ndarray           # signs of the output Q_sigma
    codebook: np.ndarray
    risks: dict[str, float] = field(default_factory=dict)
    risk_se: dict[str, float] = field(default_factory=dict)


def pair_regions(fam: AdversarialFamily, points) -> np.ndarray:
    """Pair index i of the region V_i (cells of z_i and z_i + w_i) containing each point."""
    idx, _ = geo.assign(fam.pair_centers, geo.as_points(points, fam.d))
    return idx // 2


def reduce_quantizer_trace(fam: AdversarialFamily, c, sigma_p) -> ReductionTrace:
    c = geo.as_codebook(c)
    if c.shape != (fam.k, fam.d):
        raise MinimaxError(f"codebook must have shape ({fam.k}, {fam.d})")
    sp = validate_signs(fam, sigma_p)
    distinct = np.unique(c, axis=0)
    counts = np.bincount(pair_regions(fam, distinct), minlength=fam.m)
    i0 = int(np.sum(counts == 0))
    i_ge3 = int(np.sum(counts >= 3))
    counts1 = np.where(counts == 0, 1, counts)
    split = counts1 >= 2
    k2 = int(np.sum(np.where(split, 2, 1)))
    mass = (1 + sp * fam.delta) / (2 * fam.m)
    # heaviest merged pairs are split first, lightest split pairs merged first
    if k2 < fam.k:
        order = sorted(np.flatnonzero(~split), key=lambda i: (-mass[i], i))
        final = split.copy()
        final[order[:fam.k - k2]] = True
    elif k2 > fam.k:
        order = sorted(np.flatnonzero(split), key=lambda i: (mass[i], i))
        final = split.copy()
        final[order[:k2 - fam.k]] = False
    else:
        final = split
    sigma = np.where(final, 1, -1)
    return ReductionTrace(counts=counts, i0=i0, i_ge3=i_ge3, k1=fam.k + i0, k2=k2,
                          split_q2=split, sigma=sigma, codebook=q_sigma(fam, sigma))


def reduce_quantizer(fam: AdversarialFamily, c, sigma_p) -> tuple[np.ndarray, np.ndarray]:
    """Map any k-codebook to a member of the canonical family with no larger risk under P_{sigma_p}."""
    tr = reduce_quantizer_trace(fam, c, sigma_p)
    c = geo.as_codebook(c)
    if qz.same_codebook(c, tr.codebook, tol=0.0):
        return c, tr.sigma
    return tr.codebook, tr.sigma


def _pair_risk_split(fam, mass_pair, split) -> np.ndarray:
    mu = cone_cell_moment(fam.rho, fam.d)
    return 2 * mass_pair * (mu + np.where(split, 0.0, fam.Delta ** 2 / 4))


def pattern_codebook(fam: AdversarialFamily, split) -> np.ndarray:
    """Two code points (z_i, z_i + w_i) on split pairs, the pair midpoint on the others."""
    pts = []
    for zi, wi, si in zip(fam.z, fam.w, np.asarray(split, dtype=bool)):
        pts.extend([zi, zi + wi] if si else [zi + wi / 2])
    return np.asarray(pts)


def reduction_risks(fam: AdversarialFamily, c, sigma_p, n_mc: int = 20_000,
                    seed: int = 0) -> ReductionTrace:
    """Trace of the reduction with the risk of every stage under P_{sigma_p}.

    R(Q) and R(Q1) come from antithetic stratified Monte Carlo per ball; R(Q2)
    and R(Q_sigma) are closed form. The stage differences used by the audits,
    ``Q_sigma - Q`` and ``Q2 - Q1``, are estimated on shared offsets so their
    standard errors are those of paired differences.
    """
    tr = reduce_quantizer_trace(fam, c, sigma_p)
    sp = validate_signs(fam, sigma_p)
    c = geo.as_codebook(c)
    dist = p_sigma(fam, sp)
    S = qz.cone_offsets(dist, n_mc, seed)
    mid = fam.z + fam.w / 2
    q1 = np.vstack([c, mid[tr.counts == 0]])
    q2 = pattern_codebook(fam, tr.split_q2)
    v_q = qz.cone_ball_contrasts(c, dist, S)
    v_q1 = qz.cone_ball_contrasts(q1, dist, S)
    v_q2 = qz.cone_ball_contrasts(q2, dist, S)
    v_sig = qz.cone_ball_contrasts(tr.codebook, dist, S)
    w = dist.masses

    R_Q, se_Q = qz._stratified(v_q, w)
    R_Q1, se_Q1 = qz._stratified(v_q1, w)
    d_sig, se_sig = qz._stratified(v_sig - v_q, w)
    d_q2, se_q2 = qz._stratified(v_q2 - v_q1, w)
    R_Q2 = float(_pair_risk_split(fam, w[0::2], tr.split_q2).sum())
    R_sig = closed_risk(fam, tr.sigma, sp)
    tr.risks = {"Q": R_Q, "Q1": R_Q1, "Q2": R_Q2, "Q_sigma": R_sig,
                "Q_sigma_minus_Q": d_sig, "Q2_minus_Q1": d_q2,
                "recentering_slack": tr.i_ge3 * fam.p_plus * fam.Delta ** 2 / 128}
    tr.risk_se = {"Q": se_Q, "Q1": se_Q1, "Q2": 0.0, "Q_sigma": 0.0,
                  "Q_sigma_minus_Q": se_sig, "Q2_minus_Q1": se_q2}
    return tr


# ---------------------------------------------------------------------------
# Two-ball optimality


@dataclass
class TwoBallCertificate:
    hypothesis: bool
    best_two: np.ndarray | None = None
    best_one: np.ndarray | None = None
    centers: np.ndarray | None = None
    two_error: float | None = None
    one_error: float | None = None
    risk_best_two: float | None = None
    risk_centers: float | None = None
    confirmed: bool = False


def two_ball_hypothesis(R_gap: float, rho: float, d: int) -> bool:
    """Sufficient condition for two-ball optimality; the gap R/2 - 3 rho is also required to be nonnegative."""
    if R_gap <= 0 or rho <= 0:
        raise MinimaxError("R_gap and rho must be positive")
    slack = R_gap / 2 - 3 * rho
    return (rho <= R_gap / 2 and slack >= 0
            and slack ** 2 >= rho ** 2 * 2 * d * (d + 1) / ((d + 2) * (d + 3)))


def two_ball_optimality_check(R_gap: float, rho: float, d: int, seed: int = 0,
                              n_offsets: int = 4000, grid: int = 25,
                              tol: float = 1e-3) -> tuple[bool, TwoBallCertificate]:
    """Check the two-ball condition and, when it holds, confirm its
    conclusion by grid search plus Lloyd polish on two equal cone balls."""
    if not two_ball_hypothesis(R_gap, rho, d):
        return False, TwoBallCertificate(hypothesis=False)
    centers = np.zeros((2, d))
    centers[0, 0], centers[1, 0] = -R_gap / 2, R_gap / 2
    dist = ConeBallDistribution(centers, rho, [0.5, 0.5], R_gap / 2 + rho)
    S = qz.cone_offsets(dist, 2 * n_offsets, seed)
    X = np.concatenate([z + sgn * S for z in centers for sgn in (1, -1)])
    wts = np.full(len(X), 1.0 / len(X))

    # grid over the bounding box; extra axes get 3 levels
    axes = [np.linspace(-R_gap / 2 - rho, R_gap / 2 + rho, grid)]
    axes += [np.linspace(-rho, rho, 3)] * (d - 1)
    G = np.array(list(itertools.product(*axes)))
    D = geo.squared_distances(G, X)                  # (n, g)
    best, best_pair = math.inf, None
    for a in range(len(G)):
        r = np.minimum(D[:, a:a + 1], D[:, a:]).mean(axis=0)
        b = int(np.argmin(r))
        if r[b] < best:
            best, best_pair = float(r[b]), (a, a + b)
    start = G[list(best_pair)]
    two = qz.lloyd(start, X, weights=wts)
    two = qz.canonical(two)
    err2 = float(np.max(np.linalg.norm(two - qz.canonical(centers), axis=1)))
    # 1-point codebooks: the risk is mass-weighted moment plus squared offsets,
    # minimized over the grid then polished to the exact mean
    r1 = [float(dist.masses @ (dist.cell_moment + np.sum((centers - g) ** 2, axis=1))) for g in G]
    g1 = G[int(np.argmin(r1))]
    one = qz.lloyd(g1[None, :], X, weights=wts)
    err1 = float(np.linalg.norm(one[0] - centers.mean(axis=0)))
    risk_two = qz.true_risk(two, dist, n_mc=2 * n_offsets, seed=seed).value
    risk_centers = qz.true_risk(centers, dist).value
    ok = err2 <= tol and err1 <= tol and risk_centers <= risk_two + 1e-12
    return ok, TwoBallCertificate(True, two, one, centers, err2, err1, risk_two, risk_centers, ok)


# ---------------------------------------------------------------------------
# Minimax sweep


Algorithm = Callable[[np.ndarray, int, int], np.ndarray]


def default_algorithm(restarts: int = 10) -> Algorithm:
    def run(sample: np.ndarray, k: int, seed: int) -> np.ndarray:
        return qz.erm_multistart(sample, k, restarts=restarts, seed=seed)
    return run


@dataclass
class MinimaxTable:
    rows: list[dict[str, Any]]
    summary: list[dict[str, Any]]
    fit: SlopeFit | None
    n_patterns: int
    patterns_subsampled: bool


def excess_under(fam: AdversarialFamily, c, sigma, n_mc: int, seed: int) -> qz.RiskEstimate:
    dist = p_sigma(fam, sigma)
    r = qz.true_risk(c, dist, n_mc=n_mc, seed=seed)
    return qz.RiskEstimate(r.value - closed_risk(fam, sigma, sigma), r.std_error, r.method, r.n_eval)


def sign_patterns(m: int, seed: int, cap: int = MAX_PATTERNS) -> tuple[list[np.ndarray], bool]:
    taus = [np.array(t) for t in itertools.product((1, -1), repeat=m // 2)]
    if len(taus) <= cap:
        return [sigma_from_tau(t) for t in taus], False
    rng = np.random.default_rng(seed)
    pick = sorted(rng.permutation(len(taus))[:cap].tolist())
    return [sigma_from_tau(taus[i]) for i in pick], True


def minimax_experiment(fam_builder: Callable[[int], AdversarialFamily], algorithm: Algorithm | None,
                       n_grid: Sequence[int], reps: int, seed: int, threads: int = 1,
                       n_mc: int = 20_000, signs: Sequence | None = None) -> MinimaxTable:
    """Sup over sign patterns of the mean excess risk of ``algorithm`` at each n.

    ``signs`` restricts the sup to the given sign vectors (a single vector gives
    a plain, non-sup rate experiment).
    """
    n_grid = list(n_grid)
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise MinimaxError("n_grid must be strictly increasing")
    if reps < 1:
        raise MinimaxError("reps must be positive")
    algorithm = algorithm or default_algorithm()
    fams = [fam_builder(n) for n in n_grid]
    if signs is None:
        patterns, sub = sign_patterns(fams[0].m, mix(seed, 0xFFFFFFFF, 0))
    else:
        patterns, sub = [np.asarray(s) for s in signs], False

    tasks = [(g, s, r) for g in range(len(n_grid)) for s in range(len(patterns)) for r in range(reps)]

    def work(task):
        g, s, r = task
        fam, sigma = fams[g], patterns[s]
        task_seed = mix(seed, g, s * reps + r)
        X = p_sigma(fam, sigma).sample(n_grid[g], task_seed)
        c = algorithm(X, fam.k, mix(task_seed, 1, 0))
        ex = excess_under(fam, c, sigma, n_mc, mix(task_seed, 2, 0))
        return {"n": n_grid[g], "sigma_id": s, "rep": r, "excess_risk": ex.value,
                "method": ex.method}

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            rows = list(pool.map(work, tasks))
    else:
        rows = [work(t) for t in tasks]

    summary = []
    for g, n in enumerate(n_grid):
        best = None
        for s in range(len(patterns)):
            vals = np.array([row["excess_risk"] for row in rows if row["n"] == n and row["sigma_id"] == s])
            mean = float(vals.mean())
            se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
            if best is None or mean > best[1]:
                best = (s, mean, se)
        summary.append({"n": n, "delta": fams[g].delta, "clamped": fams[g].delta_clamped,
                        "sup_sigma_id": best[0], "sup_mean_excess": best[1], "sup_se": best[2]})
    usable = [row for row in summary if not row["clamped"]]
    fit = None
    if len(usable) >= 2:
        fit = fit_loglog_slope([row["n"] for row in usable], [row["sup_mean_excess"] for row in usable],
                               [row["sup_se"] for row in usable])
    return MinimaxTable(rows, summary, fit, len(patterns), sub)
