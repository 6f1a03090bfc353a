"""Risk evaluation, Lloyd iteration and empirical risk minimization."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Iterator, Sequence

import numpy as np

from . import geometry as geo
from .distributions import ConeBallDistribution, Distribution, FiniteSupport

CANONICAL_TOL = 1e-6
EXHAUSTIVE_GUARD = 10 ** 6
DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 200
MIN_MC = 100


class QuantizerError(ValueError):
    pass


class SizeGuardError(QuantizerError):
    pass


class MonotonicityError(RuntimeError):
    """Lloyd's empirical risk went up; indicates a bug, never expected."""


@dataclass(frozen=True)
class RiskEstimate:
    value: float
    std_error: float
    method: str  # "exact-finite" | "closed-form" | "monte-carlo"
    n_eval: int

    def to_dict(self) -> dict[str, Any]:
        return {"value": self.value, "std_error": self.std_error, "method": self.method,
                "n_eval": self.n_eval}


def canonical(c) -> np.ndarray:
    """Codebook with points sorted lexicographically (representative modulo relabeling)."""
    c = geo.as_codebook(c)
    order = np.lexsort(c.T[::-1])
    return c[order]


def canonical_distance(a, b) -> float:
    a, b = canonical(a), canonical(b)
    if a.shape != b.shape:
        return math.inf
    return float(np.max(np.abs(a - b)))


def same_codebook(a, b, tol: float = CANONICAL_TOL) -> bool:
    return canonical_distance(a, b) <= tol


@dataclass
class CodebookSet:
    codebooks: list[np.ndarray] = field(default_factory=list)
    risks: list[RiskEstimate] = field(default_factory=list)
    method: str = "exact"  # "exact" | "analytic" | "approximate"
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def add(self, c, risk: RiskEstimate, tol: float = CANONICAL_TOL) -> bool:
        cc = canonical(c)
        for existing in self.codebooks:
            if existing.shape == cc.shape and np.max(np.abs(existing - cc)) <= tol:
                return False
        self.codebooks.append(cc)
        self.risks.append(risk)
        return True

    def __len__(self) -> int:
        return len(self.codebooks)

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.codebooks)

    @property
    def best_risk(self) -> RiskEstimate:
        return min(self.risks, key=lambda r: r.value)

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": self.method,
            "entries": [{"codebook": c.tolist(), "risk": r.to_dict()}
                        for c, r in zip(self.codebooks, self.risks)],
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "CodebookSet":
        out = cls(method=data.get("method", "exact"), diagnostics=dict(data.get("diagnostics", {})))
        for e in data["entries"]:
            out.codebooks.append(canonical(e["codebook"]))
            out.risks.append(RiskEstimate(**e["risk"]))
        return out


def _weights(X: np.ndarray, weights) -> np.ndarray:
    if weights is None:
        return np.full(X.shape[0], 1.0 / X.shape[0])
    w = np.asarray(weights, dtype=float)
    if w.shape != (X.shape[0],) or np.any(w < 0):
        raise QuantizerError("weights must be nonnegative, one per sample point")
    return w / w.sum()


def empirical_risk(c, sample, weights=None) -> float:
    c = geo.as_codebook(c)
    X = geo.as_sample(sample, c.shape[1])
    if X.shape[0] == 0:
        raise QuantizerError("empty sample")
    d2 = geo.contrast_many(c, X)
    if weights is None:
        return float(d2.mean())
    return float(_weights(X, weights) @ d2)


@dataclass
class LloydResult:
    codebook: np.ndarray
    risk: float
    n_iter: int
    risk_history: list[float]


def lloyd_run(c0, sample, max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
              weights=None) -> LloydResult:
    """Lloyd iteration with the smallest-index tie-break and farthest-point healing."""
    c = geo.as_codebook(c0).copy()
    X = geo.as_sample(sample, c.shape[1])
    if X.shape[0] == 0:
        raise QuantizerError("empty sample")
    w = _weights(X, weights)
    k = c.shape[0]
    idx, d2 = geo.assign(c, X)
    risk = float(w @ d2)
    history = [risk]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        mass = np.bincount(idx, weights=w, minlength=k)
        new = c.copy()
        for dim in range(c.shape[1]):
            s = np.bincount(idx, weights=w * X[:, dim], minlength=k)
            np.divide(s, mass, out=new[:, dim], where=mass > 0)
        empty = np.flatnonzero(mass == 0)
        if empty.size:
            far = d2.copy()
            for j in empty:
                pick = int(np.argmax(far))
                new[j] = X[pick]
                far = np.minimum(far, np.einsum("nd,nd->n", X - new[j], X - new[j]))
        new_idx, new_d2 = geo.assign(new, X)
        new_risk = float(w @ new_d2)
        if new_risk > risk + 1e-10 * max(risk, 1e-300):
            raise MonotonicityError(f"Lloyd risk increased from {risk!r} to {new_risk!r}")
        history.append(new_risk)
        c, converged = new, (np.array_equal(new_idx, idx) and not empty.size)
        decrease = risk - new_risk
        idx, d2, risk = new_idx, new_d2, new_risk
        if converged or decrease <= tol * max(history[-2], 1e-300):
            break
    return LloydResult(c, risk, n_iter, history)


def lloyd(c0, sample, max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
          weights=None) -> np.ndarray:
    return lloyd_run(c0, sample, max_iter, tol, weights).codebook


def _k_subsets(n: int, k: int, restarts, rng: np.random.Generator) -> list[tuple[int, ...]]:
    total = math.comb(n, k)
    if restarts == "all" or (isinstance(restarts, int) and restarts >= total):
        return list(itertools.combinations(range(n), k))
    if not isinstance(restarts, int) or restarts < 1:
        raise QuantizerError("restarts must be a positive integer or 'all'")
    return [tuple(sorted(rng.choice(n, size=k, replace=False).tolist())) for _ in range(restarts)]


def erm_multistart(sample, k: int, restarts=10, seed: int = 0, weights=None,
                   max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Best of several Lloyd runs started from k-subsets of the sample.

    ``restarts="all"`` (or any count at least C(n, k)) enumerates every k-subset.
    Ties in risk keep the earliest restart.
    """
    X = geo.as_sample(sample)
    n = X.shape[0]
    if k > n:
        raise QuantizerError(f"k={k} exceeds sample size n={n}")
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    best, best_risk = None, math.inf
    for subset in _k_subsets(n, k, restarts, rng):
        res = lloyd_run(X[list(subset)], X, max_iter, tol, weights)
        if res.risk < best_risk:
            best, best_risk = res.codebook, res.risk
    return best


def stirling2(n: int, j: int) -> int:
    return sum((-1) ** i * math.comb(j, i) * (j - i) ** n for i in range(j + 1)) // math.factorial(j)


def partition_count(n: int, k: int) -> int:
    return sum(stirling2(n, j) for j in range(1, min(k, n) + 1))


def _restricted_growth(n: int, k: int) -> np.ndarray:
    """All set partitions of range(n) into at most k blocks, as label rows."""
    rows = []
    labels = [0] * n

    def rec(pos: int, used: int) -> None:
        if pos == n:
            rows.append(labels.copy())
            return
        for b in range(min(used + 1, k)):
            labels[pos] = b
            rec(pos + 1, max(used, b + 1))

    rec(1, 1) if n > 0 else None
    return np.asarray(rows, dtype=np.int64)


def _partition_risks(X: np.ndarray, w: np.ndarray, L: np.ndarray, k: int) -> np.ndarray:
    total = float(w @ np.einsum("nd,nd->n", X, X))
    between = np.zeros(L.shape[0])
    for b in range(k):
        mask = (L == b).astype(float) * w
        W = mask.sum(axis=1)
        S = mask @ X
        ok = W > 0
        between[ok] += np.einsum("pd,pd->p", S[ok], S[ok]) / W[ok]
    return total - between


def _centroids(X, w, labels, k) -> np.ndarray:
    c = []
    for b in range(k):
        m = labels == b
        if m.any():
            c.append((w[m] @ X[m]) / w[m].sum())
    # fewer blocks than k: pad with sample points, which cannot raise the risk
    pad = 0
    while len(c) < k:
        c.append(X[pad % len(X)])
        pad += 1
    return np.asarray(c)


def erm_exhaustive_all(sample, k: int, weights=None, rtol: float = 1e-10) -> list[np.ndarray]:
    """Every empirical risk minimizer (one per optimal partition)."""
    X = geo.as_sample(sample)
    n = X.shape[0]
    if n == 0:
        raise QuantizerError("empty sample")
    count = partition_count(n, k)
    if count > EXHAUSTIVE_GUARD:
        raise SizeGuardError(f"{count} partitions exceed the guard {EXHAUSTIVE_GUARD}")
    w = _weights(X, weights)
    L = _restricted_growth(n, k)
    risks = _partition_risks(X, w, L, k)
    best = risks.min()
    scale = max(float(w @ np.einsum("nd,nd->n", X, X)), 1e-300)
    winners = np.flatnonzero(risks <= best + rtol * scale)
    books = [_centroids(X, w, L[p], k) for p in winners]
    exact = np.array([empirical_risk(c, X, w) for c in books])
    keep = exact <= exact.min() + rtol * scale
    return [b for b, ok in zip(books, keep) if ok]


def erm_exhaustive(sample, k: int, weights=None) -> np.ndarray:
    books = erm_exhaustive_all(sample, k, weights)
    X = geo.as_sample(sample)
    w = _weights(X, weights)
    return min(books, key=lambda c: empirical_risk(c, X, w))


def ball_assignment(c, dist: ConeBallDistribution) -> np.ndarray | None:
    """Index of the cell containing each whole ball, or None if some ball is cut."""
    c = geo.as_codebook(c)
    idx, _ = geo.assign(c, dist.centers)
    for b, j in enumerate(idx):
        z = dist.centers[b]
        for l in range(c.shape[0]):
            diff = c[l] - c[j]
            norm = np.linalg.norm(diff)
            if l == j or norm == 0.0:
                continue
            # signed distance of the ball center to the (j, l) bisector, on j's side
            margin = (np.dot(z - c[l], z - c[l]) - np.dot(z - c[j], z - c[j])) / (2 * norm)
            if margin < dist.rho:
                return None
    return idx


def cone_closed_risk(c, dist: ConeBallDistribution) -> float | None:
    c = geo.as_codebook(c)
    idx = ball_assignment(c, dist)
    if idx is None:
        return None
    off = dist.centers - c[idx]
    return float(dist.masses @ (dist.cell_moment + np.einsum("nd,nd->n", off, off)))


def cone_offsets(dist: ConeBallDistribution, n_mc: int, seed: int) -> np.ndarray:
    """Antithetic cone-profile offsets shared by every ball, shape ``(n_mc // 2, d)``."""
    rng = np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)
    return dist.standard_offsets(max(n_mc // 2, 1), rng)


def cone_ball_contrasts(c, dist: ConeBallDistribution, offsets: np.ndarray) -> np.ndarray:
    """Pair-averaged contrasts, shape ``(n_balls, len(offsets))``.

    Row ``b`` holds (gamma(z_b + s) + gamma(z_b - s)) / 2 for each offset ``s``;
    the antithetic pairs make each ball's sample centroid exactly its center.
    """
    c = geo.as_codebook(c)
    out = np.empty((len(dist.centers), len(offsets)))
    for b, z in enumerate(dist.centers):
        out[b] = 0.5 * (geo.contrast_many(c, z + offsets) + geo.contrast_many(c, z - offsets))
    return out


def _stratified(values: np.ndarray, masses: np.ndarray) -> tuple[float, float]:
    # every ball reuses the same offsets, so per-offset totals are the i.i.d. units
    total = masses @ values
    h = total.shape[0]
    se = float(total.std(ddof=1) / math.sqrt(h)) if h > 1 else 0.0
    return float(total.mean()), se


def _mc_risk(c, dist: Distribution, n_mc: int, seed: int) -> RiskEstimate:
    if n_mc < MIN_MC:
        raise QuantizerError(f"Monte Carlo evaluation needs n_mc >= {MIN_MC}")
    if isinstance(dist, ConeBallDistribution):
        vals = cone_ball_contrasts(c, dist, cone_offsets(dist, n_mc, seed))
        mean, se = _stratified(vals, dist.masses)
        return RiskEstimate(mean, se, "monte-carlo", n_mc)
    X = dist.sample(n_mc, seed)
    g = geo.contrast_many(c, X)
    return RiskEstimate(float(g.mean()), float(g.std(ddof=1) / math.sqrt(n_mc)), "monte-carlo", n_mc)


def true_risk(c, dist: Distribution, n_mc: int = 200_000, seed: int = 0) -> RiskEstimate:
    c = geo.as_codebook(c)
    if c.shape[1] != dist.d:
        raise geo.GeometryError("codebook and distribution dimensions differ")
    if isinstance(dist, FiniteSupport):
        val = float(dist.weights @ geo.contrast_many(c, dist.atoms))
        return RiskEstimate(val, 0.0, "exact-finite", len(dist.atoms))
    if isinstance(dist, ConeBallDistribution):
        val = cone_closed_risk(c, dist)
        if val is not None:
            return RiskEstimate(val, 0.0, "closed-form", 0)
    return _mc_risk(c, dist, n_mc, seed)


def loss(c, dist: Distribution, optimal: CodebookSet | Sequence, n_mc: int = 200_000,
         seed: int = 0) -> RiskEstimate:
    """Excess risk R(c) - min R(c*) over the optimal set.

    When any term needs Monte Carlo, every term is evaluated on the same sample
    (common random numbers) and the standard error is that of the paired
    differences.
    """
    books = list(optimal.codebooks if isinstance(optimal, CodebookSet) else optimal)
    if not books:
        raise QuantizerError("optimal set is empty")
    exact = [true_risk(b, dist, n_mc, seed) for b in [c] + books] \
        if isinstance(dist, (FiniteSupport, ConeBallDistribution)) else None
    if exact is not None and all(r.std_error == 0.0 and r.method != "monte-carlo" for r in exact):
        best = min(r.value for r in exact[1:])
        return RiskEstimate(exact[0].value - best, 0.0, exact[0].method, exact[0].n_eval)
    if n_mc < MIN_MC:
        raise QuantizerError(f"Monte Carlo evaluation needs n_mc >= {MIN_MC}")
    if isinstance(dist, ConeBallDistribution):
        S = cone_offsets(dist, n_mc, seed)
        g = cone_ball_contrasts(c, dist, S)
        opt = [cone_ball_contrasts(b, dist, S) for b in books]
        j = int(np.argmin([dist.masses @ o.mean(axis=1) for o in opt]))
        mean, se = _stratified(g - opt[j], dist.masses)
        return RiskEstimate(mean, se, "monte-carlo", n_mc)
    X = dist.sample(n_mc, seed)
    g = geo.contrast_many(c, X)
    opt = [geo.contrast_many(b, X) for b in books]
    j = int(np.argmin([o.mean() for o in opt]))
    diff = g - opt[j]
    return RiskEstimate(float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(n_mc)),
                        "monte-carlo", n_mc)


def optimal_codebooks(dist: Distribution, k: int, effort: int = 20, seed: int = 0,
                      n_mc: int = 200_000) -> CodebookSet:
    """Optimal codebooks of ``dist``: exact, analytic or approximate depending on the family.

    ``effort`` is the number of Lloyd restarts used by the approximate path.
    """
    if k < 1:
        raise QuantizerError("k must be positive")
    if isinstance(dist, FiniteSupport) and partition_count(len(dist.atoms), k) <= EXHAUSTIVE_GUARD:
        out = CodebookSet(method="exact")
        for c in erm_exhaustive_all(dist.atoms, k, dist.weights):
            out.add(c, true_risk(c, dist))
        return out
    if isinstance(dist, ConeBallDistribution) and dist.origin is not None:
        from .minimax import analytic_optimal_set
        return analytic_optimal_set(dist, k)
    return _approximate_optimal(dist, k, effort, seed, n_mc)


def _approximate_optimal(dist: Distribution, k: int, effort: int, seed: int,
                         n_mc: int) -> CodebookSet:
    from .seeding import mix

    if isinstance(dist, FiniteSupport):
        X, weights = dist.atoms, dist.weights
    else:
        X, weights = dist.sample(n_mc, mix(seed, 0, 0)), None
    rng = np.random.default_rng(mix(seed, 0, 1))
    results = [lloyd_run(X[list(s)], X, weights=weights) for s in _k_subsets(len(X), k, effort, rng)]
    Y = dist.sample(n_mc, mix(seed, 0, 2))
    g = [geo.contrast_many(r.codebook, Y) for r in results]
    means = np.array([gi.mean() for gi in g])
    best = int(np.argmin(means))
    out = CodebookSet(method="approximate")
    global_hits = 0
    for r, gi, mval in zip(results, g, means):
        diff = gi - g[best]
        se = float(diff.std(ddof=1) / math.sqrt(len(Y))) if len(Y) > 1 else 0.0
        if mval - means[best] <= 3 * se + 1e-15:
            global_hits += 1
            out.add(r.codebook, RiskEstimate(float(mval), float(gi.std(ddof=1) / math.sqrt(len(Y))),
                                             "monte-carlo", len(Y)))
    out.diagnostics = {
        "restarts": effort,
        "n_mc": n_mc,
        "global_hits": global_hits,
        "distinct_optima": len(out),
        "infinite_optima_suspected": len(out) >= 3 and len(out) * 3 >= global_hits,
    }
    return out
