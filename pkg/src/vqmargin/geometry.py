"""Nearest-neighbor assignment and Voronoi-cell geometry for codebooks in R^d.

A codebook is stored as a float array of shape ``(k, d)``. Points are arrays of
shape ``(d,)`` and batches of points are ``(n, d)``. Ties in the nearest-neighbor
rule always go to the smallest index, which fixes one Voronoi partition.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

# Rows per block when assigning large samples; bounds the (n, k, d) temporary.
_CHUNK = 1 << 15

# Mutation switch used by ``vqmargin verify --mutate-tiebreak``. Never set in
# normal operation.
_TIEBREAK_LARGEST = False


class GeometryError(ValueError):
    """Invalid geometric input (dimension mismatch, non-finite values, ...)."""


class DegenerateBisectorError(GeometryError):
    """Raised when a bisector is requested between two coincident code points."""


@dataclass(frozen=True)
class CellAssignment:
    index: int
    distance_sq: float


def as_codebook(c, allow_duplicates: bool = True) -> np.ndarray:
    """Coerce ``c`` to a finite ``(k, d)`` float array."""
    arr = np.asarray(c, dtype=float)
    if arr.ndim == 1:
        # a k-point codebook on the real line
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise GeometryError(f"codebook must have shape (k, d), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise GeometryError("codebook has non-finite coordinates")
    if not allow_duplicates and has_duplicates(arr):
        raise GeometryError("codebook has duplicated code points")
    return arr


def as_points(x, d: int | None = None) -> np.ndarray:
    """Coerce ``x`` to a finite ``(n, d)`` array. A single point becomes ``(1, d)``."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr[None, :] if d is None or arr.shape[0] == d else arr[:, None]
    if arr.ndim != 2:
        raise GeometryError(f"points must have shape (n, d), got {arr.shape}")
    if d is not None and arr.shape[1] != d:
        raise GeometryError(f"dimension mismatch: points have d={arr.shape[1]}, codebook d={d}")
    if not np.all(np.isfinite(arr)):
        raise GeometryError("points have non-finite coordinates")
    return arr


def as_sample(x, d: int | None = None) -> np.ndarray:
    """Like :func:`as_points`, but a 1-D array is read as n scalar observations."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1 and (d is None or d == 1):
        arr = arr[:, None]
    return as_points(arr, d)


def has_duplicates(c: np.ndarray) -> bool:
    c = np.asarray(c, dtype=float)
    return len(np.unique(c, axis=0)) < len(c)


def _as_single_point(x, d: int) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or arr.shape[0] != d:
        raise GeometryError(f"dimension mismatch: point shape {arr.shape}, codebook d={d}")
    if not np.all(np.isfinite(arr)):
        raise GeometryError("point has non-finite coordinates")
    return arr


def squared_distances(c: np.ndarray, X: np.ndarray) -> np.ndarray:
    """All squared distances, shape ``(n, k)``.

    Differences are formed explicitly (no ``|x|^2 - 2<x,c> + |c|^2`` expansion)
    so that exact ties stay exact.
    """
    diff = X[:, None, :] - c[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def assign(c, X) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized nearest-neighbor rule: returns ``(index, distance_sq)`` arrays."""
    c = as_codebook(c)
    X = as_points(X, c.shape[1])
    n = X.shape[0]
    idx = np.empty(n, dtype=np.int64)
    d2 = np.empty(n, dtype=float)
    k = c.shape[0]
    for start in range(0, n, _CHUNK):
        D = squared_distances(c, X[start:start + _CHUNK])
        if _TIEBREAK_LARGEST:
            j = k - 1 - np.argmin(D[:, ::-1], axis=1)
        else:
            j = np.argmin(D, axis=1)
        idx[start:start + _CHUNK] = j
        d2[start:start + _CHUNK] = D[np.arange(D.shape[0]), j]
    return idx, d2


def nearest_index(c, x) -> CellAssignment:
    c = as_codebook(c)
    x = _as_single_point(x, c.shape[1])
    idx, d2 = assign(c, x[None, :])
    return CellAssignment(int(idx[0]), float(d2[0]))


def contrast(c, x) -> float:
    """min_j |x - c_j|^2 for a single point."""
    return nearest_index(c, x).distance_sq


def contrast_many(c, X) -> np.ndarray:
    return assign(c, X)[1]


def bisector_distance(c, i: int, j: int, x) -> float | np.ndarray:
    """Distance from ``x`` to the hyperplane equidistant from ``c[i]`` and ``c[j]``.

    Accepts a single point or an ``(n, d)`` batch.
    """
    c = as_codebook(c)
    if i == j:
        raise GeometryError("bisector needs two distinct indices")
    diff = c[i] - c[j]
    norm = np.linalg.norm(diff)
    if norm == 0.0:
        raise DegenerateBisectorError(f"code points {i} and {j} coincide")
    mid = 0.5 * (c[i] + c[j])
    arr = np.asarray(x, dtype=float)
    if arr.ndim <= 1:
        x1 = _as_single_point(arr, c.shape[1])
        return float(abs(np.dot(x1 - mid, diff)) / norm)
    X = as_points(arr, c.shape[1])
    return np.abs((X - mid) @ diff) / norm


def face_distance(c, X) -> np.ndarray:
    """For each point, the smallest bisector distance from its own cell to another cell.

    This is the distance to the nearest supporting hyperplane of the owning
    Voronoi cell, a lower bound on the distance to the cell boundary. Duplicated
    code points are skipped (their bisector is undefined); a codebook with a
    single distinct point gets ``inf``.
    """
    c = as_codebook(c)
    X = as_points(X, c.shape[1])
    idx, _ = assign(c, X)
    out = np.full(X.shape[0], np.inf)
    k = c.shape[0]
    for i in range(k):
        mask = idx == i
        if not mask.any():
            continue
        Xi = X[mask]
        best = np.full(Xi.shape[0], np.inf)
        for j in range(k):
            if j == i:
                continue
            diff = c[i] - c[j]
            norm = np.linalg.norm(diff)
            if norm == 0.0:
                continue
            mid = 0.5 * (c[i] + c[j])
            best = np.minimum(best, np.abs((Xi - mid) @ diff) / norm)
        out[mask] = best
    return out


def critical_distance(optimal_set: Sequence, X) -> np.ndarray:
    """Smallest face distance over every codebook of ``optimal_set``.

    ``critical_distance(S, X) <= t`` is the membership test for the computable
    superset of the t-neighborhood of the critical region.
    """
    books = list(optimal_set)
    if not books:
        raise GeometryError("optimal set is empty")
    first = as_codebook(books[0])
    X = as_points(X, first.shape[1])
    out = np.full(X.shape[0], np.inf)
    for c in books:
        out = np.minimum(out, face_distance(c, X))
    return out


def critical_membership(optimal_set: Iterable, t: float, x) -> bool:
    """Whether ``x`` lies within ``t`` of a face of its cell for some optimal codebook."""
    if t < 0:
        raise GeometryError("t must be nonnegative")
    books = list(optimal_set)
    if not books:
        raise GeometryError("optimal set is empty")
    d = as_codebook(books[0]).shape[1]
    x = _as_single_point(x, d)
    return bool(critical_distance(books, x[None, :])[0] <= t)


def in_ball(X, M: float, center=None, atol: float = 1e-12) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if center is not None:
        X = X - np.asarray(center, dtype=float)
    return np.einsum("nd,nd->n", X, X) <= (M * (1.0 + atol)) ** 2


def codebook_to_json(c) -> list[list[float]]:
    return as_codebook(c).tolist()


def codebook_from_json(data) -> np.ndarray:
    return as_codebook(data)


@dataclass(frozen=True)
class ClosenessAudit:
    triples: int
    draws: int
    vor1_violations: int
    vor2_violations: int
    vor1_worst: float  # largest lhs / rhs ratio
    vor2_worst: float


def boundary_closeness_audit(n_triples: int, k: int = 3, d: int = 2, M: float = 1.0,
                             seed: int = 0, tol: float = 1e-9) -> ClosenessAudit:
    """Audit the two label-change bounds on random triples (c, c*, x) in B(0, M).

    For x in V_i(c*) and V_j(c) with i != j, checks
    |<x - (c_i + c_j)/2, c_i - c_j>| <= 4 sqrt(2) M |c - c*| and
    dist(x, bisector_ij(c*)) <= 4 sqrt(2) M / B(c*) |c - c*|.
    c is c* moved at a log-uniform scale so both loose and tight regimes are hit.
    """
    rng = np.random.default_rng(seed)
    const = 4 * np.sqrt(2) * M

    def ball(shape):
        u = rng.standard_normal(shape + (d,))
        u /= np.linalg.norm(u, axis=-1, keepdims=True)
        return u * (M * rng.random(shape) ** (1.0 / d))[..., None]

    got = draws = v1 = v2 = 0
    w1 = w2 = 0.0
    batch = 20_000
    while got < n_triples:
        cs = ball((batch, k))
        step = ball((batch, k)) * (10 ** rng.uniform(-3, 0, batch))[:, None, None]
        c = cs + step
        norms = np.linalg.norm(c, axis=-1, keepdims=True)
        c = np.where(norms > M, c * M / norms, c)
        x = ball((batch,))
        draws += batch
        ds = np.einsum("bkd,bkd->bk", x[:, None] - cs, x[:, None] - cs)
        dc = np.einsum("bkd,bkd->bk", x[:, None] - c, x[:, None] - c)
        if _TIEBREAK_LARGEST:
            i = k - 1 - np.argmin(ds[:, ::-1], axis=1)
            j = k - 1 - np.argmin(dc[:, ::-1], axis=1)
        else:
            i, j = np.argmin(ds, axis=1), np.argmin(dc, axis=1)
        keep = np.flatnonzero(i != j)[: n_triples - got]
        if keep.size == 0:
            continue
        b = np.arange(batch)[keep]
        i, j = i[keep], j[keep]
        cs, c, x = cs[b], c[b], x[b]
        dist = np.sqrt(np.einsum("bkd,bkd->b", c - cs, c - cs))
        r = np.arange(len(b))
        ci, cj = c[r, i], c[r, j]
        lhs1 = np.abs(np.einsum("bd,bd->b", x - 0.5 * (ci + cj), ci - cj))
        rhs1 = const * dist
        si, sj = cs[r, i], cs[r, j]
        diff = si - sj
        dn = np.linalg.norm(diff, axis=1)
        lhs2 = np.abs(np.einsum("bd,bd->b", x - 0.5 * (si + sj), diff)) / dn
        pair = cs[:, :, None, :] - cs[:, None, :, :]
        pd = np.sqrt(np.einsum("bijd,bijd->bij", pair, pair))
        pd[:, np.arange(k), np.arange(k)] = np.inf
        B = pd.min(axis=(1, 2))
        rhs2 = const / B * dist
        v1 += int(np.sum(lhs1 > rhs1 + tol))
        v2 += int(np.sum(lhs2 > rhs2 + tol))
        w1 = max(w1, float(np.max(lhs1 / np.maximum(rhs1, 1e-300))))
        w2 = max(w2, float(np.max(lhs2 / np.maximum(rhs2, 1e-300))))
        got += len(b)
    return ClosenessAudit(got, draws, v1, v2, w1, w2)
