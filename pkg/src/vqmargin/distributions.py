"""Bounded source distributions: finite support, quasi-Gaussian mixtures,
cone-shaped ball mixtures and the uniform ball.

Every family is immutable after construction and validated there; sampling
takes an explicit 64-bit seed and never raises on valid objects.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np
from scipy import integrate, special

from .geometry import GeometryError, as_points


class DistributionError(ValueError):
    pass


class NoDensityError(DistributionError):
    pass


class IntegrationError(DistributionError):
    pass


def unit_ball_volume(d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def cone_cell_moment(rho: float, d: int) -> float:
    """E|X - z|^2 for the cone profile (rho - |x - z|)_+ on B(z, rho)."""
    if rho < 0 or d < 1:
        raise DistributionError("need rho >= 0 and d >= 1")
    return rho * rho * d * (d + 1) / ((d + 2) * (d + 3))


def _rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(int(seed) & 0xFFFFFFFFFFFFFFFF)


def _uniform_directions(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class FiniteSupport:
    atoms: np.ndarray
    weights: np.ndarray
    M: float

    family = "finite_support"

    def __init__(self, atoms, weights, M: float | None = None):
        a = np.asarray(atoms, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        w = np.asarray(weights, dtype=float)
        if a.ndim != 2 or len(a) == 0 or len(w) != len(a):
            raise DistributionError("atoms must be (n, d) with one weight per atom")
        if not np.all(np.isfinite(a)):
            raise DistributionError("non-finite atom")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DistributionError("weights must be positive and sum to 1")
        if len(np.unique(a, axis=0)) != len(a):
            raise DistributionError("atoms must be distinct")
        radius = float(np.max(np.linalg.norm(a, axis=1)))
        if M is None:
            M = radius
        if radius > M * (1 + 1e-12):
            raise DistributionError(f"atom outside B(0, {M})")
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "M", float(M))

    @property
    def d(self) -> int:
        return self.atoms.shape[1]

    def sample(self, n: int, seed: int) -> np.ndarray:
        rng = _rng(seed)
        idx = rng.choice(len(self.atoms), size=n, p=self.weights)
        return self.atoms[idx].copy()

    def density(self, x) -> np.ndarray:
        raise NoDensityError("finite-support distributions have no Lebesgue density")

    def to_spec(self) -> dict[str, Any]:
        return {"family": self.family, "atoms": self.atoms.tolist(),
                "weights": self.weights.tolist(), "M": self.M}


@dataclass(frozen=True, eq=False)
class UniformBall:
    M: float
    d: int

    family = "uniform_ball"

    def __post_init__(self):
        if not self.M > 0 or int(self.d) < 1:
            raise DistributionError("uniform ball needs M > 0 and d >= 1")

    def sample(self, n: int, seed: int) -> np.ndarray:
        rng = _rng(seed)
        u = _uniform_directions(rng, n, self.d)
        r = self.M * rng.random(n) ** (1.0 / self.d)
        return u * r[:, None]

    def density(self, x) -> np.ndarray:
        X = as_points(x, self.d)
        inside = np.einsum("nd,nd->n", X, X) <= self.M ** 2
        return inside / (unit_ball_volume(self.d) * self.M ** self.d)

    def to_spec(self) -> dict[str, Any]:
        return {"family": self.family, "M": self.M, "d": self.d}


@dataclass(frozen=True, eq=False)
class ConeBallDistribution:
    """Mixture of cone-shaped densities on disjoint balls of common radius.

    On ball ``i`` the density is ``mass_i * (d+1) / (V_d rho^(d+1)) * (rho - r)``
    with ``r`` the distance to the ball's center, so ball ``i`` carries exactly
    ``mass_i``.
    """
    centers: np.ndarray
    rho: float
    masses: np.ndarray
    M: float
    origin: Any = field(default=None, repr=False)

    family = "cone_ball"

    def __init__(self, centers, rho: float, masses, M: float, origin=None):
        z = np.asarray(centers, dtype=float)
        p = np.asarray(masses, dtype=float)
        if z.ndim != 2 or len(p) != len(z):
            raise DistributionError("centers must be (n, d) with one mass per ball")
        if not rho > 0:
            raise DistributionError("rho must be positive")
        if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-12:
            raise DistributionError("masses must be positive and sum to 1")
        if np.any(np.linalg.norm(z, axis=1) + rho > M * (1 + 1e-12)):
            raise GeometryError("a ball leaves B(0, M)")
        if len(z) > 1:
            diff = z[:, None, :] - z[None, :, :]
            dist = np.sqrt(np.einsum("ijd,ijd->ij", diff, diff))
            np.fill_diagonal(dist, np.inf)
            if dist.min() <= 2 * rho:
                raise GeometryError("balls overlap")
        object.__setattr__(self, "centers", z)
        object.__setattr__(self, "rho", float(rho))
        object.__setattr__(self, "masses", p)
        object.__setattr__(self, "M", float(M))
        object.__setattr__(self, "origin", origin)

    @property
    def d(self) -> int:
        return self.centers.shape[1]

    @property
    def cell_moment(self) -> float:
        return cone_cell_moment(self.rho, self.d)

    def standard_offsets(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draws from the cone profile on B(0, rho).

        The radius has density proportional to (rho - r) r^(d-1), i.e.
        r / rho ~ Beta(d, 2).
        """
        r = self.rho * rng.beta(self.d, 2.0, size=n)
        return _uniform_directions(rng, n, self.d) * r[:, None]

    def sample(self, n: int, seed: int) -> np.ndarray:
        rng = _rng(seed)
        ball = rng.choice(len(self.masses), size=n, p=self.masses)
        return self.centers[ball] + self.standard_offsets(n, rng)

    def sample_labeled(self, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
        rng = _rng(seed)
        ball = rng.choice(len(self.masses), size=n, p=self.masses)
        return self.centers[ball] + self.standard_offsets(n, rng), ball

    def density(self, x) -> np.ndarray:
        X = as_points(x, self.d)
        out = np.zeros(X.shape[0])
        scale = (self.d + 1) / (unit_ball_volume(self.d) * self.rho ** (self.d + 1))
        for z, p in zip(self.centers, self.masses):
            r = np.linalg.norm(X - z, axis=1)
            out += p * scale * np.clip(self.rho - r, 0.0, None)
        return out

    def to_spec(self) -> dict[str, Any]:
        return {"family": self.family, "centers": self.centers.tolist(), "rho": self.rho,
                "masses": self.masses.tolist(), "M": self.M}


@dataclass(frozen=True, eq=False)
class QuasiGaussianMixture:
    """Planar Gaussian mixture with common scale, truncated to B(0, M).

    Component ``i`` is renormalized by ``N_i``, its Gaussian mass inside the
    support ball, so component ``i`` carries exactly weight ``theta_i``.
    """
    means: np.ndarray
    sigma: float
    weights: np.ndarray
    M: float
    N: np.ndarray
    eps_trunc: float

    family = "quasi_gaussian"
    d = 2

    @property
    def B_tilde(self) -> float:
        return min_pairwise_distance(self.means)

    def sample(self, n: int, seed: int) -> np.ndarray:
        X, _ = self.sample_labeled(n, seed)
        return X

    def sample_labeled(self, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
        rng = _rng(seed)
        comp = rng.choice(len(self.weights), size=n, p=self.weights)
        X = self.means[comp] + self.sigma * rng.standard_normal((n, 2))
        bad = np.einsum("nd,nd->n", X, X) > self.M ** 2
        # rejection from the untruncated component; acceptance >= 1 - eps_trunc
        while bad.any():
            idx = np.flatnonzero(bad)
            X[idx] = self.means[comp[idx]] + self.sigma * rng.standard_normal((len(idx), 2))
            bad[idx] = np.einsum("nd,nd->n", X[idx], X[idx]) > self.M ** 2
        return X, comp

    def density(self, x) -> np.ndarray:
        X = as_points(x, 2)
        out = np.zeros(X.shape[0])
        s2 = self.sigma ** 2
        for m, th, Ni in zip(self.means, self.weights, self.N):
            r2 = np.einsum("nd,nd->n", X - m, X - m)
            out += th / (2 * math.pi * s2 * Ni) * np.exp(-r2 / (2 * s2))
        out[np.einsum("nd,nd->n", X, X) > self.M ** 2] = 0.0
        return out

    def to_spec(self) -> dict[str, Any]:
        return {"family": self.family, "means": self.means.tolist(), "sigma": self.sigma,
                "weights": self.weights.tolist(), "M": self.M}


Distribution = Union[FiniteSupport, UniformBall, ConeBallDistribution, QuasiGaussianMixture]


def min_pairwise_distance(points) -> float:
    P = np.asarray(points, dtype=float)
    if len(P) < 2:
        return math.inf
    diff = P[:, None, :] - P[None, :, :]
    dist = np.sqrt(np.einsum("ijd,ijd->ij", diff, diff))
    np.fill_diagonal(dist, np.inf)
    return float(dist.min())


def gaussian_mass_outside_disc(mean, sigma: float, M: float) -> float:
    """P(|m + sigma Z| > M) for a standard planar Gaussian Z, |m| < M.

    In polar coordinates about the mean, the mass outside along direction theta
    is exp(-R(theta)^2 / (2 sigma^2)) with R(theta) the distance to the circle,
    which leaves a smooth one-dimensional integral.
    """
    m = np.asarray(mean, dtype=float)
    mm = float(m @ m)
    if mm >= M * M:
        raise GeometryError("mean must lie strictly inside the support disc")

    def tail(theta: float) -> float:
        proj = m[0] * math.cos(theta) + m[1] * math.sin(theta)
        R = -proj + math.sqrt(proj * proj - mm + M * M)
        return math.exp(-R * R / (2 * sigma * sigma))

    # breakpoint at the direction of the mean, where R is smallest
    phi = math.atan2(m[1], m[0]) if mm > 0 else 0.0
    pts = [(phi % (2 * math.pi))]
    val, err = integrate.quad(tail, 0.0, 2 * math.pi, points=pts, epsabs=1e-13,
                              epsrel=1e-10, limit=400)
    if err > 1e-9:
        raise IntegrationError(f"normalization not computable to 1e-8 (error estimate {err:.2e})")
    return val / (2 * math.pi)


def build_quasi_gaussian(means, sigma: float, weights, M: float) -> QuasiGaussianMixture:
    mu = np.asarray(means, dtype=float)
    th = np.asarray(weights, dtype=float)
    if mu.ndim != 2 or mu.shape[1] != 2:
        raise DistributionError("quasi-Gaussian mixtures live in R^2")
    if len(th) != len(mu) or np.any(th <= 0) or abs(th.sum() - 1.0) > 1e-12:
        raise DistributionError("weights must be positive, one per mean, summing to 1")
    if not sigma > 0 or not M > 0:
        raise DistributionError("sigma and M must be positive")
    Bt = min_pairwise_distance(mu) if len(mu) > 1 else M
    for m in mu:
        if np.linalg.norm(m) + Bt / 3 > M * (1 + 1e-12):
            raise GeometryError(f"B(m_i, B~/3) leaves B(0, M) for mean {m.tolist()}")
    N = np.array([1.0 - gaussian_mass_outside_disc(m, sigma, M) for m in mu])
    return QuasiGaussianMixture(means=mu, sigma=float(sigma), weights=th, M=float(M),
                                N=N, eps_trunc=float(1.0 - N.min()))


def sample(dist: Distribution, n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise DistributionError("n must be positive")
    return dist.sample(n, seed)


def density(dist: Distribution, x) -> np.ndarray:
    return dist.density(x)


def support_radius(dist: Distribution) -> float:
    return float(dist.M)


def cone_radial_mass(rho: float, d: int, r0: float, r1: float) -> float:
    """Fraction of a cone ball's mass at distance in [r0, r1] from its center (Beta(d, 2) CDF)."""
    a, b = np.clip([r0 / rho, r1 / rho], 0.0, 1.0)
    return float(special.betainc(d, 2, b) - special.betainc(d, 2, a))
