"""Strict JSON configuration for experiments and distribution specs.

Unknown fields are rejected everywhere so a typo in an experiment file fails
loudly instead of silently falling back to a default.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from . import minimax as mm
from .distributions import (ConeBallDistribution, FiniteSupport, UniformBall,
                            build_quasi_gaussian)

SCHEMA_VERSION = "1.0"
U64 = 2 ** 64

Command = Literal["convergence", "margin-report", "minimax-demo", "verify", "erm"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class FiniteSupportSpec(_Strict):
    family: Literal["finite_support"]
    atoms: list[list[float]]
    weights: list[float]
    M: Optional[float] = None


class UniformBallSpec(_Strict):
    family: Literal["uniform_ball"]
    M: float = Field(gt=0)
    d: int = Field(ge=1)


class ConeBallSpec(_Strict):
    family: Literal["cone_ball"]
    centers: list[list[float]]
    rho: float = Field(gt=0)
    masses: list[float]
    M: float = Field(gt=0)


class QuasiGaussianSpec(_Strict):
    family: Literal["quasi_gaussian"]
    means: list[list[float]]
    sigma: float = Field(gt=0)
    weights: list[float]
    M: float = Field(gt=0)


class AdversarialSpec(_Strict):
    """Cone-ball family with sign vector ``sigma``.

    Give ``delta`` for a fixed family, ``n`` to tune delta to one sample size,
    or neither to retune delta at every sample size of the grid.
    """
    family: Literal["adversarial"]
    k: int = Field(ge=3)
    d: int = Field(ge=1)
    M: float = Field(gt=0)
    n: Optional[int] = Field(default=None, ge=1)
    delta: Optional[float] = Field(default=None, ge=0, le=1 / 3)
    sigma: Optional[list[int]] = None

    @model_validator(mode="after")
    def _one_tuning(self):
        if self.n is not None and self.delta is not None:
            raise ValueError("give at most one of n and delta")
        return self

    @property
    def retuned(self) -> bool:
        return self.n is None and self.delta is None

    def family_for(self, n: int | None = None) -> mm.AdversarialFamily:
        if self.delta is not None:
            return mm.build_family(self.k, self.d, self.M, delta=self.delta)
        return mm.build_family(self.k, self.d, self.M, n=self.n if self.n is not None else n)

    def signs(self, m: int) -> np.ndarray:
        if self.sigma is None:
            return mm.sigma_from_tau(np.ones(m // 2, dtype=int))
        return np.asarray(self.sigma, dtype=int)


DistributionSpec = Annotated[
    Union[FiniteSupportSpec, UniformBallSpec, ConeBallSpec, QuasiGaussianSpec, AdversarialSpec],
    Field(discriminator="family"),
]


def build_distribution(spec, n: int | None = None):
    """Distribution object for a spec (``n`` picks delta for a retuned adversarial family)."""
    if isinstance(spec, FiniteSupportSpec):
        return FiniteSupport(spec.atoms, spec.weights, spec.M)
    if isinstance(spec, UniformBallSpec):
        return UniformBall(spec.M, spec.d)
    if isinstance(spec, ConeBallSpec):
        return ConeBallDistribution(spec.centers, spec.rho, spec.masses, spec.M)
    if isinstance(spec, QuasiGaussianSpec):
        return build_quasi_gaussian(spec.means, spec.sigma, spec.weights, spec.M)
    if isinstance(spec, AdversarialSpec):
        if spec.retuned and n is None:
            raise ValueError("adversarial spec without n or delta needs a sample size")
        fam = spec.family_for(n)
        return mm.p_sigma(fam, spec.signs(fam.m))
    raise TypeError(f"unknown spec {spec!r}")


class ExperimentConfig(_Strict):
    command: Command
    distribution: Optional[DistributionSpec] = None
    k: Optional[int] = Field(default=None, ge=1)
    n_grid: list[int] = Field(default_factory=list)
    reps: int = Field(default=1, ge=1)
    restarts: Union[int, Literal["all"]] = 10
    n_mc: int = Field(default=200_000, ge=100)
    master_seed: int = 0
    out_dir: str = "out"
    # margin-report
    r0: Optional[float] = Field(default=None, gt=0)
    grid_size: int = Field(default=32, ge=1)
    budget: int = Field(default=50, ge=10)
    effort: int = Field(default=20, ge=1)
    # convergence with a family lacking closed-form optima
    optimal_path: Optional[str] = None
    drop_first: bool = False
    # erm
    erm_method: Literal["multistart", "exhaustive"] = "multistart"
    # verify
    suites: Optional[list[str]] = None

    @field_validator("n_grid")
    @classmethod
    def _increasing(cls, v):
        if any(n < 1 for n in v):
            raise ValueError("sample sizes must be positive")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("n_grid must be strictly increasing")
        return v

    @field_validator("master_seed")
    @classmethod
    def _u64(cls, v):
        if not 0 <= v < U64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")
        return v

    @field_validator("restarts")
    @classmethod
    def _restarts(cls, v):
        if isinstance(v, int) and v < 1:
            raise ValueError("restarts must be positive")
        return v

    @model_validator(mode="after")
    def _needs(self):
        if self.command != "verify":
            if self.distribution is None:
                raise ValueError(f"command {self.command!r} needs a distribution")
            if self.k is None:
                raise ValueError(f"command {self.command!r} needs k")
        if self.command in ("convergence", "minimax-demo") and len(self.n_grid) < 2:
            raise ValueError("n_grid needs at least two sample sizes")
        if self.command == "erm" and not self.n_grid:
            raise ValueError("erm needs n_grid (the last entry is the sample size)")
        return self


def load_config(path: str | Path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    return ExperimentConfig.model_validate(data)
