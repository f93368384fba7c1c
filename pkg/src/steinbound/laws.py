"""Coordinate laws for i.i.d. input vectors.

A law samples arrays of shape ``size + event_shape``. Laws with finite
support additionally expose their atoms for exact enumeration.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gamma, lgamma, exp, log

import numpy as np


class Law:
    """Base class for coordinate laws."""

    event_shape: tuple[int, ...] = ()
    name: str = "law"

    def sample(self, rng: np.random.Generator, size: tuple[int, ...]) -> np.ndarray:
        raise NotImplementedError

    def sample_sum(self, n: int, count: int, rng: np.random.Generator,
                   chunk: int = 1 << 20) -> np.ndarray:
        """Sample ``count`` sums of ``n`` i.i.d. coordinates.

        The generic path draws coordinates in chunks of roughly ``chunk``
        scalars; subclasses override it with exact shortcuts.
        """
        per = max(1, chunk // max(1, n * int(np.prod(self.event_shape, dtype=int))))
        out = np.empty((count,) + self.event_shape)
        for start in range(0, count, per):
            stop = min(count, start + per)
            out[start:stop] = self.sample(rng, (stop - start, n)).sum(axis=1)
        return out

    def norm_moment(self, q: float) -> float:
        """Exact ``E ||X_1||^q`` where known."""
        raise NotImplementedError(f"{self.name}: no closed-form moment of order {q}")

    def covariance(self) -> np.ndarray:
        """Covariance matrix of one coordinate (``1 x 1`` for scalars)."""
        raise NotImplementedError(f"{self.name}: covariance unavailable")

    @property
    def event_size(self) -> int:
        return int(np.prod(self.event_shape, dtype=int)) if self.event_shape else 1


@dataclass(frozen=True)
class FiniteLaw(Law):
    """Law with finitely many atoms.

    Parameters
    ----------
    values : array_like
        Atoms, shape ``(s,) + event_shape``.
    probs : array_like, optional
        Atom probabilities; uniform when omitted.
    """

    values: np.ndarray
    probs: np.ndarray | None = None
    name: str = "finite"

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 0 or values.shape[0] == 0:
            raise ValueError("FiniteLaw needs at least one atom")
        probs = (np.full(values.shape[0], 1.0 / values.shape[0])
                 if self.probs is None else np.asarray(self.probs, dtype=float))
        if probs.shape != (values.shape[0],) or np.any(probs < 0):
            raise ValueError("probs must be a non-negative vector matching values")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"probs sum to {probs.sum()}, expected 1")
        values.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)

    @property
    def event_shape(self) -> tuple[int, ...]:  # type: ignore[override]
        return tuple(self.values.shape[1:])

    @property
    def support_size(self) -> int:
        return int(self.values.shape[0])

    def sample(self, rng, size):
        idx = rng.choice(self.support_size, size=size, p=self.probs)
        return self.values[idx]

    def norm_moment(self, q):
        norms = np.sqrt((self.values.reshape(self.support_size, -1) ** 2).sum(axis=1))
        return float(self.probs @ norms ** q)

    def covariance(self):
        flat = self.values.reshape(self.support_size, -1)
        mean = self.probs @ flat
        centred = flat - mean
        return (centred.T * self.probs) @ centred


def bernoulli(p: float = 0.5) -> FiniteLaw:
    """Bernoulli(p) on {0, 1}."""
    return FiniteLaw(np.array([0.0, 1.0]), np.array([1.0 - p, p]), name=f"bernoulli({p})")


def uniform_atoms(*atoms: float) -> FiniteLaw:
    """Uniform law on the given scalar atoms."""
    return FiniteLaw(np.array(atoms, dtype=float), name=f"uniform{tuple(atoms)}")


@dataclass(frozen=True)
class NormalLaw(Law):
    """Standard normal scalars (``dim=None``) or standard normal vectors."""

    dim: int | None = None
    name: str = "normal"

    @property
    def event_shape(self):  # type: ignore[override]
        return () if self.dim is None else (self.dim,)

    def sample(self, rng, size):
        return rng.standard_normal(tuple(size) + self.event_shape)

    def sample_sum(self, n, count, rng, chunk=1 << 20):
        return np.sqrt(n) * rng.standard_normal((count,) + self.event_shape)

    def norm_moment(self, q):
        m = 1 if self.dim is None else self.dim
        # chi distribution moment
        return exp(0.5 * q * log(2.0) + lgamma(0.5 * (m + q)) - lgamma(0.5 * m))

    def covariance(self):
        return np.eye(1 if self.dim is None else self.dim)


@dataclass(frozen=True)
class UniformCubeLaw(Law):
    """Continuous uniform law on ``[-half_width, half_width]^dim``."""

    dim: int | None = None
    half_width: float = 1.0
    name: str = "uniform-cube"

    @property
    def event_shape(self):  # type: ignore[override]
        return () if self.dim is None else (self.dim,)

    def sample(self, rng, size):
        shape = tuple(size) + self.event_shape
        return self.half_width * (2.0 * rng.random(shape) - 1.0)

    def norm_moment(self, q):
        if self.dim not in (None, 1):
            raise NotImplementedError("closed-form norm moments only for dim 1")
        return self.half_width ** q / (q + 1.0)

    def covariance(self):
        m = 1 if self.dim is None else self.dim
        return np.eye(m) * self.half_width ** 2 / 3.0


@dataclass(frozen=True)
class CubeVertexLaw(Law):
    """Uniform law on the vertices ``{-1, 1}^dim`` of the cube.

    Sums of ``n`` draws are sampled exactly through binomial counts.
    """

    dim: int = 2
    name: str = "cube-vertex"

    @property
    def event_shape(self):  # type: ignore[override]
        return (self.dim,)

    def sample(self, rng, size):
        shape = tuple(size) + self.event_shape
        return 2.0 * rng.integers(0, 2, size=shape).astype(float) - 1.0

    def sample_sum(self, n, count, rng, chunk=1 << 20):
        return 2.0 * rng.binomial(n, 0.5, size=(count, self.dim)).astype(float) - n

    def norm_moment(self, q):
        return float(self.dim) ** (0.5 * q)

    def covariance(self):
        return np.eye(self.dim)


@dataclass(frozen=True)
class UniformBoxLaw(Law):
    """Uniform law on the centred cube of volume ``volume`` in ``R^dim``."""

    dim: int = 1
    volume: float = 1.0
    name: str = "uniform-box"

    @property
    def side(self) -> float:
        return self.volume ** (1.0 / self.dim)

    @property
    def event_shape(self):  # type: ignore[override]
        return (self.dim,)

    def sample(self, rng, size):
        shape = tuple(size) + self.event_shape
        return self.side * (rng.random(shape) - 0.5)


def unit_ball_volume(m: int) -> float:
    """Volume of the unit ball in ``R^m``."""
    return float(np.pi ** (m / 2.0) / gamma(m / 2.0 + 1.0))
