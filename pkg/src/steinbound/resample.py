"""Coordinate resampling calculus.

Three independent copies ``X``, ``X'`` and ``X~`` of an i.i.d. input vector
are held in a :class:`SampleBatch`. Every derived input vector used by the
estimators is a *recombination*: coordinate ``i`` is taken from copy
``sources[i]`` with the codes

* ``0`` -- the original ``X``,
* ``1`` -- the resampled copy ``X'`` (subset substitution ``X^A``),
* ``2`` -- the auxiliary copy ``X~`` (the second-order operator).

Indices are 0-based throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from math import comb, lgamma, exp, log
from typing import Callable, Iterable

import numpy as np

SRC_X, SRC_XP, SRC_XT = 0, 1, 2

EXACT_CAP = 12


class ContractError(ValueError):
    """An operation was called outside its documented preconditions."""


class FunctionalError(RuntimeError):
    """A functional raised or returned an invalid value.

    ``context`` records where the failure happened (operator, indices, seed).
    """

    def __init__(self, message: str, context: dict | None = None):
        self.context = dict(context or {})
        detail = ", ".join(f"{k}={v}" for k, v in self.context.items())
        super().__init__(f"{message} [{detail}]" if detail else message)


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """Three independent input vectors of common length ``n``.

    Parameters
    ----------
    x, x_prime, x_tilde : array_like
        Arrays of shape ``(n,) + event_shape``. Copies are stored read-only,
        so views derived from a batch never alias mutable state.
    """

    x: np.ndarray
    x_prime: np.ndarray
    x_tilde: np.ndarray

    def __post_init__(self) -> None:
        x, xp, xt = (_readonly(a) for a in (self.x, self.x_prime, self.x_tilde))
        if x.ndim == 0 or x.shape != xp.shape or x.shape != xt.shape:
            raise ContractError(
                f"copies must share a shape (n, ...); got {x.shape}, {xp.shape}, {xt.shape}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "x_prime", xp)
        object.__setattr__(self, "x_tilde", xt)

    @classmethod
    def draw(cls, law, n: int, rng: np.random.Generator) -> "SampleBatch":
        """Draw ``X``, ``X'`` and ``X~`` independently from ``law``."""
        if n < 1:
            raise ContractError(f"n must be positive, got {n}")
        return cls(law.sample(rng, (n,)), law.sample(rng, (n,)), law.sample(rng, (n,)))

    @property
    def n(self) -> int:
        return int(self.x.shape[0])

    @property
    def event_shape(self) -> tuple[int, ...]:
        return tuple(self.x.shape[1:])

    def stacked(self) -> np.ndarray:
        """Array of shape ``(3, n) + event_shape`` ordered by source code."""
        return np.stack([self.x, self.x_prime, self.x_tilde])

    def recombine(self, sources) -> np.ndarray:
        """Return the recombination selecting coordinate ``i`` from ``sources[i]``."""
        src = np.asarray(sources)
        if src.shape != (self.n,) or np.any((src < 0) | (src > 2)):
            raise ContractError(f"sources must be {self.n} codes in {{0,1,2}}")
        return compose(self.x, self.x_prime, self.x_tilde, src, self.x.ndim - 1)

    def resample_subset(self, a_set: Iterable[int]) -> np.ndarray:
        """``X^A``: coordinates in ``a_set`` replaced by those of ``X'``."""
        return self.recombine(subset_sources(self.n, a_set))


def compose(x: np.ndarray, xp: np.ndarray, xt: np.ndarray, src,
            event_ndim: int = 0) -> np.ndarray:
    """Vectorised recombination.

    ``x``, ``xp`` and ``xt`` have shape ``batch + (n,) + event_shape`` (or
    broadcast to it) and ``src`` broadcasts to ``batch + (n,)``.
    """
    src = np.asarray(src)
    s = src.reshape(src.shape + (1,) * event_ndim)
    return np.where(s == SRC_X, x, np.where(s == SRC_XP, xp, xt))


def subset_sources(n: int, a_set: Iterable[int]) -> np.ndarray:
    """Source codes of ``X^A``."""
    src = np.zeros(n, dtype=np.int8)
    for a in a_set:
        a = int(a)
        if not 0 <= a < n:
            raise ContractError(f"index {a} out of range for n={n}")
        src[a] = SRC_XP
    return src


def resample_subset(batch: SampleBatch, a_set: Iterable[int]) -> np.ndarray:
    """``X^A`` as a fresh array; ``batch`` is left untouched."""
    return batch.resample_subset(a_set)


@dataclass(frozen=True)
class Functional:
    """A statistic ``f`` of an input vector with values in ``R^dim_out``.

    Parameters
    ----------
    fn : callable
        Vectorised evaluation. Receives an array of shape
        ``batch + (n,) + event_shape`` and returns ``batch + (dim_out,)``
        (a trailing axis of length one may be omitted when ``dim_out == 1``).
    dim_out : int
        Output dimension.
    event_ndim : int
        Number of trailing axes describing one coordinate (0 for scalars).
    symmetric : bool
        Declares invariance under coordinate permutations.
    zero_tol : float
        Relative tolerance of the zero test used for second-order
        differences; ``0`` means an exact test.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    dim_out: int
    event_ndim: int = 0
    symmetric: bool = False
    zero_tol: float = 0.0
    name: str = "functional"

    def __post_init__(self) -> None:
        if self.dim_out < 1:
            raise ContractError("dim_out must be positive")
        if self.zero_tol < 0:
            raise ContractError("zero_tol must be non-negative")

    def __call__(self, x, context: dict | None = None) -> np.ndarray:
        x = np.asarray(x)
        batch_shape = x.shape[: x.ndim - 1 - self.event_ndim]
        try:
            out = np.asarray(self.fn(x), dtype=float)
        except Exception as exc:  # noqa: BLE001 - re-raised with context
            raise FunctionalError(f"{self.name} failed: {exc}", context) from exc
        if out.shape == batch_shape and self.dim_out == 1:
            out = out[..., None]
        if out.shape != batch_shape + (self.dim_out,):
            raise FunctionalError(
                f"{self.name} returned shape {out.shape}, expected "
                f"{batch_shape + (self.dim_out,)}", context)
        return out

    def is_zero(self, diff: np.ndarray, scale: np.ndarray | float = 1.0) -> np.ndarray:
        """Zero test on the last axis of ``diff``."""
        if self.zero_tol == 0.0:
            return np.all(diff == 0.0, axis=-1)
        return np.max(np.abs(diff), axis=-1) <= self.zero_tol * np.maximum(scale, 1e-300)

    def scaled(self, c: float) -> "Functional":
        """The functional ``c * f``."""
        fn = self.fn
        return Functional(lambda x: c * np.asarray(fn(x), dtype=float), self.dim_out,
                          self.event_ndim, self.symmetric, self.zero_tol, f"{c}*{self.name}")


def pointwise(fn: Callable[[np.ndarray], np.ndarray], dim_out: int, event_ndim: int = 0,
              symmetric: bool = False, zero_tol: float = 0.0, name: str = "pointwise") -> Functional:
    """Wrap a single-input function into a vectorised :class:`Functional`."""

    def vec(x):
        x = np.asarray(x)
        batch = x.shape[: x.ndim - 1 - event_ndim]
        flat = x.reshape((-1,) + x.shape[len(batch):])
        out = np.array([np.atleast_1d(np.asarray(fn(row), dtype=float)) for row in flat])
        return out.reshape(batch + (dim_out,))

    return Functional(vec, dim_out, event_ndim, symmetric, zero_tol, name)


def delta_j(f: Functional, batch: SampleBatch, j: int) -> np.ndarray:
    """``Delta_j f(X) = f(X) - f(X^j)``."""
    _check_index(batch.n, j)
    views = np.stack([batch.x, batch.resample_subset([j])])
    vals = f(views, {"operator": "delta_j", "j": j})
    return vals[0] - vals[1]


def tilde_delta_i_delta_j(f: Functional, batch: SampleBatch, i: int, j: int,
                          a_set: Iterable[int] = ()) -> np.ndarray:
    """Second-order difference ``Delta~_i Delta_j f`` evaluated at ``X^A``.

    The ``X~`` substitution acts on coordinate ``i`` only when that
    coordinate is taken from ``X``; for ``i`` in ``A`` the result is zero.
    With ``i == j`` this is ``f(X^A) - f((X^A)_(j))``.
    """
    _check_index(batch.n, i)
    _check_index(batch.n, j)
    base = subset_sources(batch.n, a_set)
    srcs = second_order_sources(base, i, j)
    vals = f(np.stack([batch.recombine(s) for s in srcs]),
             {"operator": "tilde_delta_i_delta_j", "i": i, "j": j})
    return vals[0] - vals[1] - vals[2] + vals[3]


def second_order_sources(base: np.ndarray, i: int, j: int) -> list[np.ndarray]:
    """Source codes of ``Y``, ``Y^j``, ``Y_(i)`` and ``(Y_(i))^j`` for ``Y = base``."""
    y = np.array(base, dtype=np.int8)
    yj = y.copy()
    yj[j] = SRC_XP
    yi = y.copy()
    if yi[i] == SRC_X:
        yi[i] = SRC_XT
    yij = yi.copy()
    yij[j] = SRC_XP
    return [y, yj, yi, yij]


def _check_index(n: int, j: int) -> None:
    if not 0 <= int(j) < n:
        raise ContractError(f"index {j} out of range for n={n}")


def k_weight(n: int, size: int) -> Fraction | float:
    """Weight ``1 / (C(n, size) (n - size))`` of a subset of cardinality ``size``.

    Exact as a :class:`~fractions.Fraction` for ``n <= 64``; a log-space
    float beyond that.
    """
    if not 0 <= size < n:
        raise ContractError(f"subset size must lie in [0, n); got size={size}, n={n}")
    if n <= 64:
        return Fraction(1, comb(n, size) * (n - size))
    return exp(-(lgamma(n + 1) - lgamma(size + 1) - lgamma(n - size + 1)) - log(n - size))


@lru_cache(maxsize=None)
def k_weight_table(n: int) -> np.ndarray:
    """Float weights indexed by subset size ``0..n-1``."""
    table = np.array([float(k_weight(n, s)) for s in range(n)])
    table.setflags(write=False)
    return table


@dataclass(frozen=True)
class SubsetDraw:
    """A pair ``(A, j)`` with ``j`` outside ``A`` and its weight."""

    a_set: frozenset
    j: int
    weight: Fraction | float

    def __post_init__(self) -> None:
        if self.j in self.a_set:
            raise ContractError("j must not belong to A")


def sample_weighted_subset(n: int, rng: np.random.Generator) -> SubsetDraw:
    """Draw ``(A, j)`` with probability ``k_{n,A} / n``."""
    mask, j = sample_subset_masks(n, 1, rng)
    a_set = frozenset(int(a) for a in np.flatnonzero(mask[0]))
    return SubsetDraw(a_set, int(j[0]), k_weight(n, len(a_set)))


def sample_subset_masks(n: int, size: int | tuple[int, ...], rng: np.random.Generator,
                        stratify: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised draws of ``(A, j)`` with probability ``k_{n,A} / n``.

    ``|A|`` is uniform on ``{0, ..., n-1}``, ``A`` is uniform given its size
    and ``j`` is uniform outside ``A``.

    Parameters
    ----------
    n : int
        Number of coordinates.
    size : int or tuple
        Batch shape of the draws.
    rng : numpy.random.Generator
    stratify : bool
        If true, the last axis of ``size`` is treated as a group and the
        subset sizes within a group are drawn by systematic sampling. Each
        group average stays unbiased for the target expectation.

    Returns
    -------
    mask : ndarray of bool, shape ``size + (n,)``
    j : ndarray of int, shape ``size``
    """
    if n < 1:
        raise ContractError("n must be positive")
    shape = (size,) if isinstance(size, (int, np.integer)) else tuple(size)
    if stratify:
        if len(shape) == 0:
            raise ContractError("stratified draws need a group axis")
        m = shape[-1]
        u = rng.random(shape[:-1] + (1,))
        sizes = np.floor((u + np.arange(m)) / m * n).astype(np.int64)
        sizes = np.minimum(sizes, n - 1)
    else:
        sizes = rng.integers(0, n, size=shape)
    perm = np.argsort(rng.random(shape + (n,)), axis=-1)
    ranks = np.argsort(perm, axis=-1)
    mask = ranks < sizes[..., None]
    j = np.take_along_axis(perm, sizes[..., None], axis=-1)[..., 0]
    return mask, j


@dataclass(frozen=True)
class TMatrix:
    """The matrix ``T = (1/2) sum_A k_{n,A} T_A`` or an estimate of it."""

    t: np.ndarray
    n_terms: int
    mode: str
    stderr: np.ndarray | None = None


@lru_cache(maxsize=None)
def subset_source_table(n: int) -> np.ndarray:
    """Source codes of ``X^A`` for every bitmask ``A`` in ``0 .. 2^n - 1``."""
    masks = np.arange(1 << n)
    table = ((masks[:, None] >> np.arange(n)) & 1).astype(np.int8)
    table.setflags(write=False)
    return table


@lru_cache(maxsize=None)
def _popcount(n: int) -> np.ndarray:
    out = subset_source_table(n).sum(axis=1)
    out.setflags(write=False)
    return out


def t_from_table(F: np.ndarray, G: np.ndarray | None = None) -> np.ndarray:
    """Exact ``T`` from subset tables.

    ``F[..., mask, :]`` holds ``f(X^mask)``; the optional ``G`` (default
    ``F``) supplies the second factor, giving the cross term used for
    covariance decompositions. Returns an array of shape ``... + (d, d)``.
    """
    G = F if G is None else G
    size = F.shape[-2]
    n = size.bit_length() - 1
    weights = np.append(k_weight_table(n), 0.0)[_popcount(n)]
    masks = np.arange(size)
    out = np.zeros(F.shape[:-2] + (F.shape[-1], G.shape[-1]))
    for j in range(n):
        bit = 1 << j
        free = masks[(masks & bit) == 0]
        dj = F[..., 0, :] - F[..., bit, :]
        dA = G[..., free, :] - G[..., free | bit, :]
        s = np.einsum("m,...md->...d", weights[free], dA)
        out += 0.5 * dj[..., :, None] * s[..., None, :]
    return out


def t_matrix(f: Functional, batch: SampleBatch, mode: str = "exact",
             rng: np.random.Generator | None = None, reps: int | None = None,
             cap: int = EXACT_CAP) -> TMatrix:
    """The matrix ``T`` at the batch's ``(X, X')``.

    Parameters
    ----------
    mode : {"exact", "monte-carlo"}
        ``exact`` enumerates all ``(A, j)``; ``monte-carlo`` averages
        ``(n/2) Delta_j f(X) Delta_j f(X^A)^T`` over ``reps`` draws of
        ``(A, j)`` with probability ``k_{n,A}/n``.
    cap : int
        Largest ``n`` accepted in exact mode.
    """
    n = batch.n
    if mode == "exact":
        if n > cap:
            raise ContractError(f"exact T needs n <= enumeration cap {cap}; got n={n}")
        views = compose(batch.x, batch.x_prime, batch.x_tilde, subset_source_table(n),
                        batch.x.ndim - 1)
        F = f(views, {"operator": "t_matrix", "mode": mode})
        return TMatrix(t_from_table(F), n * (1 << (n - 1)), "exact")
    if mode != "monte-carlo":
        raise ContractError(f"unknown mode {mode!r}")
    if reps is None or reps < 1:
        raise ContractError("monte-carlo mode needs reps >= 1")
    if rng is None:
        raise ContractError("monte-carlo mode needs a generator")
    mask, j = sample_subset_masks(n, reps, rng)
    rows = np.arange(reps)
    src_a = mask.astype(np.int8)
    src_aj = src_a.copy()
    src_aj[rows, j] = SRC_XP
    src_j = np.zeros_like(src_a)
    src_j[rows, j] = SRC_XP
    views = compose(batch.x, batch.x_prime, batch.x_tilde,
                    np.concatenate([np.zeros((1, n), np.int8), src_j, src_a, src_aj]),
                    batch.x.ndim - 1)
    vals = f(views, {"operator": "t_matrix", "mode": mode})
    f0, fj, fa, faj = vals[0], vals[1:reps + 1], vals[reps + 1:2 * reps + 1], vals[2 * reps + 1:]
    terms = 0.5 * n * (f0 - fj)[:, :, None] * (fa - faj)[:, None, :]
    t = terms.mean(axis=0)
    se = terms.std(axis=0, ddof=1) / np.sqrt(reps) if reps > 1 else np.full_like(t, np.inf)
    return TMatrix(t, reps, "monte-carlo", se)
