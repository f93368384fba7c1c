"""Empirical distances to a Gaussian target.

The convex distance is a supremum over all convex sets and cannot be
computed. :func:`proxy_convex_distance` maximises over a finite class of
half-spaces, lower orthants or centred balls, which yields a lower bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import stats
from scipy.stats import qmc
from scipy.special import ndtr

from .bounds import SmoothnessBudget
from .resample import ContractError


@dataclass(frozen=True)
class GaussianTarget:
    """Centred Gaussian ``N(0, sigma)`` with a symmetric square root.

    Rank-deficient covariances are supported; tiny negative eigenvalues from
    round-off are clipped to zero.
    """

    sigma: np.ndarray
    sqrt_sigma: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        s = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if s.shape[0] != s.shape[1]:
            raise ContractError("sigma must be square")
        s = 0.5 * (s + s.T)
        w, v = np.linalg.eigh(s)
        if w[0] < -1e-10 * max(1.0, abs(w[-1])):
            raise ContractError(f"sigma is not positive semidefinite (min eig {w[0]:.3g})")
        root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
        for a in (s, root):
            a.setflags(write=False)
        object.__setattr__(self, "sigma", s)
        object.__setattr__(self, "sqrt_sigma", root)

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    @property
    def is_diagonal(self) -> bool:
        return bool(np.all(self.sigma == np.diag(np.diag(self.sigma))))


def sample_gaussian(target: GaussianTarget, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` rows ``sqrt_sigma z`` with ``z`` standard normal."""
    if count < 1:
        raise ContractError("count must be positive")
    return rng.standard_normal((count, target.dim)) @ target.sqrt_sigma


@dataclass(frozen=True)
class TestClass:
    """Finite family of convex sets.

    ``kind`` is ``"half-spaces"`` (``{x : u.x <= t}``; ``params`` has
    ``directions`` and ``thresholds``, where ``thresholds=None`` uses every
    sample projection), ``"rectangles"`` (lower orthants ``{x <= c}`` on a
    corner grid given per axis by ``params["levels"]``) or ``"balls"``
    (``{||x|| <= r}`` for ``params["radii"]``).
    """

    kind: str
    params: dict

    __test__ = False  # not a pytest class

    def size(self, n_samples: int | None = None) -> int:
        if self.kind == "half-spaces":
            t = self.params["thresholds"]
            per = (n_samples + 1) if t is None else len(t)
            if t is None and n_samples is None:
                raise ContractError("class size depends on the sample count")
            return len(self.params["directions"]) * per
        if self.kind == "rectangles":
            return int(np.prod([len(l) for l in self.params["levels"]]))
        if self.kind == "balls":
            return len(self.params["radii"])
        raise ContractError(f"unknown class kind {self.kind!r}")


def _directions(d: int, count: int) -> np.ndarray:
    if d == 1:
        return np.array([[1.0], [-1.0]])
    if d == 2:
        th = 2.0 * np.pi * np.arange(count) / count
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    # Halton points pushed through the normal quantile give deterministic
    # directions spread over the sphere; antipodes keep the class symmetric
    half = max(1, count // 2)
    u = qmc.Halton(d, scramble=False).random(half + 1)[1:]
    base = stats.norm.ppf(u)
    base /= np.linalg.norm(base, axis=1, keepdims=True)
    return np.concatenate([base, -base])


def halfspace_class(target: GaussianTarget, directions: int = 64,
                    thresholds: int | None = 256) -> TestClass:
    """Half-spaces along evenly spread directions.

    Thresholds sit at Gaussian quantiles of each projection; ``None`` means
    every sample projection, i.e. an exact supremum per direction.
    """
    u = _directions(target.dim, directions)
    t = None
    if thresholds is not None:
        t = stats.norm.ppf((np.arange(thresholds) + 0.5) / thresholds)
    return TestClass("half-spaces", {"directions": u, "thresholds": t})


def rectangle_class(target: GaussianTarget, corners: int = 16) -> TestClass:
    """Lower orthants on a ``corners^d`` grid of Gaussian marginal quantiles."""
    q = stats.norm.ppf((np.arange(corners) + 0.5) / corners)
    sd = np.sqrt(np.diag(target.sigma))
    return TestClass("rectangles", {"levels": [s * q for s in sd]})


def ball_class(target: GaussianTarget, radii: int = 64) -> TestClass:
    scale = np.sqrt(np.trace(target.sigma))
    return TestClass("balls", {"radii": scale * np.linspace(0.05, 3.0, radii)})


@dataclass(frozen=True)
class ProxyDistance:
    value: float
    class_size: int
    stderr: float
    argmax: int
    kind: str


def _ks_all_thresholds(p: np.ndarray, s: float) -> tuple[float, int]:
    """``sup_t |P_n(p <= t) - Phi(t/s)|`` over all ``t`` (atoms handled)."""
    v = np.sort(p)
    N = v.size
    uniq, first = np.unique(v, return_index=True)
    last = np.append(first[1:], N)
    if s > 0:
        g = ndtr(uniq / s)
    else:
        g = (uniq >= 0).astype(float)
    below, upto = first / N, last / N
    diff = np.maximum(np.abs(upto - g), np.abs(below - g))
    # far tails: the empirical CDF is 0 or 1 there
    k = int(np.argmax(diff))
    return float(diff[k]), k


def proxy_convex_distance(samples, target: GaussianTarget, test_class: TestClass,
                          rng: np.random.Generator | None = None,
                          gaussian_samples: int = 1_000_000) -> ProxyDistance:
    """Largest ``|P(W in C) - P(N in C)|`` over the class members.

    Gaussian probabilities are exact for half-spaces, for orthants when
    ``sigma`` is diagonal and for balls when ``sigma`` is a multiple of the
    identity; otherwise they come from ``gaussian_samples`` draws and the
    returned stderr is that of the maximising member.
    """
    w = np.asarray(samples, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    N = len(w)
    if N == 0:
        raise ContractError("samples are empty")
    if w.shape[1] != target.dim:
        raise ContractError(f"samples have dimension {w.shape[1]}, target {target.dim}")
    kind = test_class.kind
    se = 0.0
    if kind == "half-spaces":
        u = test_class.params["directions"]
        t = test_class.params["thresholds"]
        if len(u) == 0 or (t is not None and len(t) == 0):
            raise ContractError("empty test class")
        best, arg = -1.0, 0
        for a, ua in enumerate(u):
            p = w @ ua
            s = float(np.sqrt(max(ua @ target.sigma @ ua, 0.0)))
            if t is None:
                val, k = _ks_all_thresholds(p, s)
                idx = a * (N + 1) + k
            else:
                thr = s * t if s > 0 else t
                emp = np.searchsorted(np.sort(p), thr, side="right") / N
                g = ndtr(thr / s) if s > 0 else (thr >= 0).astype(float)
                diff = np.abs(emp - g)
                k = int(np.argmax(diff))
                val, idx = float(diff[k]), a * len(t) + k
            if val > best:
                best, arg = val, idx
        size = test_class.size(N)
    elif kind == "rectangles":
        levels = test_class.params["levels"]
        if any(len(l) == 0 for l in levels):
            raise ContractError("empty test class")
        emp = _orthant_ecdf(w, levels)
        if target.is_diagonal:
            sd = np.sqrt(np.diag(target.sigma))
            gauss = np.ones(emp.shape)
            for ax, (lv, s) in enumerate(zip(levels, sd)):
                shape = [1] * len(levels)
                shape[ax] = len(lv)
                gauss = gauss * (ndtr(lv / s) if s > 0 else (lv >= 0).astype(float)).reshape(shape)
            gse = np.zeros(emp.shape)
        else:
            rng = np.random.default_rng() if rng is None else rng
            gauss = _orthant_ecdf(sample_gaussian(target, gaussian_samples, rng), levels)
            gse = np.sqrt(gauss * (1 - gauss) / gaussian_samples)
        diff = np.abs(emp - gauss).ravel()
        arg = int(np.argmax(diff))
        best, se = float(diff[arg]), float(gse.ravel()[arg])
        size = diff.size
    elif kind == "balls":
        radii = np.asarray(test_class.params["radii"], float)
        if radii.size == 0:
            raise ContractError("empty test class")
        norms = np.sort(np.linalg.norm(w, axis=1))
        emp = np.searchsorted(norms, radii, side="right") / N
        s = target.sigma
        iso = np.allclose(s, s[0, 0] * np.eye(target.dim), rtol=0, atol=0)
        if iso and s[0, 0] > 0:
            gauss = stats.chi2.cdf(radii ** 2 / s[0, 0], target.dim)
            gse = np.zeros_like(gauss)
        else:
            rng = np.random.default_rng() if rng is None else rng
            gn = np.sort(np.linalg.norm(sample_gaussian(target, gaussian_samples, rng), axis=1))
            gauss = np.searchsorted(gn, radii, side="right") / gaussian_samples
            gse = np.sqrt(gauss * (1 - gauss) / gaussian_samples)
        diff = np.abs(emp - gauss)
        arg = int(np.argmax(diff))
        best, se = float(diff[arg]), float(gse[arg])
        size = radii.size
    else:
        raise ContractError(f"unknown class kind {kind!r}")
    return ProxyDistance(float(np.clip(best, 0.0, 1.0)), int(size), se, int(arg), kind)


def _orthant_ecdf(w: np.ndarray, levels) -> np.ndarray:
    """Fraction of rows with ``w <= c`` for every corner ``c`` of the grid."""
    d = w.shape[1]
    cells = []
    for ax in range(d):
        # cell index: number of levels strictly below the coordinate
        cells.append(np.searchsorted(levels[ax], w[:, ax], side="left"))
    shape = tuple(len(l) + 1 for l in levels)
    counts = np.bincount(np.ravel_multi_index(cells, shape), minlength=int(np.prod(shape)))
    counts = counts.reshape(shape).astype(float)
    for ax in range(d):
        counts = np.cumsum(counts, axis=ax)
    return counts[tuple(slice(0, len(l)) for l in levels)] / len(w)


def dkw_envelope(count: int, class_size: int, alpha: float = 0.05) -> float:
    """DKW-type deviation bound with a union bound over the class."""
    return float(np.sqrt(np.log(2.0 * class_size / alpha) / (2.0 * count)))


# Smooth test functions -----------------------------------------------------

# sup_t |3t - t^3| exp(-t^2/2), attained at t^2 = 3 - sqrt(6)
_T_STAR = np.sqrt(3.0 - np.sqrt(6.0))
_THIRD_DERIVATIVE_PEAK = float((3 * _T_STAR - _T_STAR ** 3) * np.exp(-_T_STAR ** 2 / 2))


@lru_cache(maxsize=1)
def _grid_third_derivative_peak() -> float:
    t = np.linspace(-10, 10, 2_000_001)
    return float(np.max(np.abs((3 * t - t ** 3) * np.exp(-t * t / 2))))


@dataclass(frozen=True)
class TestFunction:
    """Test function with derivative bounds and, optionally, its Gaussian mean."""

    fn: Callable[[np.ndarray], np.ndarray]
    budget: SmoothnessBudget
    name: str
    gaussian_mean: Callable[[np.ndarray], float] | None = None

    __test__ = False


def gaussian_bump(scale: float, dim: int) -> TestFunction:
    """``F(x) = exp(-||x||^2 / (2 scale^2))`` with certified derivative bounds.

    Along a unit direction the derivatives reduce to one-dimensional
    functions of ``t = x.h / scale``: the gradient peaks at ``1/(scale sqrt e)``,
    the Hessian operator norm at ``1/scale^2`` (at the origin, Hilbert-Schmidt
    ``sqrt(dim)/scale^2``) and the third derivative at
    ``max |3t - t^3| e^{-t^2/2} / scale^3``. A dense grid confirms the last peak.
    """
    if scale <= 0:
        raise ContractError("scale must be positive")
    peak = max(_grid_third_derivative_peak(), _THIRD_DERIVATIVE_PEAK)
    budget = SmoothnessBudget(m1=1.0 / (scale * np.sqrt(np.e)), m2=1.0 / scale ** 2,
                              m3=peak / scale ** 3, m2_tilde=np.sqrt(dim) / scale ** 2,
                              dim=dim)

    def fn(x):
        x = np.asarray(x, float)
        return np.exp(-np.sum(x * x, axis=-1) / (2 * scale ** 2))

    def mean(sigma):
        s = np.atleast_2d(sigma)
        return float(np.linalg.det(np.eye(len(s)) + s / scale ** 2) ** -0.5)

    return TestFunction(fn, budget, f"gaussian-bump({scale})", mean)


def smooth_discrepancy(samples, target: GaussianTarget, F: TestFunction,
                       rng: np.random.Generator, gaussian_samples: int | None = None,
                       exact_gaussian: bool = False) -> tuple[float, float]:
    """``|E F(W) - E F(N)|`` with a pooled two-sample stderr.

    With ``exact_gaussian`` and a test function that knows its Gaussian
    mean, only the ``W`` side is sampled.
    """
    w = np.asarray(samples, dtype=float)
    if w.ndim == 1:
        w = w[:, None]
    fw = np.asarray(F.fn(w), float)
    if not np.all(np.isfinite(fw)):
        raise ContractError(f"{F.name} returned nonfinite values")
    var = fw.var(ddof=1) / len(fw)
    if exact_gaussian and F.gaussian_mean is not None:
        g_mean = F.gaussian_mean(target.sigma)
    else:
        m = len(w) if gaussian_samples is None else gaussian_samples
        fg = np.asarray(F.fn(sample_gaussian(target, m, rng)), float)
        if not np.all(np.isfinite(fg)):
            raise ContractError(f"{F.name} returned nonfinite values")
        g_mean = fg.mean()
        var += fg.var(ddof=1) / m
    return float(abs(fw.mean() - g_mean)), float(np.sqrt(var))


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    half_width: float

    def contains(self, lo: float, hi: float) -> bool:
        return lo <= self.slope <= hi


def rate_fit(pairs, level: float = 0.95) -> RateFit:
    """Least-squares slope of ``log(value)`` against ``log(n)``.

    The half-width is the normal-theory confidence half-width at ``level``
    (Student ``t`` with ``m - 2`` degrees of freedom).
    """
    pairs = list(pairs)
    if len(pairs) < 4:
        raise ContractError("rate fit needs at least four points")
    n = np.array([p[0] for p in pairs], float)
    v = np.array([p[1] for p in pairs], float)
    if np.any(v <= 0) or np.any(n <= 0):
        raise ContractError("rate fit needs positive n and values (log undefined)")
    res = stats.linregress(np.log(n), np.log(v))
    q = stats.t.ppf(0.5 + level / 2, len(pairs) - 2)
    return RateFit(float(res.slope), float(res.intercept), float(q * res.stderr))
