"""Limiting covariance of the scaled intrinsic volumes of the Boolean model.

The limit is the series over ``k >= 2`` of integrals over offsets
``x_2, ..., x_k`` of ``u u^T / k!`` with ``u = P V(K ∩ (K+x_2) ∩ ... ∩ (K+x_k))``,
where ``P`` is the upper-triangular coefficient matrix from
:func:`p_coefficients`. Offsets beyond ``2R`` give empty intersections, so
each integral runs over the ball of radius ``2R`` per offset.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import comb, factorial, gamma

import numpy as np
from scipy import integrate
from scipy.stats import qmc

from .discs import intersection_measures
from .resample import ContractError


def kappa(m: int) -> float:
    """Volume of the unit ball in ``R^m``."""
    if m < 0:
        raise ContractError("dimension must be non-negative")
    return float(np.pi ** (m / 2.0) / gamma(m / 2.0 + 1.0))


def kappa_table(max_m: int) -> dict[int, float]:
    return {m: kappa(m) for m in range(max_m + 1)}


def c_coef(j: int, m: int) -> float:
    """``c_j^m = m! kappa_m / (j! kappa_j)``."""
    return factorial(m) * kappa(m) / (factorial(j) * kappa(j))


@dataclass(frozen=True)
class ConvexBody:
    """Convex body described by its intrinsic volumes ``(V_0, ..., V_d)``."""

    dim: int
    volumes: tuple[float, ...]
    kind: str = "custom"

    def __post_init__(self) -> None:
        if len(self.volumes) != self.dim + 1:
            raise ContractError(f"need {self.dim + 1} intrinsic volumes")

    @classmethod
    def ball(cls, d: int, R: float) -> "ConvexBody":
        return cls(d, tuple(ball_intrinsic_volumes(d, R)), "ball")

    @classmethod
    def interval(cls, lo: float, hi: float) -> "ConvexBody":
        if hi < lo:
            return cls.empty(1)
        return cls(1, (1.0, float(hi - lo)), "interval")

    @classmethod
    def empty(cls, d: int) -> "ConvexBody":
        return cls(d, (0.0,) * (d + 1), "empty")


def ball_intrinsic_volumes(d: int, R: float) -> np.ndarray:
    """``V_j(B_R) = C(d, j) kappa_d / kappa_{d-j} R^j``."""
    return np.array([comb(d, j) * kappa(d) / kappa(d - j) * R ** j for j in range(d + 1)])


def wills_functional(body: ConvexBody) -> float:
    """``sum_l kappa_{d-l} V_l(body)``."""
    if not isinstance(body, ConvexBody):
        raise ContractError(f"unknown body type {type(body).__name__}")
    d = body.dim
    return float(sum(kappa(d - l) * body.volumes[l] for l in range(d + 1)))


def _grain_poly(d: int, volumes: np.ndarray, top: int) -> np.ndarray:
    """Coefficients ``r! kappa_r / (d! kappa_d) V_r(K)`` for ``r = 0..top``."""
    dk = factorial(d) * kappa(d)
    return np.array([factorial(r) * kappa(r) / dk * volumes[r] for r in range(top + 1)])


def _poly_power_coef(a: np.ndarray, power: int, degree: int) -> float:
    """Coefficient of ``z^degree`` in ``(sum_r a_r z^r)^power``."""
    if degree < 0:
        return 0.0
    out = np.array([1.0])
    for _ in range(power):
        out = np.convolve(out, a)[: degree + 1]
    return float(out[degree]) if degree < out.size else 0.0


def p_coefficients(d: int, R: float | None = None, volumes=None) -> np.ndarray:
    """Upper-triangular matrix ``P[i, s]``, ``0 <= i <= s <= d``.

    Sums over compositions ``r_1 + ... + r_t = t d + i - s`` with parts in
    ``[0, d-1]`` are evaluated as coefficients of polynomial powers. The
    grain is the ball of radius ``R`` unless ``volumes`` is given.
    """
    vol = ball_intrinsic_volumes(d, R) if volumes is None else np.asarray(volumes, float)
    a = _grain_poly(d, vol, d - 1) if d >= 1 else np.zeros(0)
    pref = np.exp(-vol[d])
    P = np.zeros((d + 1, d + 1))
    for i in range(d + 1):
        P[i, i] = pref
        for s in range(i + 1, d + 1):
            acc = 0.0
            for t in range(1, s - i + 1):
                acc += (-1) ** t / factorial(t) * _poly_power_coef(a, t, t * d + i - s)
            P[i, s] = pref * c_coef(i, s) * acc
    return P


def p_tilde(d: int, s: int, l: int, i: int, volumes) -> float:
    """Crofton-type coefficient with parts ``r_m`` in ``[0, d]`` summing to ``l d - s + i``."""
    a = _grain_poly(d, np.asarray(volumes, float), d)
    return c_coef(i, s) * _poly_power_coef(a, l, l * d - s + i)


@dataclass(frozen=True)
class IdentityCheck:
    series: np.ndarray
    closed: np.ndarray
    max_error: float


def pp_identity_check(d: int, R: float, body_volumes, depth: int = 40) -> IdentityCheck:
    """Compare the alternating series with ``-sum_s V_s(L) P[i, s]`` for each ``i``.

    ``body_volumes`` are the intrinsic volumes of the test body ``L``.
    """
    kv = ball_intrinsic_volumes(d, R)
    L = np.asarray(body_volumes, float)
    P = p_coefficients(d, R)
    series = np.zeros(d + 1)
    for i in range(d + 1):
        acc = 0.0
        for l in range(1, depth + 1):
            inner = sum(p_tilde(d, s, l, i, kv) * L[s] for s in range(i, d + 1))
            acc += (-1) ** (l - 1) / factorial(l) * inner
        series[i] = acc - L[i]
    closed = -(P @ L)
    return IdentityCheck(series, closed, float(np.max(np.abs(series - closed))))


def intersection_intrinsic_volumes(d: int, R: float, offsets) -> np.ndarray:
    """``V(K ∩ (K+x_2) ∩ ... ∩ (K+x_k))`` for ``K = B(0, R)``.

    Parameters
    ----------
    offsets : array_like, shape ``batch + (k-1, d)``

    Returns
    -------
    ndarray, shape ``batch + (d+1,)``
    """
    x = np.asarray(offsets, dtype=float)
    if d == 1:
        pts = x[..., 0]
        hi = np.maximum(np.max(pts, axis=-1, initial=0.0), 0.0)
        lo = np.minimum(np.min(pts, axis=-1, initial=0.0), 0.0)
        length = np.maximum(2.0 * R - (hi - lo), 0.0)
        return np.stack([(length > 0).astype(float), length], axis=-1)
    if d == 2:
        zero = np.zeros(x.shape[:-2] + (1, 2))
        return intersection_measures(np.concatenate([zero, x], axis=-2), R)
    raise ContractError(f"intersection geometry only for d in (1, 2), got {d}")


def _ball_points(u: np.ndarray, d: int, radius: float) -> np.ndarray:
    """Map unit-cube points ``(..., d)`` to the ball of the given radius."""
    if d == 1:
        return radius * (2.0 * u - 1.0)
    if d == 2:
        r = radius * np.sqrt(u[..., 0])
        th = 2.0 * np.pi * u[..., 1]
        return np.stack([r * np.cos(th), r * np.sin(th)], axis=-1)
    raise ContractError("ball sampling only for d in (1, 2)")


@dataclass
class SigmaSeries:
    """Truncated series for the limiting covariance."""

    sigma: np.ndarray
    stderr: np.ndarray
    terms: list[np.ndarray]
    term_stderr: list[np.ndarray]
    magnitudes: list[float]
    k_max: int
    k_used: int
    mc_samples: int
    method: str
    flags: list[str] = field(default_factory=list)
    seed: str | None = None

    def to_json(self) -> str:
        return json.dumps({
            "schema": "sigma-series/1",
            "sigma": self.sigma.tolist(),
            "stderr": self.stderr.tolist(),
            "terms": {str(k + 2): t.tolist() for k, t in enumerate(self.terms)},
            "magnitudes": self.magnitudes,
            "k_max": self.k_max,
            "k_used": self.k_used,
            "mc_samples": self.mc_samples,
            "method": self.method,
            "flags": self.flags,
            "seed": self.seed,
        }, sort_keys=True)

    @property
    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.sigma + self.sigma.T))[0])


def _uniform_cube(k: int, d: int, count: int, rng: np.random.Generator, method: str,
                  groups: int) -> list[np.ndarray]:
    dim = (k - 1) * d
    per = count // groups
    out = []
    for _ in range(groups):
        if method == "qmc":
            # Sobol balance needs a power-of-two point count
            eng = qmc.Sobol(dim, scramble=True, seed=rng)
            u = eng.random_base2(max(1, int(np.log2(per))))
        else:
            u = rng.random((per, dim))
        out.append(u.reshape(len(u), k - 1, d))
    return out


def series_term(d: int, R: float, k: int, mc_samples: int, rng: np.random.Generator,
                method: str = "mc", P: np.ndarray | None = None,
                groups: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo value and stderr of the ``k``-th term of the series."""
    if k < 2:
        raise ContractError("series terms start at k = 2")
    P = p_coefficients(d, R) if P is None else P
    vol = (kappa(d) * (2.0 * R) ** d) ** (k - 1) / factorial(k)
    means = []
    for u in _uniform_cube(k, d, mc_samples, rng, method, groups):
        v = intersection_intrinsic_volumes(d, R, _ball_points(u, d, 2.0 * R))
        w = v @ P.T
        means.append(np.einsum("mi,mj->ij", w, w) / len(w))
    means = np.array(means) * vol
    est = means.mean(axis=0)
    se = means.std(axis=0, ddof=1) / np.sqrt(groups)
    return est, se


def sigma_series(d: int, R: float, k_max: int, mc_samples: int, rng: np.random.Generator,
                 method: str = "mc", eps_rel: float = 1e-3, onset: int = 4,
                 seed_label: str | None = None) -> SigmaSeries:
    """Truncated Monte Carlo evaluation of the limiting covariance.

    Terms are added from ``k = 2`` until a term's largest entry falls below
    ``eps_rel`` times the running total's largest entry or ``k_max`` is
    reached. ``method`` is ``"mc"`` (pseudo-random) or ``"qmc"`` (scrambled
    Sobol points); stderr comes from eight independent groups either way.
    """
    if k_max < 2:
        raise ContractError("k_max must be at least 2")
    if mc_samples < 8:
        raise ContractError("mc_samples must be at least 8")
    if method not in ("mc", "qmc"):
        raise ContractError(f"unknown method {method!r}")
    P = p_coefficients(d, R)
    total = np.zeros((d + 1, d + 1))
    var = np.zeros_like(total)
    terms, ses, mags, flags = [], [], [], []
    k_used = 1
    for k in range(2, k_max + 1):
        t, se = series_term(d, R, k, mc_samples, rng, method, P)
        t = 0.5 * (t + t.T)
        terms.append(t)
        ses.append(se)
        mags.append(float(np.max(np.abs(t))))
        total += t
        var += se ** 2
        k_used = k
        if k >= onset and len(mags) >= 2 and mags[-1] > mags[-2]:
            flags.append(f"term magnitude increased at k={k}")
        if mags[-1] < eps_rel * np.max(np.abs(total)):
            break
    else:
        flags.append("k_max reached before the truncation rule")
    return SigmaSeries(total, np.sqrt(var), terms, ses, mags, k_max, k_used, mc_samples,
                       method, flags, seed_label)


# Closed forms for d = 1 ---------------------------------------------------------

def _profile_1d(R: float, r: float) -> np.ndarray:
    """``u`` for an intersection of range ``r``: ``e^{-2R} (1 - (2R - r), 2R - r)``."""
    length = 2.0 * R - r
    return np.exp(-2.0 * R) * np.array([1.0 - length, length])


def term_exact_1d(R: float, k: int) -> np.ndarray:
    """Exact ``k``-th series term at ``d = 1``.

    The offsets enter only through the range ``r`` of ``{0, x_2, ..., x_k}``,
    whose Lebesgue measure density is ``k (k-1) r^{k-2}``.
    """
    def entry(i, j):
        f = lambda r: r ** (k - 2) / factorial(k - 2) * (  # noqa: E731
            _profile_1d(R, r)[i] * _profile_1d(R, r)[j])
        return integrate.quad(f, 0.0, 2.0 * R, epsabs=1e-15, epsrel=1e-13)[0]

    out = np.array([[entry(i, j) for j in range(2)] for i in range(2)])
    return 0.5 * (out + out.T)


def sigma_partial_exact_1d(R: float, k_max: int) -> np.ndarray:
    """Exact partial sum of the series up to ``k_max`` at ``d = 1``."""
    return sum(term_exact_1d(R, k) for k in range(2, k_max + 1))


def sigma_exact_1d(R: float) -> np.ndarray:
    """Exact limit at ``d = 1``: ``int_0^{2R} e^r u(r) u(r)^T dr``."""
    def entry(i, j):
        f = lambda r: np.exp(r) * _profile_1d(R, r)[i] * _profile_1d(R, r)[j]  # noqa: E731
        return integrate.quad(f, 0.0, 2.0 * R, epsabs=1e-15, epsrel=1e-13)[0]

    out = np.array([[entry(i, j) for j in range(2)] for i in range(2)])
    return 0.5 * (out + out.T)


@dataclass(frozen=True)
class GapReport:
    entrywise: np.ndarray
    max_gap: float


def covariance_gap_report(sigma_n, sigma) -> GapReport:
    """Entrywise ``|Sigma_n - Sigma|`` and its largest entry."""
    a, b = np.asarray(sigma_n, float), np.asarray(sigma, float)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch {a.shape} vs {b.shape}")
    g = np.abs(a - b)
    return GapReport(g, float(g.max()))


def gap_exponent(ns, gaps):
    """Fitted log-log slope of the max-entry gap across an ``n`` grid."""
    from .distance import rate_fit
    return rate_fit(list(zip(ns, gaps)))
